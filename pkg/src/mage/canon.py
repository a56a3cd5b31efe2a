"""Canonical JSON encoding: one byte-exact serialized form per value.

UTF-8, object keys sorted by byte order, no insignificant whitespace,
base-10 integers, NFC strings. Decoding rejects any input that is not
the canonical encoding of its own value, so byte equality of encodings
coincides with value equality and digests are meaningful.
"""

from __future__ import annotations

import json
import math
import unicodedata


class CanonError(Exception):
    """Codec failure carrying a machine-readable code."""

    def __init__(self, code: str, detail: str = ""):
        super().__init__(f"{code}: {detail}" if detail else code)
        self.code = code
        self.detail = detail


# Sorting str keys in Python orders by code point, which equals UTF-8 byte
# order; ensure_ascii=False keeps the encoding minimal and unambiguous.
_DUMP_ARGS = dict(ensure_ascii=False, sort_keys=True, separators=(",", ":"), allow_nan=False)


def encode_canonical(value) -> bytes:
    """Serialize a JSON-compatible value to its canonical bytes."""
    _check_tree(value, "$")
    try:
        return json.dumps(value, **_DUMP_ARGS).encode("utf-8")
    except (TypeError, ValueError) as exc:
        raise CanonError("UNENCODABLE", str(exc)) from exc


def decode_canonical(data: bytes):
    """Parse canonical bytes, rejecting malformed or non-canonical input."""
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CanonError("MALFORMED", f"not UTF-8: {exc}") from exc
    try:
        value = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CanonError("MALFORMED", str(exc)) from exc
    try:
        _check_tree(value, "$")
        reencoded = json.dumps(value, **_DUMP_ARGS).encode("utf-8")
    except (CanonError, TypeError, ValueError) as exc:
        raise CanonError("NON_CANONICAL", str(exc)) from exc
    if reencoded != data:
        raise CanonError("NON_CANONICAL", "input differs from the canonical encoding of its value")
    return value


def _check_tree(value, path: str) -> None:
    if isinstance(value, str):
        if not unicodedata.is_normalized("NFC", value):
            raise CanonError("NON_NFC", path)
    elif isinstance(value, bool) or value is None or isinstance(value, int):
        pass
    elif isinstance(value, float):
        if not math.isfinite(value):
            raise CanonError("NON_FINITE", path)
    elif isinstance(value, dict):
        for key, item in value.items():
            if not isinstance(key, str):
                raise CanonError("BAD_KEY", f"{path}: non-string key {key!r}")
            _check_tree(key, f"{path}.{key}")
            _check_tree(item, f"{path}.{key}")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            _check_tree(item, f"{path}[{i}]")
    else:
        raise CanonError("BAD_TYPE", f"{path}: {type(value).__name__}")
