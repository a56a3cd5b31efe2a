"""Execution-environment seams: clock, timer scheduler, frame transport.

Platform cores depend only on these small interfaces, so the same code
runs against wall-clock TCP in production and against the in-process
deterministic simulator in tests and campaigns.
"""

from __future__ import annotations

import logging
import re
import socket
import socketserver
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Callable, Protocol
from urllib.parse import parse_qs, urlsplit

from . import canon
from .agentcore import EndpointAddress
from .wire import DIGEST_LEN, HEADER_LEN, MAX_PAYLOAD

log = logging.getLogger(__name__)


class Clock(Protocol):
    def now(self) -> int:
        """Logical milliseconds."""


class Scheduler(Protocol):
    def schedule(self, delay_ms: int, fn: Callable[[], None]) -> None:
        """Run fn once after delay_ms."""


class Transport(Protocol):
    def request(self, to: EndpointAddress, frame: bytes,
                on_response: Callable[[bytes], None] | None) -> None:
        """One exchange: send a frame, deliver the response if one comes."""


class WallClock:
    def now(self) -> int:
        import time
        return int(time.time() * 1000)


class ThreadScheduler:
    """Timer-thread scheduler for real deployments."""

    def __init__(self):
        self._timers: set[threading.Timer] = set()
        self._lock = threading.Lock()
        self._closed = False

    def schedule(self, delay_ms: int, fn: Callable[[], None]) -> None:
        with self._lock:
            if self._closed:
                return
            timer = threading.Timer(delay_ms / 1000.0, self._run, args=(fn,))
            timer.daemon = True
            self._timers.add(timer)
            timer.start()

    def _run(self, fn: Callable[[], None]) -> None:
        try:
            fn()
        except Exception:  # timers must never kill the process
            log.exception("scheduled task failed")

    def close(self) -> None:
        with self._lock:
            self._closed = True
            timers = list(self._timers)
            self._timers.clear()
        for timer in timers:
            timer.cancel()


def read_exact(sock: socket.socket, count: int) -> bytes | None:
    buf = b""
    while len(buf) < count:
        chunk = sock.recv(count - len(buf))
        if not chunk:
            return None
        buf += chunk
    return buf


def read_frame_bytes(sock: socket.socket) -> bytes | None:
    """Read exactly one frame off a stream; None on EOF or overlong."""
    header = read_exact(sock, HEADER_LEN)
    if header is None:
        return None
    payload_len = int.from_bytes(header[6:10], "big")
    if payload_len > MAX_PAYLOAD:
        return None
    rest = read_exact(sock, payload_len + DIGEST_LEN)
    if rest is None:
        return None
    return header + rest


class TcpTransport:
    """One TCP connection per exchange; response handled on a worker thread."""

    def __init__(self, connect_timeout_s: float = 5.0, io_timeout_s: float = 30.0):
        self._connect_timeout = connect_timeout_s
        self._io_timeout = io_timeout_s

    def request(self, to: EndpointAddress, frame: bytes,
                on_response: Callable[[bytes], None] | None) -> None:
        thread = threading.Thread(target=self._exchange, args=(to, frame, on_response),
                                  daemon=True)
        thread.start()

    def request_sync(self, to: EndpointAddress, frame: bytes) -> bytes:
        with socket.create_connection((to.host, to.port), timeout=self._connect_timeout) as sock:
            sock.settimeout(self._io_timeout)
            sock.sendall(frame)
            response = read_frame_bytes(sock)
            if response is None:
                raise ConnectionError("no response frame")
            return response

    def _exchange(self, to: EndpointAddress, frame: bytes,
                  on_response: Callable[[bytes], None] | None) -> None:
        try:
            response = self.request_sync(to, frame)
        except OSError as exc:
            log.debug("exchange with %s failed: %s", to, exc)
            return
        if on_response is not None:
            try:
                on_response(response)
            except Exception:
                log.exception("response handler failed")


class FramedTcpServer:
    """Platform wire listener: one request frame in, one response frame out."""

    def __init__(self, port: int, handler: Callable[[bytes], bytes | None],
                 host: str = "0.0.0.0"):
        outer = self

        class _Handler(socketserver.BaseRequestHandler):
            def handle(self) -> None:
                frame = read_frame_bytes(self.request)
                if frame is None:
                    return
                try:
                    response = outer._handler(frame)
                except Exception:
                    log.exception("frame handler failed")
                    return
                if response is not None:
                    try:
                        self.request.sendall(response)
                    except OSError:
                        pass

        class _Server(socketserver.ThreadingTCPServer):
            allow_reuse_address = True
            daemon_threads = True

        self._handler = handler
        self._server = _Server((host, port), _Handler)
        self.port = self._server.server_address[1]
        self._thread = threading.Thread(
            target=lambda: self._server.serve_forever(poll_interval=0.05), daemon=True)

    def start(self) -> None:
        self._thread.start()

    def close(self) -> None:
        self._server.shutdown()
        self._server.server_close()


# ---------------------------------------------------------------------------
# minimal JSON-over-HTTP server with optional static assets


class ApiError(Exception):
    def __init__(self, status: int, code: str, detail: str = ""):
        super().__init__(f"{code}: {detail}" if detail else code)
        self.status = status
        self.code = code
        self.detail = detail


def http_status_for(code: str) -> int:
    if code.startswith("UNKNOWN_"):
        return 404
    if code in ("DUPLICATE_AGENT", "ALREADY_DISPATCHED", "SESSION_CLOSED",
                "DEADLINE_PASSED", "STALE_QUESTION", "NOT_EXECUTING"):
        return 409
    return 400


_CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".map": "application/json",
    ".svg": "image/svg+xml",
    ".png": "image/png",
    ".ico": "image/x-icon",
}


class JsonHttpServer:
    """Regex-routed JSON API; routes get (match, query, body_doc)."""

    def __init__(self, port: int, host: str = "127.0.0.1",
                 web_root: Path | None = None, index: str = "index.html"):
        self._routes: list[tuple[str, re.Pattern, Callable]] = []
        self._web_root = web_root
        self._index = index
        outer = self

        class _Handler(BaseHTTPRequestHandler):
            protocol_version = "HTTP/1.1"

            def log_message(self, fmt, *args):
                log.debug("http %s", fmt % args)

            def do_GET(self):
                outer._dispatch(self, "GET")

            def do_POST(self):
                outer._dispatch(self, "POST")

        self._server = ThreadingHTTPServer((host, port), _Handler)
        self.port = self._server.server_address[1]
        self._thread = threading.Thread(
            target=lambda: self._server.serve_forever(poll_interval=0.05), daemon=True)

    def route(self, method: str, pattern: str, fn: Callable) -> None:
        self._routes.append((method, re.compile(f"^{pattern}$"), fn))

    def start(self) -> None:
        self._thread.start()

    def close(self) -> None:
        self._server.shutdown()
        self._server.server_close()

    def _dispatch(self, handler: BaseHTTPRequestHandler, method: str) -> None:
        parts = urlsplit(handler.path)
        path = parts.path
        query = {k: v[-1] for k, v in parse_qs(parts.query).items()}
        for route_method, pattern, fn in self._routes:
            match = pattern.match(path)
            if route_method == method and match:
                self._invoke(handler, fn, match, query)
                return
        if method == "GET" and self._web_root is not None and self._serve_static(handler, path):
            return
        self._send(handler, 404, {"code": "NOT_FOUND", "detail": path})

    def _invoke(self, handler, fn, match, query) -> None:
        body = None
        length = int(handler.headers.get("Content-Length") or 0)
        if length:
            raw = handler.rfile.read(length)
            try:
                body = canon.decode_canonical(raw)
            except canon.CanonError:
                import json
                try:
                    body = json.loads(raw.decode("utf-8"))
                except Exception:
                    self._send(handler, 400, {"code": "MALFORMED", "detail": "bad JSON body"})
                    return
        try:
            result = fn(match, query, body)
        except ApiError as exc:
            self._send(handler, exc.status, {"code": exc.code, "detail": exc.detail})
            return
        except Exception as exc:
            code = getattr(exc, "code", None)
            if isinstance(code, str):
                detail = getattr(exc, "detail", "")
                self._send(handler, http_status_for(code), {"code": code, "detail": detail})
                return
            log.exception("handler failed")
            self._send(handler, 500, {"code": "INTERNAL", "detail": str(exc)})
            return
        if isinstance(result, tuple):
            status, payload = result
        else:
            status, payload = 200, result
        self._send(handler, status, payload)

    def _send(self, handler, status: int, payload, content_type: str = "application/json") -> None:
        if isinstance(payload, (dict, list)):
            body = canon.encode_canonical(payload)
        elif isinstance(payload, bytes):
            body = payload
        else:
            body = str(payload).encode("utf-8")
            content_type = "text/plain; charset=utf-8"
        try:
            handler.send_response(status)
            handler.send_header("Content-Type", content_type)
            handler.send_header("Content-Length", str(len(body)))
            handler.send_header("Access-Control-Allow-Origin", "*")
            handler.end_headers()
            handler.wfile.write(body)
        except (BrokenPipeError, ConnectionResetError):
            pass

    def _serve_static(self, handler, path: str) -> bool:
        assert self._web_root is not None
        rel = path.lstrip("/") or self._index
        target = (self._web_root / rel).resolve()
        try:
            target.relative_to(self._web_root.resolve())
        except ValueError:
            return False
        if target.is_dir():
            target = target / self._index
        if not target.is_file():
            return False
        content_type = _CONTENT_TYPES.get(target.suffix, "application/octet-stream")
        self._send(handler, 200, target.read_bytes(), content_type)
        return True
