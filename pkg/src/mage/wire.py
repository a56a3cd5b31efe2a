"""Bit-exact framed migration protocol with retry and duplicate tolerance.

Frame layout, all integers big-endian:

    magic "MAGE" | version 0x01 | msg_type | payload_len u32 | payload | sha256(payload)

Delivery is at-least-once: senders retry on a seeded exponential backoff
until a matching ack arrives, so receivers must be idempotent. Nothing is
given up before the agent deadline plus a grace window, which is what
makes intermittent connectivity survivable.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass
from enum import IntEnum
from typing import Callable

from . import canon
from .agentcore import AgentSnapshot, EndpointAddress, encode_snapshot

MAGIC = b"MAGE"
VERSION = 0x01
HEADER_LEN = 10  # magic 4 + version 1 + msg_type 1 + payload_len 4
DIGEST_LEN = 32
MAX_PAYLOAD = 16 * 1024 * 1024


class WireError(Exception):
    def __init__(self, code: str, detail: str = ""):
        super().__init__(f"{code}: {detail}" if detail else code)
        self.code = code
        self.detail = detail


class MsgType(IntEnum):
    DISPATCH = 0x01
    DISPATCH_ACK = 0x02
    RETURN = 0x03
    RETURN_ACK = 0x04
    PULL_REQUEST = 0x05
    ERROR = 0x06
    PING = 0x07
    PONG = 0x08


def frame_encode(msg_type: MsgType, payload: bytes) -> bytes:
    if len(payload) > MAX_PAYLOAD:
        raise WireError("OVERSIZE", f"{len(payload)} bytes")
    return (MAGIC + bytes((VERSION, int(msg_type)))
            + len(payload).to_bytes(4, "big")
            + payload + hashlib.sha256(payload).digest())


def frame_decode(data: bytes) -> tuple[MsgType, bytes]:
    if len(data) < HEADER_LEN + DIGEST_LEN:
        raise WireError("TRUNCATED", f"{len(data)} bytes")
    if data[:4] != MAGIC:
        raise WireError("BAD_MAGIC", data[:4].hex())
    if data[4] != VERSION:
        raise WireError("BAD_VERSION", f"0x{data[4]:02x}")
    try:
        msg_type = MsgType(data[5])
    except ValueError:
        raise WireError("UNKNOWN_TYPE", f"0x{data[5]:02x}") from None
    payload_len = int.from_bytes(data[6:10], "big")
    if payload_len > MAX_PAYLOAD:
        raise WireError("OVERSIZE", str(payload_len))
    total = HEADER_LEN + payload_len + DIGEST_LEN
    if len(data) < total:
        raise WireError("TRUNCATED", f"need {total}, got {len(data)}")
    if len(data) > total:
        raise WireError("TRAILING", f"{len(data) - total} extra bytes")
    payload = data[HEADER_LEN:HEADER_LEN + payload_len]
    if hashlib.sha256(payload).digest() != data[HEADER_LEN + payload_len:total]:
        raise WireError("BAD_DIGEST")
    return msg_type, payload


def frame_total_len(payload_len: int) -> int:
    return HEADER_LEN + payload_len + DIGEST_LEN


# ---------------------------------------------------------------------------
# payload documents


def doc_frame(msg_type: MsgType, doc: dict) -> bytes:
    return frame_encode(msg_type, canon.encode_canonical(doc))


def error_frame(code: str, detail: str = "") -> bytes:
    return doc_frame(MsgType.ERROR, {"code": code, "detail": detail})


def dispatch_frame(snapshot: AgentSnapshot) -> bytes:
    return frame_encode(MsgType.DISPATCH, encode_snapshot(snapshot))


def return_frame(snapshot: AgentSnapshot) -> bytes:
    return frame_encode(MsgType.RETURN, encode_snapshot(snapshot))


def pull_request_frame(student_id: str, test_id: str, reply: EndpointAddress) -> bytes:
    return doc_frame(MsgType.PULL_REQUEST,
                     {"student_id": student_id, "test_id": test_id,
                      "reply": {"host": reply.host, "port": reply.port}})


# ---------------------------------------------------------------------------
# retry schedule


@dataclass(frozen=True)
class RetryPolicy:
    """Exponential backoff with seeded jitter; no give-up before the
    agent deadline plus the grace window."""

    base_delay_ms: int = 1000
    factor: float = 2.0
    cap_ms: int = 60000
    jitter: float = 0.10
    grace_ms: int = 300000

    def delay_ms(self, attempt: int, rng: random.Random) -> int:
        delay = min(self.base_delay_ms * self.factor ** attempt, self.cap_ms)
        return max(1, round(delay * (1.0 + rng.uniform(-self.jitter, self.jitter))))

    def delays(self, seed, count: int) -> list[int]:
        rng = random.Random(seed)
        return [self.delay_ms(i, rng) for i in range(count)]

    def give_up_at(self, deadline: int) -> int:
        return deadline + self.grace_ms


class DeliveryJob:
    """At-least-once delivery of one frame until a matching ack.

    Re-sends the same frame on the policy schedule; the backoff window
    doubles as the per-attempt timeout. A remote ERROR frame is terminal
    (the receiver rejected the agent); silence is retried until the
    give-up time, after which on_give_up fires.
    """

    def __init__(self, *, transport, scheduler, clock, target: EndpointAddress,
                 frame: bytes, expect: MsgType, agent_id: str,
                 policy: RetryPolicy, jitter_seed, give_up_at: int,
                 on_success: Callable[[dict], None] | None = None,
                 on_reject: Callable[[str, str], None] | None = None,
                 on_give_up: Callable[[], None] | None = None,
                 max_attempts: int | None = None):
        self._transport = transport
        self._scheduler = scheduler
        self._clock = clock
        self._target = target
        self._frame = frame
        self._expect = expect
        self._agent_id = agent_id
        self._policy = policy
        self._rng = random.Random(jitter_seed)
        self._give_up_at = give_up_at
        self._on_success = on_success
        self._on_reject = on_reject
        self._on_give_up = on_give_up
        self._max_attempts = max_attempts
        self._attempt = 0
        self.done = False
        self.outcome: str | None = None

    def start(self) -> None:
        self._attempt_send()

    def _attempt_send(self) -> None:
        if self.done:
            return
        if self._max_attempts is not None and self._attempt >= self._max_attempts:
            self._finish("GIVE_UP")
            return
        if self._attempt > 0 and self._clock.now() > self._give_up_at:
            self._finish("GIVE_UP")
            return
        delay = self._policy.delay_ms(self._attempt, self._rng)
        self._attempt += 1
        self._transport.request(self._target, self._frame, self._on_response)
        self._scheduler.schedule(delay, self._attempt_send)

    def _on_response(self, frame: bytes) -> None:
        if self.done:
            return
        try:
            msg_type, payload = frame_decode(frame)
        except WireError:
            return  # corrupt response; keep retrying
        if msg_type is MsgType.ERROR:
            try:
                doc = canon.decode_canonical(payload)
                code, detail = str(doc.get("code")), str(doc.get("detail", ""))
            except canon.CanonError:
                code, detail = "UNKNOWN", ""
            self._finish("REJECTED")
            if self._on_reject is not None:
                self._on_reject(code, detail)
            return
        if msg_type is not self._expect:
            return
        try:
            doc = canon.decode_canonical(payload)
        except canon.CanonError:
            return
        if doc.get("agent_id") != self._agent_id:
            return
        self._finish("DELIVERED")
        if self._on_success is not None:
            self._on_success(doc)

    def _finish(self, outcome: str) -> None:
        self.done = True
        self.outcome = outcome
        if outcome == "GIVE_UP" and self._on_give_up is not None:
            self._on_give_up()


def dispatch(*, transport, scheduler, clock, snapshot: AgentSnapshot,
             policy: RetryPolicy, jitter_seed, give_up_at: int,
             on_success=None, on_reject=None, on_give_up=None,
             max_attempts: int | None = None) -> DeliveryJob:
    """Send an agent to the current itinerary hop until the hop acks it."""
    job = DeliveryJob(
        transport=transport, scheduler=scheduler, clock=clock,
        target=snapshot.target(), frame=dispatch_frame(snapshot),
        expect=MsgType.DISPATCH_ACK, agent_id=snapshot.agent_id,
        policy=policy, jitter_seed=jitter_seed, give_up_at=give_up_at,
        on_success=on_success, on_reject=on_reject, on_give_up=on_give_up,
        max_attempts=max_attempts)
    job.start()
    return job


def return_agent(*, transport, scheduler, clock, snapshot: AgentSnapshot,
                 policy: RetryPolicy, jitter_seed, give_up_at: int,
                 on_success=None, on_reject=None, on_give_up=None) -> DeliveryJob:
    """Deliver a returning agent home until the home platform acks it."""
    job = DeliveryJob(
        transport=transport, scheduler=scheduler, clock=clock,
        target=snapshot.home, frame=return_frame(snapshot),
        expect=MsgType.RETURN_ACK, agent_id=snapshot.agent_id,
        policy=policy, jitter_seed=jitter_seed, give_up_at=give_up_at,
        on_success=on_success, on_reject=on_reject, on_give_up=on_give_up)
    job.start()
    return job


def send_pull_request(*, transport, server: EndpointAddress, student_id: str,
                      test_id: str, reply: EndpointAddress, on_response=None) -> None:
    """One-shot self-assessment request; the agent arrives as a normal
    dispatch to the reply endpoint."""
    transport.request(server, pull_request_frame(student_id, test_id, reply),
                      on_response)
