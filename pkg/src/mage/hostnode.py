"""Student-side agent platform.

Accepts dispatched agents, runs the exam entirely locally (the server may
be unreachable for the whole sitting), persists every state change with an
atomic rename before replying, enforces the deadline, applies install
agents, and sends finished agents home with at-least-once retries.
"""

from __future__ import annotations

import os
import threading
import unicodedata
from pathlib import Path
from typing import Callable

from . import canon, wire
from .agentcore import (
    AgentKind,
    AgentSnapshot,
    AgentStatus,
    AnswerRecorded,
    Arrived,
    CodecError,
    DeadlineReached,
    EndpointAddress,
    EvalDone,
    HopDone,
    HopSkipped,
    ReturnAcked,
    decode_snapshot,
    encode_snapshot,
    step_agent,
)
from .evalengine import END, Answer, EngineError, EvalState
from .wire import MsgType, RetryPolicy

DEFAULT_WIRE_PORT = 7401
DEFAULT_API_PORT = 7481
INSTALL_HOP_ATTEMPTS = 5


class HostError(Exception):
    def __init__(self, code: str, detail: str = ""):
        super().__init__(f"{code}: {detail}" if detail else code)
        self.code = code
        self.detail = detail


class HostCore:
    """Platform state plus the local exam API consumed by the student UI."""

    def __init__(self, *, endpoint: EndpointAddress, data_dir: str | Path,
                 clock, scheduler, transport, policy: RetryPolicy = RetryPolicy(),
                 seed=None, install_hop_attempts: int = INSTALL_HOP_ATTEMPTS,
                 on_exam_started: Callable[[str], None] | None = None,
                 on_agent_completed: Callable[[str], None] | None = None):
        self.endpoint = endpoint
        self.data_dir = Path(data_dir)
        self.clock = clock
        self.scheduler = scheduler
        self.transport = transport
        self.policy = policy
        self.seed = seed
        self.install_hop_attempts = install_hop_attempts
        self.on_exam_started = on_exam_started
        self.on_agent_completed = on_agent_completed
        self.agents: dict[str, AgentSnapshot] = {}
        self.applied_config: dict[str, str] = {}
        self.config_version = 0
        self._last_install_agent = ""
        self._lock = threading.RLock()
        (self.data_dir / "agents").mkdir(parents=True, exist_ok=True)
        self._load()

    # -- persistence ---------------------------------------------------------

    def _agent_path(self, agent_id: str) -> Path:
        return self.data_dir / "agents" / f"{agent_id}.json"

    def _persist(self, snapshot: AgentSnapshot) -> None:
        try:
            path = self._agent_path(snapshot.agent_id)
            tmp = path.with_suffix(".tmp")
            with open(tmp, "wb") as fh:
                fh.write(encode_snapshot(snapshot))
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp, path)
        except OSError as exc:
            raise HostError("STORAGE_FAILURE", str(exc)) from exc
        self.agents[snapshot.agent_id] = snapshot

    def _persist_config(self) -> None:
        doc = {"applied": dict(self.applied_config), "version": self.config_version,
               "last_agent": self._last_install_agent}
        path = self.data_dir / "config.json"
        tmp = path.with_suffix(".tmp")
        with open(tmp, "wb") as fh:
            fh.write(canon.encode_canonical(doc))
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)

    def _load(self) -> None:
        config_path = self.data_dir / "config.json"
        if config_path.is_file():
            doc = canon.decode_canonical(config_path.read_bytes())
            self.applied_config = dict(doc.get("applied", {}))
            self.config_version = int(doc.get("version", 0))
            self._last_install_agent = str(doc.get("last_agent", ""))
        for path in sorted((self.data_dir / "agents").glob("*.json")):
            snapshot = decode_snapshot(path.read_bytes())
            self.agents[snapshot.agent_id] = snapshot
        for snapshot in list(self.agents.values()):
            self._resume(snapshot)

    def _resume(self, snapshot: AgentSnapshot) -> None:
        if snapshot.status is AgentStatus.EXECUTING:
            if snapshot.kind is AgentKind.EVALUATION:
                self._arm_deadline(snapshot)
            else:
                self.scheduler.schedule(0, lambda: self._apply_and_forward(snapshot.agent_id))
        elif snapshot.status is AgentStatus.RETURNING:
            self._start_return(snapshot)
        elif snapshot.status is AgentStatus.IN_TRANSIT and snapshot.kind is AgentKind.INSTALL:
            self.scheduler.schedule(0, lambda: self._forward_install(snapshot))

    # -- wire ----------------------------------------------------------------

    def handle_frame(self, frame: bytes) -> bytes | None:
        try:
            msg_type, payload = wire.frame_decode(frame)
        except wire.WireError as exc:
            return wire.error_frame(exc.code, exc.detail)
        try:
            if msg_type is MsgType.PING:
                return wire.frame_encode(MsgType.PONG, payload)
            if msg_type is MsgType.DISPATCH:
                ack = self.accept_dispatch(decode_snapshot(payload))
                return wire.doc_frame(MsgType.DISPATCH_ACK, ack)
            return wire.error_frame("UNSUPPORTED", msg_type.name)
        except (HostError, CodecError) as exc:
            return wire.error_frame(exc.code, exc.detail)

    def accept_dispatch(self, snapshot: AgentSnapshot) -> dict:
        with self._lock:
            existing = self.agents.get(snapshot.agent_id)
            if existing is not None and snapshot.seq <= existing.seq:
                # re-dispatch after a lost ack: answer with current state
                return {"agent_id": existing.agent_id, "seq": existing.seq,
                        "status": existing.status.value}
            if snapshot.kind is AgentKind.EVALUATION:
                for other in self.agents.values():
                    if (other.kind is AgentKind.EVALUATION
                            and other.status is AgentStatus.EXECUTING
                            and other.agent_id != snapshot.agent_id
                            and (other.session_id, other.student_id)
                            == (snapshot.session_id, snapshot.student_id)):
                        raise HostError("DUPLICATE_AGENT", other.agent_id)
            else:
                if snapshot.target() != self.endpoint:
                    raise HostError("WRONG_HOP",
                                    f"expected {snapshot.target()}, this is {self.endpoint}")
            if snapshot.status is not AgentStatus.IN_TRANSIT:
                raise HostError("BAD_STATUS", snapshot.status.value)
            executing = step_agent(snapshot, Arrived())
            self._persist(executing)
            if executing.kind is AgentKind.EVALUATION:
                self._arm_deadline(executing)
                if self.on_exam_started is not None:
                    self.on_exam_started(executing.agent_id)
            else:
                agent_id = executing.agent_id
                self.scheduler.schedule(0, lambda: self._apply_and_forward(agent_id))
            return {"agent_id": executing.agent_id, "seq": executing.seq,
                    "status": executing.status.value}

    # -- exam API -------------------------------------------------------------

    def _active_exam(self) -> AgentSnapshot | None:
        executing = None
        latest = None
        for snapshot in self.agents.values():
            if snapshot.kind is not AgentKind.EVALUATION:
                continue
            latest = snapshot
            if snapshot.status is AgentStatus.EXECUTING:
                executing = snapshot
        return executing or latest

    def _resolve(self, agent_id: str | None) -> AgentSnapshot:
        with self._lock:
            if agent_id is None:
                snapshot = self._active_exam()
            else:
                snapshot = self.agents.get(agent_id)
            if snapshot is None or snapshot.kind is not AgentKind.EVALUATION:
                raise HostError("UNKNOWN_AGENT", agent_id or "")
            return snapshot

    def exam_summary(self) -> dict:
        with self._lock:
            snapshot = self._active_exam()
            if snapshot is None:
                return {"active": False}
            assert isinstance(snapshot.state, EvalState)
            return {
                "active": snapshot.status is AgentStatus.EXECUTING,
                "agent_id": snapshot.agent_id,
                "session_id": snapshot.session_id,
                "student_id": snapshot.student_id,
                "status": snapshot.status.value,
                "deadline": snapshot.deadline,
                "answered_count": len(snapshot.state.answer_log),
                "partial": snapshot.partial,
            }

    def current_question(self, agent_id: str | None = None) -> dict:
        """Question view for the UI; never exposes the answer key."""
        snapshot = self._resolve(agent_id)
        assert isinstance(snapshot.state, EvalState) and snapshot.graph is not None
        if snapshot.status not in (AgentStatus.EXECUTING, AgentStatus.RETURNING,
                                   AgentStatus.COMPLETED):
            raise HostError("UNKNOWN_AGENT", snapshot.agent_id)
        if snapshot.state.current == END or snapshot.status is not AgentStatus.EXECUTING:
            return self._terminal_view(snapshot)
        node = snapshot.graph.node(snapshot.state.current)
        return {
            "agent_id": snapshot.agent_id,
            "terminal": False,
            "question": {
                "id": node.id,
                "prompt": node.prompt,
                "kind": node.kind.value,
                "choices": [[cid, text] for cid, text in node.choices],
                "points": node.points,
            },
            "answered_count": len(snapshot.state.answer_log),
            "deadline": snapshot.deadline,
        }

    def _terminal_view(self, snapshot: AgentSnapshot) -> dict:
        result = None
        if snapshot.results is not None:
            result = {"raw_score": snapshot.results.raw_score,
                      "max_on_path": snapshot.results.max_on_path,
                      "percent": snapshot.results.percent}
        return {"agent_id": snapshot.agent_id, "terminal": True,
                "status": snapshot.status.value, "partial": snapshot.partial,
                "result": result}

    def submit_answer(self, agent_id: str | None, question_id: str, payload) -> dict:
        """Grade locally, persist the new snapshot, then reply."""
        with self._lock:
            snapshot = self._resolve(agent_id)
            if snapshot.status is not AgentStatus.EXECUTING:
                if snapshot.partial:
                    raise HostError("DEADLINE_PASSED", "exam ended at the deadline")
                raise HostError("NOT_EXECUTING", snapshot.status.value)
            now = self.clock.now()
            if now >= snapshot.deadline:
                self._expire(snapshot, now)
                raise HostError("DEADLINE_PASSED", "deadline reached")
            assert isinstance(snapshot.state, EvalState)
            if snapshot.state.current != question_id:
                raise HostError("STALE_QUESTION",
                                f"current question is {snapshot.state.current}")
            answer = Answer(question_id=question_id,
                            payload=_parse_payload(payload), answered_at=now)
            try:
                stepped = step_agent(snapshot, AnswerRecorded(answer))
            except EngineError as exc:
                raise HostError(exc.code, exc.detail) from exc
            assert isinstance(stepped.state, EvalState)
            if stepped.state.current == END:
                stepped = step_agent(stepped, EvalDone())
            self._persist(stepped)  # durable before any reply
            if stepped.status is AgentStatus.RETURNING:
                self._start_return(stepped)
                return self._terminal_view(stepped)
            return self.current_question(stepped.agent_id)

    def enforce_deadline(self, now: int) -> list[str]:
        """Deadline boundary is closed: an agent expires at now == deadline."""
        with self._lock:
            expired = []
            for snapshot in list(self.agents.values()):
                if (snapshot.kind is AgentKind.EVALUATION
                        and snapshot.status is AgentStatus.EXECUTING
                        and snapshot.deadline <= now):
                    self._expire(snapshot, now)
                    expired.append(snapshot.agent_id)
            return expired

    def _expire(self, snapshot: AgentSnapshot, now: int) -> None:
        returning = step_agent(snapshot, DeadlineReached())
        self._persist(returning)
        self._start_return(returning)

    def _arm_deadline(self, snapshot: AgentSnapshot) -> None:
        delay = max(0, snapshot.deadline - self.clock.now())
        self.scheduler.schedule(delay, lambda: self.enforce_deadline(self.clock.now()))

    def exam_status(self) -> dict:
        with self._lock:
            snapshot = self._active_exam()
            if snapshot is None:
                raise HostError("UNKNOWN_AGENT", "no exam on this platform")
            assert isinstance(snapshot.state, EvalState)
            now = self.clock.now()
            terminal = snapshot.status is not AgentStatus.EXECUTING
            view = {
                "agent_id": snapshot.agent_id,
                "status": snapshot.status.value,
                "deadline": snapshot.deadline,
                "remaining_ms": max(0, snapshot.deadline - now),
                "answered_count": len(snapshot.state.answer_log),
                "terminal": terminal,
                "partial": snapshot.partial,
                "result": None,
            }
            if terminal and snapshot.results is not None:
                view["result"] = {"raw_score": snapshot.results.raw_score,
                                  "max_on_path": snapshot.results.max_on_path,
                                  "percent": snapshot.results.percent}
            return view

    # -- install agents --------------------------------------------------------

    def apply_install(self, agent_id: str) -> AgentSnapshot:
        """Merge the payload into local config and advance the itinerary."""
        with self._lock:
            snapshot = self.agents.get(agent_id)
            if snapshot is None or snapshot.kind is not AgentKind.INSTALL:
                raise HostError("UNKNOWN_AGENT", agent_id)
            if snapshot.target() != self.endpoint:
                raise HostError("WRONG_HOP", str(snapshot.target()))
            if self._last_install_agent != snapshot.agent_id:
                assert snapshot.config_payload is not None
                self.applied_config.update(snapshot.config_payload)
                self.config_version += 1
                self._last_install_agent = snapshot.agent_id
                self._persist_config()
            stepped = step_agent(snapshot, HopDone(version=self.config_version,
                                                   applied_at=self.clock.now()))
            self._persist(stepped)
            return stepped

    def _apply_and_forward(self, agent_id: str) -> None:
        stepped = self.apply_install(agent_id)
        if stepped.status is AgentStatus.RETURNING:
            self._start_return(stepped)
        else:
            self._forward_install(stepped)

    def _forward_install(self, snapshot: AgentSnapshot) -> None:
        def on_success(ack: dict) -> None:
            with self._lock:
                self._drop(snapshot.agent_id)  # next hop owns the agent now

        def on_give_up() -> None:
            with self._lock:
                current = self.agents.get(snapshot.agent_id)
                if current is None or current.seq != snapshot.seq:
                    return
                skipped = step_agent(snapshot, HopSkipped(at=self.clock.now()))
                self._persist(skipped)
                if skipped.status is AgentStatus.RETURNING:
                    self._start_return(skipped)
                else:
                    self._forward_install(skipped)

        wire.dispatch(transport=self.transport, scheduler=self.scheduler,
                      clock=self.clock, snapshot=snapshot, policy=self.policy,
                      jitter_seed=self._jitter_seed(snapshot.agent_id,
                                                    f"fwd{snapshot.hop_index}"),
                      give_up_at=2 ** 62, max_attempts=self.install_hop_attempts,
                      on_success=on_success, on_give_up=on_give_up,
                      on_reject=lambda c, d: on_give_up())

    def config_view(self) -> dict:
        with self._lock:
            return {"applied": dict(self.applied_config), "version": self.config_version}

    # -- returning home ---------------------------------------------------------

    def _jitter_seed(self, agent_id: str, purpose: str):
        if self.seed is None:
            return None
        return f"{self.seed}/{purpose}/{agent_id}"

    def _start_return(self, snapshot: AgentSnapshot) -> None:
        def on_success(ack: dict) -> None:
            with self._lock:
                current = self.agents.get(snapshot.agent_id)
                if current is None or current.status is not AgentStatus.RETURNING:
                    return
                completed = step_agent(current, ReturnAcked())
                self._persist(completed)
            if self.on_agent_completed is not None:
                self.on_agent_completed(snapshot.agent_id)

        wire.return_agent(transport=self.transport, scheduler=self.scheduler,
                          clock=self.clock, snapshot=snapshot, policy=self.policy,
                          jitter_seed=self._jitter_seed(snapshot.agent_id, "return"),
                          give_up_at=self.policy.give_up_at(snapshot.deadline),
                          on_success=on_success)

    def _drop(self, agent_id: str) -> None:
        self.agents.pop(agent_id, None)
        try:
            self._agent_path(agent_id).unlink(missing_ok=True)
        except OSError:
            pass

    # -- pull -----------------------------------------------------------------

    def request_pull(self, server: EndpointAddress, student_id: str, test_id: str,
                     timeout_s: float = 10.0) -> dict:
        """Ask the server to dispatch a self-assessment agent to this platform."""
        done = threading.Event()
        outcome: dict = {}

        def on_response(frame: bytes) -> None:
            try:
                msg_type, payload = wire.frame_decode(frame)
                doc = canon.decode_canonical(payload)
            except (wire.WireError, canon.CanonError) as exc:
                outcome.update({"accepted": False, "code": exc.code})
                done.set()
                return
            if msg_type is MsgType.ERROR:
                outcome.update({"accepted": False, "code": doc.get("code"),
                                "detail": doc.get("detail", "")})
            else:
                outcome.update({"accepted": True, "agent_id": doc.get("agent_id"),
                                "session_id": doc.get("session_id")})
            done.set()

        wire.send_pull_request(transport=self.transport, server=server,
                               student_id=student_id, test_id=test_id,
                               reply=self.endpoint, on_response=on_response)
        if not done.wait(timeout_s):
            raise HostError("PULL_TIMEOUT", str(server))
        if not outcome.get("accepted"):
            raise HostError(str(outcome.get("code", "PULL_FAILED")),
                            str(outcome.get("detail", "")))
        return outcome


def _parse_payload(payload) -> frozenset[str] | str:
    if isinstance(payload, (list, tuple, set, frozenset)):
        items = list(payload)
        if not all(isinstance(v, str) for v in items):
            raise HostError("SHAPE_MISMATCH", "choice ids must be strings")
        return frozenset(items)
    if isinstance(payload, str):
        return unicodedata.normalize("NFC", payload)
    raise HostError("SHAPE_MISMATCH", f"unsupported payload type {type(payload).__name__}")


# ---------------------------------------------------------------------------
# local student HTTP API


def attach_host_api(api, core: HostCore) -> None:
    def exam(match, query, body):
        return core.exam_summary()

    def question(match, query, body):
        return core.current_question(query.get("agent_id"))

    def answer(match, query, body):
        body = body or {}
        if "question_id" not in body or "payload" not in body:
            raise HostError("SHAPE_MISMATCH", "need question_id and payload")
        return core.submit_answer(body.get("agent_id"), str(body["question_id"]),
                                  body["payload"])

    def status(match, query, body):
        return core.exam_status()

    def pull(match, query, body):
        body = body or {}
        from .agentcore import endpoint_from_doc
        server = endpoint_from_doc(body.get("server"))
        return core.request_pull(server, str(body.get("student_id")),
                                 str(body.get("test_id")))

    def config(match, query, body):
        return core.config_view()

    api.route("GET", r"/exam", exam)
    api.route("GET", r"/exam/question", question)
    api.route("POST", r"/exam/answer", answer)
    api.route("GET", r"/exam/status", status)
    api.route("POST", r"/exam/pull", pull)
    api.route("GET", r"/config", config)
