"""Stationary teacher platform: test repository, exam sessions, results.

The server creates evaluation agents, pushes them to student platforms,
ingests returning agents idempotently, compiles a grade book and publishes
reports. It never grades an answer itself during an agent-mode exam; all
grading happened on the student hosts. State changes go through an
append-only event log so a restart can replay them.
"""

from __future__ import annotations

import os
import threading
import uuid
from dataclasses import dataclass
from pathlib import Path
from statistics import median
from typing import Callable

from . import canon, wire
from .agentcore import (
    AgentKind,
    AgentSnapshot,
    AgentStatus,
    Dispatched,
    EndpointAddress,
    HopSkipped,
    InstallStep,
    create_evaluation_agent,
    create_install_agent,
    endpoint_from_doc,
    endpoint_to_doc,
    result_from_doc,
    result_to_doc,
    snapshot_from_doc,
    snapshot_to_doc,
    step_agent,
)
from .evalengine import ExamResult, TestGraph, graph_from_doc, validate_graph
from .wire import MsgType, RetryPolicy

DEFAULT_WIRE_PORT = 7400
DEFAULT_API_PORT = 7480
INSTALL_HOP_ATTEMPTS = 5
PULL_EXAM_MS = 3_600_000

PUSH = "PUSH"
PULL = "PULL"


class ServerError(Exception):
    def __init__(self, code: str, detail: str = ""):
        super().__init__(f"{code}: {detail}" if detail else code)
        self.code = code
        self.detail = detail


@dataclass
class StudentRecord:
    agent_id: str | None
    status: AgentStatus
    last_seq: int
    error: str | None = None


@dataclass
class GradeEntry:
    agent_id: str
    result: ExamResult
    partial: bool


class SessionState:
    def __init__(self, session_id: str, test_id: str, mode: str,
                 roster: list[tuple[str, EndpointAddress]], deadline: int):
        self.session_id = session_id
        self.test_id = test_id
        self.mode = mode
        self.roster = roster
        self.deadline = deadline
        self.per_student: dict[str, StudentRecord] = {
            sid: StudentRecord(None, AgentStatus.CREATED, 0) for sid, _ in roster
        }
        self.grade_book: dict[str, GradeEntry] = {}
        self.published = False
        self.dispatched = False
        self.closed = False

    def endpoint_of(self, student_id: str) -> EndpointAddress:
        for sid, endpoint in self.roster:
            if sid == student_id:
                return endpoint
        raise ServerError("UNKNOWN_STUDENT", student_id)


# ---------------------------------------------------------------------------
# test repository


@dataclass(frozen=True)
class RepositoryReport:
    tests: dict[str, TestGraph]
    skipped: tuple[tuple[str, str], ...]  # (filename, reason)


def load_test_repository(directory: str | Path) -> RepositoryReport:
    """Load every canonical test document; invalid files are reported, not fatal."""
    root = Path(directory)
    if not root.is_dir():
        raise ServerError("IO_FAILURE", f"not a directory: {root}")
    tests: dict[str, TestGraph] = {}
    skipped: list[tuple[str, str]] = []
    for path in sorted(root.glob("*.json")):
        try:
            doc = canon.decode_canonical(path.read_bytes())
            graph = graph_from_doc(doc)
        except OSError as exc:
            skipped.append((path.name, f"IO_FAILURE: {exc}"))
            continue
        except Exception as exc:
            skipped.append((path.name, getattr(exc, "code", "MALFORMED")))
            continue
        report = validate_graph(graph)
        if not report.ok:
            skipped.append((path.name, ",".join(sorted(report.rules()))))
            continue
        if graph.test_id in tests:
            skipped.append((path.name, "DUPLICATE_TEST_ID"))
            continue
        tests[graph.test_id] = graph
    return RepositoryReport(tests, tuple(skipped))


def save_test(directory: str | Path, graph: TestGraph) -> Path:
    from .evalengine import graph_to_doc
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    path = root / f"{graph.test_id}.json"
    _atomic_write(path, canon.encode_canonical(graph_to_doc(graph)))
    return path


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# event log


class ServerStore:
    """Append-only event log; replay restores server state after a crash."""

    def __init__(self, path: Path, durable: bool = True):
        self.path = path
        self.durable = durable
        self.path.parent.mkdir(parents=True, exist_ok=True)

    def append(self, event: dict) -> None:
        line = canon.encode_canonical(event) + b"\n"
        with open(self.path, "ab") as fh:
            fh.write(line)
            if self.durable:
                fh.flush()
                os.fsync(fh.fileno())

    def replay(self):
        if not self.path.exists():
            return
        with open(self.path, "rb") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    yield canon.decode_canonical(line)


# ---------------------------------------------------------------------------
# result compilation (pure function of the grade book)


def compile_results_doc(session_id: str, test_id: str, mode: str,
                        grade_book: dict[str, GradeEntry],
                        roster_ids: list[str]) -> dict:
    rows = []
    for sid in sorted(grade_book):
        entry = grade_book[sid]
        result_doc = result_to_doc(entry.result)
        rows.append({
            "student_id": sid,
            "raw_score": entry.result.raw_score,
            "max_on_path": entry.result.max_on_path,
            "percent": entry.result.percent,
            "partial": entry.partial,
            "self_assessment": mode == PULL,
            "path": [r.question_id for r in entry.result.records],
            "records": result_doc["records"],
        })
    missing = sorted(set(roster_ids) - set(grade_book))

    percents = [row["percent"] for row in rows]
    difficulty: dict[str, float] = {}
    presented: dict[str, int] = {}
    full: dict[str, int] = {}
    for row in rows:
        for record in row["records"]:
            qid = record["question_id"]
            presented[qid] = presented.get(qid, 0) + 1
            if record["points_earned"] == record["points_possible"]:
                full[qid] = full.get(qid, 0) + 1
    for qid in sorted(presented):
        difficulty[qid] = full.get(qid, 0) / presented[qid]

    aggregates = {
        "students_returned": len(rows),
        "mean_percent": (sum(percents) / len(percents)) if percents else None,
        "median_percent": float(median(percents)) if percents else None,
        "question_difficulty": difficulty,
    }
    return {
        "session_id": session_id,
        "test_id": test_id,
        "mode": mode,
        "rows": rows,
        "missing": missing,
        "aggregates": aggregates,
    }


# ---------------------------------------------------------------------------


@dataclass
class InstallTracker:
    agent_id: str
    hosts: list[EndpointAddress]
    status: str  # "IN_PROGRESS" | "COMPLETED"
    report: list[InstallStep]


class ServerCore:
    """All mutations run under one lock (single-writer semantics)."""

    def __init__(self, *, home: EndpointAddress, tests: dict[str, TestGraph],
                 data_dir: str | Path, clock, scheduler, transport,
                 policy: RetryPolicy = RetryPolicy(), seed=None,
                 durable: bool = True, known_students: set[str] | None = None,
                 install_hop_attempts: int = INSTALL_HOP_ATTEMPTS,
                 pull_exam_ms: int = PULL_EXAM_MS,
                 on_return: Callable[[str, str], None] | None = None):
        self.home = home
        self.tests = dict(tests)
        self.data_dir = Path(data_dir)
        self.clock = clock
        self.scheduler = scheduler
        self.transport = transport
        self.policy = policy
        self.seed = seed
        self.known_students = known_students
        self.install_hop_attempts = install_hop_attempts
        self.pull_exam_ms = pull_exam_ms
        self.on_return = on_return
        self.sessions: dict[str, SessionState] = {}
        self.agents: dict[str, tuple[str, str]] = {}  # agent_id -> (session_id, student_id)
        self.installs: dict[str, InstallTracker] = {}
        self._lock = threading.RLock()
        self._counter = 0
        self.store = ServerStore(self.data_dir / "server.log", durable=durable)
        self._replay()

    # -- identifiers --------------------------------------------------------

    def _new_id(self, prefix: str = "") -> str:
        if self.seed is None:
            fresh = str(uuid.uuid4())
        else:
            import random
            self._counter += 1
            rng = random.Random(f"{self.seed}/id/{self._counter}")
            fresh = str(uuid.UUID(int=rng.getrandbits(128), version=4))
        return f"{prefix}{fresh}" if prefix else fresh

    def _jitter_seed(self, agent_id: str, purpose: str):
        if self.seed is None:
            return None
        return f"{self.seed}/{purpose}/{agent_id}"

    # -- recovery ------------------------------------------------------------

    def _replay(self) -> None:
        for event in self.store.replay():
            self._apply(event, replaying=True)

    def _record(self, event: dict) -> None:
        self.store.append(event)
        self._apply(event, replaying=False)

    def _apply(self, event: dict, replaying: bool) -> None:
        kind = event["type"]
        if kind == "session_created":
            doc = event["session"]
            roster = [(sid, endpoint_from_doc(ep)) for sid, ep in doc["roster"]]
            session = SessionState(doc["session_id"], doc["test_id"], doc["mode"],
                                   roster, doc["deadline"])
            self.sessions[session.session_id] = session
        elif kind == "session_dispatched":
            session = self.sessions[event["session_id"]]
            session.dispatched = True
            for sid, agent_id in event["agents"].items():
                session.per_student[sid] = StudentRecord(agent_id, AgentStatus.IN_TRANSIT, 1)
                self.agents[agent_id] = (session.session_id, sid)
        elif kind == "student_status":
            session = self.sessions[event["session_id"]]
            record = session.per_student[event["student_id"]]
            record.status = AgentStatus(event["status"])
            record.last_seq = event["seq"]
            record.error = event.get("error")
        elif kind == "return_ingested":
            snapshot = snapshot_from_doc(event["snapshot"])
            if snapshot.kind is AgentKind.EVALUATION:
                session = self.sessions[snapshot.session_id]
                session.grade_book[snapshot.student_id] = GradeEntry(
                    snapshot.agent_id, snapshot.results, snapshot.partial)
                record = session.per_student[snapshot.student_id]
                record.status = AgentStatus.COMPLETED
                record.last_seq = snapshot.seq
            else:
                tracker = self.installs[snapshot.agent_id]
                tracker.status = "COMPLETED"
                tracker.report = list(snapshot.state)
        elif kind == "published":
            self.sessions[event["session_id"]].published = True
        elif kind == "session_closed":
            session = self.sessions[event["session_id"]]
            session.closed = True
            for sid, record in session.per_student.items():
                if record.status is not AgentStatus.COMPLETED:
                    record.status = AgentStatus.EXPIRED
        elif kind == "install_created":
            hosts = [endpoint_from_doc(ep) for ep in event["hosts"]]
            self.installs[event["agent_id"]] = InstallTracker(
                event["agent_id"], hosts, "IN_PROGRESS", [])
        elif kind == "install_progress":
            snapshot = snapshot_from_doc(event["snapshot"])
            self.installs[snapshot.agent_id].report = list(snapshot.state)
        else:
            raise ServerError("UNKNOWN_EVENT", kind)

    # -- sessions ------------------------------------------------------------

    def create_session(self, test_id: str, roster: list[tuple[str, EndpointAddress]],
                       deadline: int, mode: str = PUSH,
                       session_id: str | None = None) -> SessionState:
        with self._lock:
            if test_id not in self.tests:
                raise ServerError("UNKNOWN_TEST", test_id)
            if mode not in (PUSH, PULL):
                raise ServerError("BAD_MODE", mode)
            if mode == PUSH and not roster:
                raise ServerError("EMPTY_ROSTER")
            session_id = session_id or self._new_id("ses-")
            if session_id in self.sessions:
                raise ServerError("DUPLICATE_SESSION", session_id)
            self._record({"type": "session_created", "session": {
                "session_id": session_id, "test_id": test_id, "mode": mode,
                "deadline": deadline,
                "roster": [[sid, endpoint_to_doc(ep)] for sid, ep in roster],
            }})
            self.scheduler.schedule(
                max(0, self.policy.give_up_at(deadline) - self.clock.now()),
                lambda: self.expire_overdue(self.clock.now()))
            return self.sessions[session_id]

    def dispatch_all(self, session_id: str) -> dict[str, str]:
        with self._lock:
            session = self._session(session_id)
            if session.mode != PUSH:
                raise ServerError("WRONG_MODE", session.mode)
            if session.dispatched:
                raise ServerError("ALREADY_DISPATCHED", session_id)
            graph = self.tests[session.test_id]
            agents: dict[str, AgentSnapshot] = {}
            for sid, endpoint in session.roster:
                snapshot = create_evaluation_agent(
                    session_id, sid, graph, self.home, endpoint, session.deadline,
                    agent_id=self._new_id())
                agents[sid] = step_agent(snapshot, Dispatched())
            self._record({"type": "session_dispatched", "session_id": session_id,
                          "agents": {sid: snap.agent_id for sid, snap in agents.items()}})
            for sid, snapshot in agents.items():
                self._launch_dispatch(session, sid, snapshot)
            return {sid: AgentStatus.IN_TRANSIT.value for sid, _ in session.roster}

    def _launch_dispatch(self, session: SessionState, student_id: str,
                         snapshot: AgentSnapshot) -> None:
        def on_success(ack: dict) -> None:
            with self._lock:
                record = session.per_student[student_id]
                if session.closed or record.status in (AgentStatus.COMPLETED,
                                                       AgentStatus.EXPIRED):
                    return
                self._record({"type": "student_status", "session_id": session.session_id,
                              "student_id": student_id,
                              "status": AgentStatus.EXECUTING.value,
                              "seq": int(ack.get("seq", snapshot.seq)), "error": None})

        def on_give_up() -> None:
            with self._lock:
                record = session.per_student[student_id]
                if record.status is AgentStatus.COMPLETED or record.error:
                    return
                self._record({"type": "student_status", "session_id": session.session_id,
                              "student_id": student_id,
                              "status": AgentStatus.EXPIRED.value,
                              "seq": record.last_seq, "error": "DEADLINE_EXCEEDED"})

        def on_reject(code: str, detail: str) -> None:
            with self._lock:
                record = session.per_student[student_id]
                self._record({"type": "student_status", "session_id": session.session_id,
                              "student_id": student_id, "status": record.status.value,
                              "seq": record.last_seq, "error": f"REJECTED:{code}"})

        wire.dispatch(transport=self.transport, scheduler=self.scheduler,
                      clock=self.clock, snapshot=snapshot, policy=self.policy,
                      jitter_seed=self._jitter_seed(snapshot.agent_id, "dispatch"),
                      give_up_at=self.policy.give_up_at(snapshot.deadline),
                      on_success=on_success, on_reject=on_reject, on_give_up=on_give_up)

    def ingest_return(self, snapshot: AgentSnapshot) -> dict:
        """Record a returning agent exactly once; duplicates get the same ack."""
        with self._lock:
            if snapshot.kind is AgentKind.INSTALL:
                return self._ingest_install(snapshot)
            if snapshot.agent_id not in self.agents:
                raise ServerError("UNKNOWN_AGENT", snapshot.agent_id)
            session_id, student_id = self.agents[snapshot.agent_id]
            session = self.sessions[session_id]
            if session.closed:
                raise ServerError("SESSION_CLOSED", session_id)
            record = session.per_student[student_id]
            ack = {"agent_id": snapshot.agent_id, "seq": snapshot.seq}
            if record.status is AgentStatus.COMPLETED:
                return ack  # duplicate delivery; grade book untouched
            if snapshot.status is not AgentStatus.RETURNING or snapshot.results is None:
                raise ServerError("NOT_RETURNING", snapshot.status.value)
            self._record({"type": "return_ingested", "snapshot": snapshot_to_doc(snapshot)})
            if self.on_return is not None:
                self.on_return(session_id, student_id)
            return ack

    def _ingest_install(self, snapshot: AgentSnapshot) -> dict:
        if snapshot.agent_id not in self.installs:
            raise ServerError("UNKNOWN_AGENT", snapshot.agent_id)
        tracker = self.installs[snapshot.agent_id]
        ack = {"agent_id": snapshot.agent_id, "seq": snapshot.seq}
        if tracker.status == "COMPLETED":
            return ack
        if snapshot.status is not AgentStatus.RETURNING:
            raise ServerError("NOT_RETURNING", snapshot.status.value)
        self._record({"type": "return_ingested", "snapshot": snapshot_to_doc(snapshot)})
        return ack

    def compile_results(self, session_id: str) -> dict:
        with self._lock:
            session = self._session(session_id)
            return compile_results_doc(session.session_id, session.test_id,
                                       session.mode, session.grade_book,
                                       [sid for sid, _ in session.roster])

    def publish_results(self, session_id: str) -> Path:
        with self._lock:
            doc = self.compile_results(session_id)
            path = self.data_dir / "reports" / f"{session_id}.json"
            path.parent.mkdir(parents=True, exist_ok=True)
            _atomic_write(path, canon.encode_canonical(doc))
            if not self.sessions[session_id].published:
                self._record({"type": "published", "session_id": session_id})
            return path

    def report_bytes(self, session_id: str) -> bytes:
        path = self.data_dir / "reports" / f"{session_id}.json"
        if not path.is_file():
            raise ServerError("UNKNOWN_REPORT", session_id)
        return path.read_bytes()

    def expire_overdue(self, now: int) -> list[str]:
        """Mark agents that never returned as EXPIRED and close the session."""
        with self._lock:
            closed = []
            for session in self.sessions.values():
                if session.closed or now < self.policy.give_up_at(session.deadline):
                    continue
                self._record({"type": "session_closed", "session_id": session.session_id})
                closed.append(session.session_id)
            return closed

    # -- pull ----------------------------------------------------------------

    def handle_pull_request(self, student_id: str, test_id: str,
                            reply: EndpointAddress) -> tuple[str, str]:
        with self._lock:
            if test_id not in self.tests:
                raise ServerError("UNKNOWN_TEST", test_id)
            if self.known_students is not None and student_id not in self.known_students:
                rostered = any(sid == student_id
                               for session in self.sessions.values()
                               for sid, _ in session.roster)
                if not rostered:
                    raise ServerError("UNKNOWN_STUDENT", student_id)
            deadline = self.clock.now() + self.pull_exam_ms
            session = self.create_session(test_id, [(student_id, reply)], deadline,
                                          mode=PULL, session_id=self._new_id("pull-"))
            snapshot = create_evaluation_agent(
                session.session_id, student_id, self.tests[test_id], self.home,
                reply, deadline, agent_id=self._new_id())
            snapshot = step_agent(snapshot, Dispatched())
            self._record({"type": "session_dispatched", "session_id": session.session_id,
                          "agents": {student_id: snapshot.agent_id}})
            self._launch_dispatch(session, student_id, snapshot)
            return session.session_id, snapshot.agent_id

    # -- install -------------------------------------------------------------

    def dispatch_install(self, config_payload: dict[str, str],
                         hosts: list[EndpointAddress]) -> str:
        with self._lock:
            if not hosts:
                raise ServerError("EMPTY_ITINERARY")
            snapshot = create_install_agent(config_payload, self.home, hosts,
                                            deadline=self.clock.now(),
                                            agent_id=self._new_id())
            snapshot = step_agent(snapshot, Dispatched())
            self._record({"type": "install_created", "agent_id": snapshot.agent_id,
                          "hosts": [endpoint_to_doc(ep) for ep in hosts],
                          "payload": dict(config_payload)})
            self._forward_install(snapshot)
            return snapshot.agent_id

    def _forward_install(self, snapshot: AgentSnapshot) -> None:
        """Push the agent to its next hop, skipping hops that stay unreachable."""
        if snapshot.status is AgentStatus.RETURNING:
            # every hop handled (possibly all skipped); the server is home
            with self._lock:
                self._record({"type": "return_ingested",
                              "snapshot": snapshot_to_doc(snapshot)})
            return

        def on_give_up() -> None:
            with self._lock:
                skipped = step_agent(snapshot, HopSkipped(at=self.clock.now()))
                self._record({"type": "install_progress",
                              "snapshot": snapshot_to_doc(skipped)})
                self._forward_install(skipped)

        wire.dispatch(transport=self.transport, scheduler=self.scheduler,
                      clock=self.clock, snapshot=snapshot, policy=self.policy,
                      jitter_seed=self._jitter_seed(snapshot.agent_id,
                                                    f"install{snapshot.hop_index}"),
                      give_up_at=2 ** 62, max_attempts=self.install_hop_attempts,
                      on_give_up=on_give_up, on_reject=lambda c, d: on_give_up())

    def install_view(self, agent_id: str) -> dict:
        with self._lock:
            if agent_id not in self.installs:
                raise ServerError("UNKNOWN_AGENT", agent_id)
            tracker = self.installs[agent_id]
            return {
                "agent_id": agent_id,
                "status": tracker.status,
                "report": [{"host": step.host, "port": step.port,
                            "outcome": step.outcome, "version": step.version,
                            "applied_at": step.applied_at}
                           for step in tracker.report],
            }

    # -- views ---------------------------------------------------------------

    def _session(self, session_id: str) -> SessionState:
        session = self.sessions.get(session_id)
        if session is None:
            raise ServerError("UNKNOWN_SESSION", session_id)
        return session

    def session_view(self, session_id: str) -> dict:
        with self._lock:
            session = self._session(session_id)
            return {
                "session_id": session.session_id,
                "test_id": session.test_id,
                "mode": session.mode,
                "deadline": session.deadline,
                "dispatched": session.dispatched,
                "published": session.published,
                "closed": session.closed,
                "roster": [[sid, endpoint_to_doc(ep)] for sid, ep in session.roster],
                "per_student": {
                    sid: {"agent_id": record.agent_id, "status": record.status.value,
                          "last_seq": record.last_seq, "error": record.error}
                    for sid, record in session.per_student.items()
                },
                "returned_count": len(session.grade_book),
            }

    def sessions_view(self) -> list[dict]:
        with self._lock:
            return [{"session_id": s.session_id, "test_id": s.test_id, "mode": s.mode,
                     "dispatched": s.dispatched, "published": s.published,
                     "returned_count": len(s.grade_book), "students": len(s.roster)}
                    for s in sorted(self.sessions.values(), key=lambda s: s.session_id)]

    def tests_view(self) -> list[dict]:
        with self._lock:
            return [{"test_id": graph.test_id, "title": graph.title,
                     "version": graph.version, "questions": len(graph.nodes)}
                    for graph in sorted(self.tests.values(), key=lambda g: g.test_id)]

    # -- wire ----------------------------------------------------------------

    def handle_frame(self, frame: bytes) -> bytes | None:
        try:
            msg_type, payload = wire.frame_decode(frame)
        except wire.WireError as exc:
            return wire.error_frame(exc.code, exc.detail)
        try:
            if msg_type is MsgType.PING:
                return wire.frame_encode(MsgType.PONG, payload)
            if msg_type is MsgType.RETURN:
                snapshot = snapshot_from_doc(canon.decode_canonical(payload))
                ack = self.ingest_return(snapshot)
                return wire.doc_frame(MsgType.RETURN_ACK, ack)
            if msg_type is MsgType.PULL_REQUEST:
                doc = canon.decode_canonical(payload)
                reply = endpoint_from_doc(doc.get("reply"))
                session_id, agent_id = self.handle_pull_request(
                    str(doc.get("student_id")), str(doc.get("test_id")), reply)
                return wire.doc_frame(MsgType.DISPATCH_ACK,
                                      {"agent_id": agent_id, "session_id": session_id,
                                       "seq": 1, "status": "DISPATCHING"})
            return wire.error_frame("UNSUPPORTED", msg_type.name)
        except (ServerError, canon.CanonError) as exc:
            return wire.error_frame(exc.code, exc.detail)
        except Exception as exc:
            code = getattr(exc, "code", "INTERNAL")
            return wire.error_frame(code if isinstance(code, str) else "INTERNAL",
                                    str(exc))


# ---------------------------------------------------------------------------
# HTTP admin + publication API


def attach_server_api(api, core: ServerCore) -> None:
    """Wire the documented admin endpoints onto a JsonHttpServer."""

    def parse_roster(entries) -> list[tuple[str, EndpointAddress]]:
        roster = []
        for entry in entries or []:
            sid, ep = entry[0], endpoint_from_doc(entry[1])
            roster.append((str(sid), ep))
        return roster

    def create_session(match, query, body):
        body = body or {}
        session = core.create_session(
            str(body.get("test_id")), parse_roster(body.get("roster")),
            int(body.get("deadline")), str(body.get("mode", PUSH)),
            session_id=body.get("session_id"))
        return core.session_view(session.session_id)

    def dispatch(match, query, body):
        return core.dispatch_all(match.group(1))

    def session_view(match, query, body):
        return core.session_view(match.group(1))

    def results(match, query, body):
        return 200, canon.encode_canonical(core.compile_results(match.group(1)))

    def publish(match, query, body):
        path = core.publish_results(match.group(1))
        return {"session_id": match.group(1), "published": True, "path": str(path)}

    def report(match, query, body):
        return 200, core.report_bytes(match.group(1))

    def tests(match, query, body):
        return core.tests_view()

    def sessions(match, query, body):
        return core.sessions_view()

    def install(match, query, body):
        body = body or {}
        payload = {str(k): str(v) for k, v in (body.get("config_payload") or {}).items()}
        hosts = [endpoint_from_doc(ep) for ep in body.get("hosts") or []]
        agent_id = core.dispatch_install(payload, hosts)
        return core.install_view(agent_id)

    def install_view(match, query, body):
        return core.install_view(match.group(1))

    api.route("POST", r"/sessions", create_session)
    api.route("GET", r"/sessions", sessions)
    api.route("POST", r"/sessions/([^/]+)/dispatch", dispatch)
    api.route("GET", r"/sessions/([^/]+)/results", results)
    api.route("POST", r"/sessions/([^/]+)/publish", publish)
    api.route("GET", r"/sessions/([^/]+)", session_view)
    api.route("GET", r"/reports/([^/]+)", report)
    api.route("GET", r"/tests", tests)
    api.route("POST", r"/install", install)
    api.route("GET", r"/install/([^/]+)", install_view)
