"""Mobile-agent abstraction: snapshots, lifecycle, canonical serialization.

An agent never ships code; it is a serializable value (identity, embedded
test graph or install payload, execution state, results) that platforms
transfer as canonical bytes. Migration between machines is therefore just
the transfer of a snapshot, and every platform runs the same engine.
"""

from __future__ import annotations

import uuid
from dataclasses import dataclass, replace
from enum import Enum

from . import canon
from .evalengine import (
    END,
    Answer,
    EvalState,
    ExamResult,
    QuestionKind,
    ResultRecord,
    TestGraph,
    advance,
    finalize,
    fresh_state,
    graph_from_doc,
    graph_to_doc,
    validate_graph,
)


class AgentError(Exception):
    def __init__(self, code: str, detail: str = ""):
        super().__init__(f"{code}: {detail}" if detail else code)
        self.code = code
        self.detail = detail


class CodecError(AgentError):
    """Snapshot bytes were malformed, non-canonical, or schema-invalid."""


class AgentKind(str, Enum):
    EVALUATION = "EVALUATION"
    INSTALL = "INSTALL"


class AgentStatus(str, Enum):
    CREATED = "CREATED"
    IN_TRANSIT = "IN_TRANSIT"
    EXECUTING = "EXECUTING"
    RETURNING = "RETURNING"
    COMPLETED = "COMPLETED"
    EXPIRED = "EXPIRED"  # server-side bookkeeping only, never in a snapshot


@dataclass(frozen=True)
class EndpointAddress:
    host: str
    port: int

    def __str__(self) -> str:
        return f"{self.host}:{self.port}"


@dataclass(frozen=True)
class InstallStep:
    """Per-hop outcome recorded by an install agent."""

    host: str
    port: int
    outcome: str  # "applied" | "skipped"
    version: int | None
    applied_at: int | None


@dataclass(frozen=True)
class AgentSnapshot:
    """The serializable whole of an agent; every step yields a new value."""

    agent_id: str
    kind: AgentKind
    session_id: str
    student_id: str  # empty for INSTALL
    home: EndpointAddress
    itinerary: tuple[EndpointAddress, ...]
    hop_index: int
    deadline: int
    status: AgentStatus
    partial: bool
    seq: int
    graph: TestGraph | None = None  # EVALUATION only
    config_payload: dict[str, str] | None = None  # INSTALL only
    state: EvalState | tuple[InstallStep, ...] = ()
    results: ExamResult | None = None

    def target(self) -> EndpointAddress:
        return self.itinerary[self.hop_index]


# lifecycle events ----------------------------------------------------------


class AgentEvent:
    pass


@dataclass(frozen=True)
class Dispatched(AgentEvent):
    pass


@dataclass(frozen=True)
class Arrived(AgentEvent):
    pass


@dataclass(frozen=True)
class AnswerRecorded(AgentEvent):
    answer: Answer


@dataclass(frozen=True)
class EvalDone(AgentEvent):
    pass


@dataclass(frozen=True)
class DeadlineReached(AgentEvent):
    pass


@dataclass(frozen=True)
class HopDone(AgentEvent):
    version: int
    applied_at: int


@dataclass(frozen=True)
class HopSkipped(AgentEvent):
    at: int


@dataclass(frozen=True)
class ReturnAcked(AgentEvent):
    pass


def new_agent_id() -> str:
    return str(uuid.uuid4())


def create_evaluation_agent(session_id: str, student_id: str, graph: TestGraph,
                            home: EndpointAddress, target: EndpointAddress,
                            deadline: int, agent_id: str | None = None) -> AgentSnapshot:
    report = validate_graph(graph)
    if not report.ok:
        raise AgentError("INVALID_GRAPH", ", ".join(sorted(report.rules())))
    return AgentSnapshot(
        agent_id=agent_id or new_agent_id(),
        kind=AgentKind.EVALUATION,
        session_id=session_id,
        student_id=student_id,
        home=home,
        itinerary=(target,),
        hop_index=0,
        deadline=deadline,
        status=AgentStatus.CREATED,
        partial=False,
        seq=0,
        graph=graph,
        state=fresh_state(graph),
    )


def create_install_agent(config_payload: dict[str, str], home: EndpointAddress,
                         itinerary: list[EndpointAddress] | tuple[EndpointAddress, ...],
                         deadline: int = 0, agent_id: str | None = None) -> AgentSnapshot:
    if not itinerary:
        raise AgentError("EMPTY_ITINERARY")
    return AgentSnapshot(
        agent_id=agent_id or new_agent_id(),
        kind=AgentKind.INSTALL,
        session_id="",
        student_id="",
        home=home,
        itinerary=tuple(itinerary),
        hop_index=0,
        deadline=deadline,
        status=AgentStatus.CREATED,
        partial=False,
        seq=0,
        config_payload=dict(config_payload),
        state=(),
    )


def _illegal(snapshot: AgentSnapshot, event: AgentEvent) -> AgentError:
    return AgentError("ILLEGAL_TRANSITION",
                      f"{snapshot.status.value} + {type(event).__name__}")


def step_agent(snapshot: AgentSnapshot, event: AgentEvent) -> AgentSnapshot:
    """Pure lifecycle step; every accepted event bumps seq by one.

    CREATED -> IN_TRANSIT -> EXECUTING -> RETURNING -> COMPLETED, with
    EXECUTING looping on recorded answers (evaluation) or advancing the
    itinerary hop by hop (install).
    """
    status = snapshot.status

    if isinstance(event, Dispatched):
        if status is not AgentStatus.CREATED:
            raise _illegal(snapshot, event)
        return _bump(snapshot, status=AgentStatus.IN_TRANSIT)

    if isinstance(event, Arrived):
        if status is not AgentStatus.IN_TRANSIT:
            raise _illegal(snapshot, event)
        return _bump(snapshot, status=AgentStatus.EXECUTING)

    if isinstance(event, AnswerRecorded):
        if status is not AgentStatus.EXECUTING or snapshot.kind is not AgentKind.EVALUATION:
            raise _illegal(snapshot, event)
        assert isinstance(snapshot.state, EvalState) and snapshot.graph is not None
        if snapshot.state.current == END:
            raise _illegal(snapshot, event)
        state, _ = advance(snapshot.graph, snapshot.state, event.answer)
        return _bump(snapshot, state=state)

    if isinstance(event, (EvalDone, DeadlineReached)):
        if status is not AgentStatus.EXECUTING or snapshot.kind is not AgentKind.EVALUATION:
            raise _illegal(snapshot, event)
        assert isinstance(snapshot.state, EvalState) and snapshot.graph is not None
        partial = isinstance(event, DeadlineReached)
        results = finalize(snapshot.graph, snapshot.state, partial=partial)
        return _bump(snapshot, status=AgentStatus.RETURNING, partial=partial,
                     results=results)

    if isinstance(event, HopDone):
        if status is not AgentStatus.EXECUTING or snapshot.kind is not AgentKind.INSTALL:
            raise _illegal(snapshot, event)
        return _advance_hop(snapshot, "applied", event.version, event.applied_at)

    if isinstance(event, HopSkipped):
        if status is not AgentStatus.IN_TRANSIT or snapshot.kind is not AgentKind.INSTALL:
            raise _illegal(snapshot, event)
        return _advance_hop(snapshot, "skipped", None, event.at)

    if isinstance(event, ReturnAcked):
        if status is not AgentStatus.RETURNING:
            raise _illegal(snapshot, event)
        return _bump(snapshot, status=AgentStatus.COMPLETED)

    raise AgentError("UNKNOWN_EVENT", type(event).__name__)


def _bump(snapshot: AgentSnapshot, **changes) -> AgentSnapshot:
    return replace(snapshot, seq=snapshot.seq + 1, **changes)


def _advance_hop(snapshot: AgentSnapshot, outcome: str, version: int | None,
                 at: int | None) -> AgentSnapshot:
    hop = snapshot.itinerary[snapshot.hop_index]
    assert isinstance(snapshot.state, tuple)
    log = snapshot.state + (InstallStep(hop.host, hop.port, outcome, version, at),)
    next_hop = snapshot.hop_index + 1
    status = AgentStatus.RETURNING if next_hop == len(snapshot.itinerary) else AgentStatus.IN_TRANSIT
    return _bump(snapshot, state=log, hop_index=next_hop, status=status)


# ---------------------------------------------------------------------------
# canonical snapshot codec


def encode_snapshot(snapshot: AgentSnapshot) -> bytes:
    return canon.encode_canonical(snapshot_to_doc(snapshot))


def decode_snapshot(data: bytes) -> AgentSnapshot:
    try:
        doc = canon.decode_canonical(data)
    except canon.CanonError as exc:
        code = "MALFORMED" if exc.code == "MALFORMED" else "NON_CANONICAL"
        raise CodecError(code, exc.detail) from exc
    return snapshot_from_doc(doc)


def endpoint_to_doc(endpoint: EndpointAddress) -> dict:
    return {"host": endpoint.host, "port": endpoint.port}


def endpoint_from_doc(doc) -> EndpointAddress:
    _expect_keys(doc, {"host", "port"}, "endpoint")
    _expect(isinstance(doc["host"], str) and doc["host"] != "", "endpoint.host")
    _expect(_is_int(doc["port"]) and 1 <= doc["port"] <= 65535, "endpoint.port")
    return EndpointAddress(doc["host"], doc["port"])


def _answer_to_doc(answer: Answer) -> dict:
    if isinstance(answer.payload, frozenset):
        payload: list[str] | str = sorted(answer.payload)
    else:
        payload = answer.payload
    return {"question_id": answer.question_id, "payload": payload,
            "answered_at": answer.answered_at}


def _answer_from_doc(doc) -> Answer:
    _expect_keys(doc, {"question_id", "payload", "answered_at"}, "answer")
    _expect(isinstance(doc["question_id"], str), "answer.question_id")
    _expect(_is_int(doc["answered_at"]), "answer.answered_at")
    payload = doc["payload"]
    if isinstance(payload, list):
        _expect(all(isinstance(v, str) for v in payload), "answer.payload")
        if payload != sorted(set(payload)):
            raise CodecError("NON_CANONICAL", "answer payload must be a sorted unique list")
        payload = frozenset(payload)
    else:
        _expect(isinstance(payload, str), "answer.payload")
    return Answer(doc["question_id"], payload, doc["answered_at"])


def _eval_state_to_doc(state: EvalState) -> dict:
    return {
        "current": state.current,
        "answer_log": [{"answer": _answer_to_doc(a), "points": p}
                       for a, p in state.answer_log],
        "raw_score": state.raw_score,
        "presented": list(state.presented),
    }


def _eval_state_from_doc(doc) -> EvalState:
    _expect_keys(doc, {"current", "answer_log", "raw_score", "presented"}, "state")
    _expect(isinstance(doc["current"], str), "state.current")
    _expect(_is_int(doc["raw_score"]), "state.raw_score")
    _expect(isinstance(doc["presented"], list)
            and all(isinstance(v, str) for v in doc["presented"]), "state.presented")
    _expect(isinstance(doc["answer_log"], list), "state.answer_log")
    log = []
    for entry in doc["answer_log"]:
        _expect_keys(entry, {"answer", "points"}, "state.answer_log entry")
        _expect(_is_int(entry["points"]), "state.answer_log points")
        log.append((_answer_from_doc(entry["answer"]), entry["points"]))
    return EvalState(current=doc["current"], answer_log=tuple(log),
                     raw_score=doc["raw_score"], presented=tuple(doc["presented"]))


def _record_to_doc(record: ResultRecord) -> dict:
    normalized: list[str] | str | None
    if isinstance(record.normalized_answer, tuple):
        normalized = list(record.normalized_answer)
    else:
        normalized = record.normalized_answer
    return {
        "question_id": record.question_id,
        "normalized_answer": normalized,
        "points_earned": record.points_earned,
        "points_possible": record.points_possible,
        "answered_at": record.answered_at,
    }


def _record_from_doc(doc) -> ResultRecord:
    _expect_keys(doc, {"question_id", "normalized_answer", "points_earned",
                       "points_possible", "answered_at"}, "record")
    _expect(isinstance(doc["question_id"], str), "record.question_id")
    _expect(_is_int(doc["points_earned"]) and _is_int(doc["points_possible"]),
            "record.points")
    _expect(doc["answered_at"] is None or _is_int(doc["answered_at"]),
            "record.answered_at")
    normalized = doc["normalized_answer"]
    if isinstance(normalized, list):
        _expect(all(isinstance(v, str) for v in normalized), "record.normalized_answer")
        normalized = tuple(normalized)
    else:
        _expect(normalized is None or isinstance(normalized, str),
                "record.normalized_answer")
    return ResultRecord(doc["question_id"], normalized, doc["points_earned"],
                        doc["points_possible"], doc["answered_at"])


def result_to_doc(result: ExamResult) -> dict:
    return {
        "records": [_record_to_doc(r) for r in result.records],
        "raw_score": result.raw_score,
        "max_on_path": result.max_on_path,
        "percent": result.percent,
    }


def result_from_doc(doc) -> ExamResult:
    _expect_keys(doc, {"records", "raw_score", "max_on_path", "percent"}, "results")
    _expect(isinstance(doc["records"], list), "results.records")
    _expect(_is_int(doc["raw_score"]) and _is_int(doc["max_on_path"]), "results.scores")
    _expect(isinstance(doc["percent"], float), "results.percent")
    return ExamResult(tuple(_record_from_doc(r) for r in doc["records"]),
                      doc["raw_score"], doc["max_on_path"], doc["percent"])


def _install_step_to_doc(step: InstallStep) -> dict:
    return {"host": step.host, "port": step.port, "outcome": step.outcome,
            "version": step.version, "applied_at": step.applied_at}


def _install_step_from_doc(doc) -> InstallStep:
    _expect_keys(doc, {"host", "port", "outcome", "version", "applied_at"}, "install step")
    _expect(isinstance(doc["host"], str) and _is_int(doc["port"]), "install step host")
    _expect(doc["outcome"] in ("applied", "skipped"), "install step outcome")
    _expect(doc["version"] is None or _is_int(doc["version"]), "install step version")
    _expect(doc["applied_at"] is None or _is_int(doc["applied_at"]),
            "install step applied_at")
    return InstallStep(doc["host"], doc["port"], doc["outcome"], doc["version"],
                       doc["applied_at"])


_SNAPSHOT_KEYS = {"agent_id", "kind", "session_id", "student_id", "home", "itinerary",
                  "hop_index", "deadline", "status", "partial", "seq", "graph",
                  "config_payload", "state", "results"}


def snapshot_to_doc(snapshot: AgentSnapshot) -> dict:
    doc = {
        "agent_id": snapshot.agent_id,
        "kind": snapshot.kind.value,
        "session_id": snapshot.session_id,
        "student_id": snapshot.student_id,
        "home": endpoint_to_doc(snapshot.home),
        "itinerary": [endpoint_to_doc(e) for e in snapshot.itinerary],
        "hop_index": snapshot.hop_index,
        "deadline": snapshot.deadline,
        "status": snapshot.status.value,
        "partial": snapshot.partial,
        "seq": snapshot.seq,
    }
    if snapshot.kind is AgentKind.EVALUATION:
        assert snapshot.graph is not None and isinstance(snapshot.state, EvalState)
        doc["graph"] = graph_to_doc(snapshot.graph)
        doc["state"] = _eval_state_to_doc(snapshot.state)
        if snapshot.results is not None:
            doc["results"] = result_to_doc(snapshot.results)
    else:
        assert snapshot.config_payload is not None and isinstance(snapshot.state, tuple)
        doc["config_payload"] = dict(snapshot.config_payload)
        doc["state"] = [_install_step_to_doc(s) for s in snapshot.state]
    return doc


def snapshot_from_doc(doc) -> AgentSnapshot:
    if not isinstance(doc, dict) or not set(doc) <= _SNAPSHOT_KEYS:
        raise CodecError("SCHEMA_VIOLATION", "unexpected snapshot keys")
    for key in ("agent_id", "session_id", "student_id"):
        _expect(isinstance(doc.get(key), str), key)
    try:
        kind = AgentKind(doc.get("kind"))
        status = AgentStatus(doc.get("status"))
    except ValueError:
        raise CodecError("SCHEMA_VIOLATION", "bad kind or status") from None
    if status is AgentStatus.EXPIRED:
        raise CodecError("SCHEMA_VIOLATION", "EXPIRED never appears in a snapshot")
    _expect(_is_int(doc.get("hop_index")) and doc["hop_index"] >= 0, "hop_index")
    _expect(_is_int(doc.get("deadline")), "deadline")
    _expect(isinstance(doc.get("partial"), bool), "partial")
    _expect(_is_int(doc.get("seq")) and doc["seq"] >= 0, "seq")
    home = endpoint_from_doc(doc.get("home"))
    _expect(isinstance(doc.get("itinerary"), list) and doc["itinerary"], "itinerary")
    itinerary = tuple(endpoint_from_doc(e) for e in doc["itinerary"])
    _expect(doc["hop_index"] <= len(itinerary), "hop_index exceeds itinerary")

    if kind is AgentKind.EVALUATION:
        _expect("graph" in doc and "state" in doc and "config_payload" not in doc,
                "evaluation agent fields")
        _expect(len(itinerary) == 1, "evaluation itinerary length")
        try:
            graph = graph_from_doc(doc["graph"])
        except Exception as exc:
            raise CodecError("SCHEMA_VIOLATION", f"graph: {exc}") from exc
        if not validate_graph(graph).ok:
            raise CodecError("SCHEMA_VIOLATION", "embedded graph is invalid")
        state: EvalState | tuple[InstallStep, ...] = _eval_state_from_doc(doc["state"])
        _check_eval_state(graph, state)
        results = None
        if status in (AgentStatus.RETURNING, AgentStatus.COMPLETED):
            _expect("results" in doc, "results required when returning")
            results = result_from_doc(doc["results"])
        else:
            _expect("results" not in doc, "results only when returning")
        config_payload = None
    else:
        _expect("config_payload" in doc and "state" in doc and "graph" not in doc
                and "results" not in doc, "install agent fields")
        payload = doc["config_payload"]
        _expect(isinstance(payload, dict)
                and all(isinstance(k, str) and isinstance(v, str)
                        for k, v in payload.items()), "config_payload")
        config_payload = dict(payload)
        _expect(isinstance(doc["state"], list), "install state")
        state = tuple(_install_step_from_doc(s) for s in doc["state"])
        graph = None
        results = None

    return AgentSnapshot(
        agent_id=doc["agent_id"],
        kind=kind,
        session_id=doc["session_id"],
        student_id=doc["student_id"],
        home=home,
        itinerary=itinerary,
        hop_index=doc["hop_index"],
        deadline=doc["deadline"],
        status=status,
        partial=doc["partial"],
        seq=doc["seq"],
        graph=graph,
        config_payload=config_payload,
        state=state,
        results=results,
    )


def _check_eval_state(graph: TestGraph, state: EvalState) -> None:
    _expect(len(set(state.presented)) == len(state.presented), "presented has duplicates")
    node_ids = set(graph.node_ids())
    _expect(all(q in node_ids for q in state.presented), "presented unknown question")
    _expect(state.current == END or state.current in state.presented,
            "current not presented")
    _expect(state.raw_score == sum(p for _, p in state.answer_log),
            "raw_score does not match answer log")
    for answer, points in state.answer_log:
        _expect(answer.question_id in node_ids, "answer for unknown question")
        node = graph.node(answer.question_id)
        if node.kind is QuestionKind.SHORT_TEXT:
            _expect(isinstance(answer.payload, str), "answer payload shape")
        else:
            _expect(isinstance(answer.payload, frozenset), "answer payload shape")
        _expect(0 <= points <= node.points, "points out of range")


def _is_int(value) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _expect(cond, where: str) -> None:
    if not cond:
        raise CodecError("SCHEMA_VIOLATION", where)


def _expect_keys(doc, keys: set[str], where: str) -> None:
    if not isinstance(doc, dict) or set(doc) != keys:
        raise CodecError("SCHEMA_VIOLATION", f"{where}: expected keys {sorted(keys)}")
