"""Deterministic discrete-event campaign simulator.

Runs whole exam campaigns in-process over a logical clock: the real server
and host platform code wired through a simulated network with latency,
seeded drops and partition windows. A client-server baseline models
web-style per-question round trips with server-side grading, so the two
architectures can be compared on identical inputs.
"""

from __future__ import annotations

import heapq
import random
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from . import canon
from .agentcore import EndpointAddress
from .evalengine import (
    END,
    Answer,
    EvalState,
    QuestionKind,
    QuestionNode,
    TestGraph,
    advance,
    finalize,
    fresh_state,
    observe_grading,
)
from .hostnode import HostCore, HostError
from .servernode import PUSH, ServerCore, compile_results_doc, GradeEntry
from .wire import HEADER_LEN, DIGEST_LEN, MsgType, RetryPolicy

SERVER_NODE = "server"
FRAME_OVERHEAD = HEADER_LEN + DIGEST_LEN

AGENT = "agent"
BASELINE = "baseline"
BASELINE_STATIC = "baseline-static"
MODES = (AGENT, BASELINE, BASELINE_STATIC)


class HarnessError(Exception):
    def __init__(self, code: str, detail: str = ""):
        super().__init__(f"{code}: {detail}" if detail else code)
        self.code = code
        self.detail = detail


# ---------------------------------------------------------------------------
# event loop


class EventLoop:
    """Priority queue of (time, tiebreak) callbacks; no wall clock anywhere."""

    def __init__(self):
        self.now = 0
        self._heap: list[tuple[int, int]] = []
        self._fns: dict[int, object] = {}
        self._seq = 0

    def schedule(self, delay_ms: int, fn) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (self.now + max(0, int(delay_ms)), self._seq))
        self._fns[self._seq] = fn

    def run(self, until: int | None = None) -> None:
        while self._heap:
            t, seq = self._heap[0]
            if until is not None and t > until:
                return
            heapq.heappop(self._heap)
            self.now = t
            fn = self._fns.pop(seq)
            fn()


class SimClock:
    def __init__(self, loop: EventLoop):
        self._loop = loop

    def now(self) -> int:
        return self._loop.now


class SimScheduler:
    def __init__(self, loop: EventLoop):
        self._loop = loop

    def schedule(self, delay_ms: int, fn) -> None:
        self._loop.schedule(delay_ms, fn)


# ---------------------------------------------------------------------------
# network model


@dataclass(frozen=True)
class NetworkModel:
    """Identical seed and config always produce an identical event trace."""

    latency_ms: int = 10
    drop_probability: float = 0.0
    partitions: tuple[tuple[str, int, int], ...] = ()  # (node, start, end), end-exclusive
    seed: int = 0
    duplicate_kinds: tuple[str, ...] = ()  # fault injection: deliver these twice

    def validate(self) -> None:
        if self.latency_ms < 0:
            raise HarnessError("BAD_CONFIG", "latency must be >= 0")
        if not 0.0 <= self.drop_probability <= 1.0:
            raise HarnessError("BAD_CONFIG", "drop probability in [0,1]")
        for node, start, end in self.partitions:
            if end < start:
                raise HarnessError("BAD_CONFIG", f"partition window on {node}")


class Trace:
    def __init__(self):
        self.events: list[dict] = []

    def emit(self, **event) -> None:
        self.events.append(event)

    def encode(self) -> bytes:
        return canon.encode_canonical(self.events)


class SimNet:
    """Schedules message delivery with latency, drops, partitions, dup faults."""

    def __init__(self, loop: EventLoop, model: NetworkModel, trace: Trace):
        self.loop = loop
        self.model = model
        self.trace = trace
        self.handlers: dict[str, object] = {}
        self.labels: dict[str, str] = {}
        self.endpoints: dict[tuple[str, int], str] = {}
        self._drop_rng = random.Random(f"{model.seed}/drop")

    def register(self, node: str, endpoint: EndpointAddress, handler) -> None:
        self.handlers[node] = handler
        self.endpoints[(endpoint.host, endpoint.port)] = node

    def _partitioned(self, node: str, t: int) -> bool:
        for name, start, end in self.model.partitions:
            if name == node and start <= t < end:
                return True
        return False

    def message(self, src: str, dst: str, kind: str, nbytes: int, deliver) -> None:
        t = self.loop.now
        self.trace.emit(t=t, ev="frame_sent", src=src, dst=dst, kind=kind, bytes=nbytes)
        if self._partitioned(src, t) or self._partitioned(dst, t):
            self.trace.emit(t=t, ev="frame_lost", src=src, dst=dst, kind=kind,
                            cause="partition")
            return
        if self.model.drop_probability > 0 and \
                self._drop_rng.random() < self.model.drop_probability:
            self.trace.emit(t=t, ev="frame_lost", src=src, dst=dst, kind=kind,
                            cause="drop")
            return

        def arrive(duplicate: bool) -> None:
            self.trace.emit(t=self.loop.now, ev="frame_delivered", src=src, dst=dst,
                            kind=kind, duplicate=duplicate)
            deliver()

        self.loop.schedule(self.model.latency_ms, lambda: arrive(False))
        if kind in self.model.duplicate_kinds:
            self.trace.emit(t=t, ev="frame_duplicated", src=src, dst=dst, kind=kind)
            self.loop.schedule(self.model.latency_ms + 1, lambda: arrive(True))

    def request(self, src: str, to: EndpointAddress, frame: bytes, on_response) -> None:
        dst = self.endpoints.get((to.host, to.port))
        kind = _frame_kind(frame)
        if dst is None:
            self.trace.emit(t=self.loop.now, ev="frame_sent", src=src, dst=str(to),
                            kind=kind, bytes=len(frame))
            self.trace.emit(t=self.loop.now, ev="frame_lost", src=src, dst=str(to),
                            kind=kind, cause="no_route")
            return

        def deliver() -> None:
            response = self._handle(dst, frame)
            if response is None:
                return
            self.message(dst, src, _frame_kind(response), len(response),
                         lambda: on_response(response) if on_response else None)

        self.message(src, dst, kind, len(frame), deliver)

    def _handle(self, node: str, frame: bytes):
        handler = self.handlers[node]
        label = self.labels.get(node, node)

        def count(question_id: str) -> None:
            self.trace.emit(t=self.loop.now, ev="grading", node=label,
                            question=question_id)

        with observe_grading(count):
            return handler(frame)


def _frame_kind(frame: bytes) -> str:
    try:
        return MsgType(frame[5]).name
    except (ValueError, IndexError):
        return "UNKNOWN"


class SimTransport:
    def __init__(self, node: str, net: SimNet):
        self._node = node
        self._net = net

    def request(self, to: EndpointAddress, frame: bytes, on_response) -> None:
        self._net.request(self._node, to, frame, on_response)


# ---------------------------------------------------------------------------
# answer policies


ALWAYS_CORRECT = "always-correct"
ALWAYS_WRONG = "always-wrong"
RANDOM = "random"
SCRIPTED = "scripted"


@dataclass(frozen=True)
class AnswerPolicy:
    kind: str = ALWAYS_CORRECT
    script: dict | None = None  # student_id -> list of payloads, SCRIPTED only

    def payload_for(self, seed, student_id: str, node: QuestionNode, index: int):
        if self.kind == ALWAYS_CORRECT:
            return _correct_payload(node)
        if self.kind == ALWAYS_WRONG:
            return _wrong_payload(node)
        if self.kind == RANDOM:
            # keyed by (student, question) so draws are identical across
            # modes no matter in which order questions are served
            rng = random.Random(f"{seed}/policy/{student_id}/{node.id}")
            if rng.random() < 0.5:
                return _correct_payload(node)
            return _wrong_payload(node, rng)
        if self.kind == SCRIPTED:
            try:
                raw = self.script[student_id][index]
            except (KeyError, IndexError, TypeError):
                raise HarnessError("BAD_SCRIPT", f"{student_id}[{index}]") from None
            return frozenset(raw) if isinstance(raw, (list, set, frozenset)) else raw
        raise HarnessError("BAD_POLICY", self.kind)


def _correct_payload(node: QuestionNode):
    if node.kind is QuestionKind.SHORT_TEXT:
        assert isinstance(node.correct, tuple)
        return node.correct[0]
    return node.correct


def _wrong_payload(node: QuestionNode, rng: random.Random | None = None):
    if node.kind is QuestionKind.SHORT_TEXT:
        wrong = "deliberately wrong"
        while wrong in node.correct:
            wrong += " x"
        return wrong
    ids = list(node.choice_ids())
    if rng is not None:
        rng.shuffle(ids)
    for cid in ids:
        if frozenset((cid,)) != node.correct:
            return frozenset((cid,))
    return frozenset()


# ---------------------------------------------------------------------------
# metrics


@dataclass
class CampaignMetrics:
    mode: str
    test_id: str
    n_students: int
    questions: int
    seed: int
    frames_total: int = 0
    bytes_total: int = 0
    frames_sent_by_server: int = 0
    server_grading_ops: int = 0
    returns_delivered: int = 0
    frames_by_kind: dict = field(default_factory=dict)
    completion_ms: dict = field(default_factory=dict)

    def to_doc(self) -> dict:
        return {
            "mode": self.mode, "test_id": self.test_id,
            "n_students": self.n_students, "questions": self.questions,
            "seed": self.seed, "frames_total": self.frames_total,
            "bytes_total": self.bytes_total,
            "frames_sent_by_server": self.frames_sent_by_server,
            "server_grading_ops": self.server_grading_ops,
            "returns_delivered": self.returns_delivered,
            "frames_by_kind": dict(sorted(self.frames_by_kind.items())),
            "completion_ms": {sid: self.completion_ms.get(sid)
                              for sid in sorted(self.completion_ms)},
        }


def metrics_from_trace(trace: Trace, *, mode: str, test_id: str, n_students: int,
                       questions: int, seed: int) -> CampaignMetrics:
    metrics = CampaignMetrics(mode=mode, test_id=test_id, n_students=n_students,
                              questions=questions, seed=seed)
    returned: set[str] = set()
    for event in trace.events:
        ev = event["ev"]
        if ev == "frame_sent":
            metrics.frames_total += 1
            metrics.bytes_total += event["bytes"]
            kind = event["kind"]
            metrics.frames_by_kind[kind] = metrics.frames_by_kind.get(kind, 0) + 1
            if event["src"] == SERVER_NODE:
                metrics.frames_sent_by_server += 1
        elif ev == "grading" and event["node"] == SERVER_NODE:
            metrics.server_grading_ops += 1
        elif ev == "return_ingested":
            returned.add(event["student"])
        elif ev == "exam_completed":
            metrics.completion_ms.setdefault(event["student"], event["t"])
    metrics.returns_delivered = len(returned)
    return metrics


_COMPARE_FIELDS = ("frames_total", "bytes_total", "frames_sent_by_server",
                   "server_grading_ops", "returns_delivered")


def compare(a: CampaignMetrics | dict, b: CampaignMetrics | dict) -> dict:
    """Field-by-field absolute values and a/b ratios for two campaigns."""
    doc_a = a.to_doc() if isinstance(a, CampaignMetrics) else a
    doc_b = b.to_doc() if isinstance(b, CampaignMetrics) else b
    for key in ("n_students", "test_id", "questions"):
        if doc_a.get(key) != doc_b.get(key):
            raise HarnessError("SHAPE_MISMATCH",
                               f"{key}: {doc_a.get(key)} vs {doc_b.get(key)}")
    fields = {}
    lines = [f"{'metric':<24}{'a':>14}{'b':>14}{'a/b':>10}"]
    for name in _COMPARE_FIELDS:
        va, vb = doc_a[name], doc_b[name]
        ratio = (va / vb) if vb else None
        fields[name] = {"a": va, "b": vb, "ratio": ratio}
        shown = f"{ratio:.4f}" if ratio is not None else "n/a"
        lines.append(f"{name:<24}{va:>14}{vb:>14}{shown:>10}")
    return {"a_mode": doc_a["mode"], "b_mode": doc_b["mode"], "fields": fields,
            "text": "\n".join(lines)}


# ---------------------------------------------------------------------------
# campaign runners


@dataclass
class CampaignRun:
    metrics: CampaignMetrics
    results: dict
    trace: Trace
    server: ServerCore | None
    session_id: str
    loop: EventLoop
    data_dir: Path


def student_ids(n: int) -> list[str]:
    return [f"s{i + 1:03d}" for i in range(n)]


def _partition_windows(network: NetworkModel) -> tuple[tuple[str, int, int], ...]:
    return network.partitions


def run_campaign(graph: TestGraph, n_students: int, policy: AnswerPolicy,
                 network: NetworkModel, deadline_ms: int, *,
                 mode: str = AGENT, think_ms: int = 1000,
                 data_dir: str | Path | None = None,
                 retry_policy: RetryPolicy = RetryPolicy()) -> CampaignRun:
    """Simulate one campaign; deterministic under (config, seed)."""
    network.validate()
    if mode not in MODES:
        raise HarnessError("BAD_CONFIG", f"mode {mode}")
    if n_students < 1:
        raise HarnessError("BAD_CONFIG", "need at least one student")
    if mode == AGENT:
        return _run_agent_mode(graph, n_students, policy, network, deadline_ms,
                               think_ms, data_dir, retry_policy)
    return _run_baseline(graph, n_students, policy, network, deadline_ms,
                         think_ms, data_dir, retry_policy, static=(mode == BASELINE_STATIC))


def run_baseline(graph: TestGraph, n_students: int, policy: AnswerPolicy,
                 network: NetworkModel, deadline_ms: int, **kwargs) -> CampaignRun:
    return run_campaign(graph, n_students, policy, network, deadline_ms,
                        mode=BASELINE, **kwargs)


def _run_agent_mode(graph: TestGraph, n_students: int, policy: AnswerPolicy,
                    network: NetworkModel, deadline_ms: int, think_ms: int,
                    data_dir, retry_policy: RetryPolicy) -> CampaignRun:
    loop = EventLoop()
    clock = SimClock(loop)
    scheduler = SimScheduler(loop)
    trace = Trace()
    net = SimNet(loop, network, trace)
    root = Path(data_dir) if data_dir else Path(tempfile.mkdtemp(prefix="mage-sim-"))

    sids = student_ids(n_students)
    roster = [(sid, EndpointAddress(sid, 7401)) for sid in sids]

    server = ServerCore(
        home=EndpointAddress(SERVER_NODE, 7400), tests={graph.test_id: graph},
        data_dir=root / "server", clock=clock, scheduler=scheduler,
        transport=SimTransport(SERVER_NODE, net), policy=retry_policy,
        seed=network.seed, durable=False,
        on_return=lambda session_id, sid: trace.emit(
            t=loop.now, ev="return_ingested", student=sid))
    net.register(SERVER_NODE, server.home, server.handle_frame)

    hosts: dict[str, HostCore] = {}

    def make_started(sid: str):
        return lambda agent_id: loop.schedule(think_ms, lambda: _answer_step(sid))

    for sid, endpoint in roster:
        host = HostCore(
            endpoint=endpoint, data_dir=root / sid, clock=clock,
            scheduler=scheduler, transport=SimTransport(sid, net),
            policy=retry_policy, seed=f"{network.seed}/{sid}",
            on_exam_started=make_started(sid))
        hosts[sid] = host
        net.register(sid, endpoint, host.handle_frame)

    def _answer_step(sid: str) -> None:
        host = hosts[sid]
        with observe_grading(lambda qid: trace.emit(t=loop.now, ev="grading",
                                                    node=sid, question=qid)):
            try:
                view = host.current_question()
                if view.get("terminal"):
                    return
                node = graph.node(view["question"]["id"])
                answered = view["answered_count"]
                payload = policy.payload_for(network.seed, sid, node, answered)
                payload_doc = sorted(payload) if isinstance(payload, frozenset) else payload
                result = host.submit_answer(None, node.id, payload_doc)
            except HostError as exc:
                if exc.code in ("DEADLINE_PASSED", "NOT_EXECUTING"):
                    trace.emit(t=loop.now, ev="deadline_stop", student=sid)
                    return
                raise
        if result.get("terminal"):
            trace.emit(t=loop.now, ev="exam_completed", student=sid)
        else:
            loop.schedule(think_ms, lambda: _answer_step(sid))

    session = server.create_session(graph.test_id, roster, deadline_ms, PUSH,
                                    session_id="campaign")
    loop.schedule(0, lambda: server.dispatch_all(session.session_id))
    loop.run()

    results = server.compile_results(session.session_id)
    metrics = metrics_from_trace(trace, mode=AGENT, test_id=graph.test_id,
                                 n_students=n_students, questions=len(graph.nodes),
                                 seed=network.seed)
    for sid in sids:
        metrics.completion_ms.setdefault(sid, None)
    return CampaignRun(metrics, results, trace, server, session.session_id, loop, root)


# ---------------------------------------------------------------------------
# client-server baseline


class BaselineServer:
    """Web-style evaluation: the server grades and picks every next question."""

    def __init__(self, graph: TestGraph, deadline_ms: int, static: bool):
        self.graph = graph
        self.deadline = deadline_ms
        self.static = static
        self.states: dict[str, EvalState] = {}
        self.outcomes: dict[str, tuple] = {}  # sid -> (result, partial)

    def handle(self, doc: dict, now: int) -> dict:
        sid = doc["student"]
        op = doc["op"]
        if op == "start":
            if self.static:
                return {"op": "questionnaire",
                        "questions": [_question_view(n) for n in self.graph.nodes]}
            self.states.setdefault(sid, fresh_state(self.graph))
            return self._step_reply(sid)
        if op == "answer":
            return self._on_answer(sid, doc, now)
        if op == "submit":
            return self._on_submit(sid, doc)
        raise HarnessError("BAD_MESSAGE", op)

    def _step_reply(self, sid: str) -> dict:
        if sid in self.outcomes:
            result, partial = self.outcomes[sid]
            return {"op": "result", "partial": partial,
                    "summary": {"raw_score": result.raw_score,
                                "max_on_path": result.max_on_path,
                                "percent": result.percent}}
        state = self.states[sid]
        node = self.graph.node(state.current)
        return {"op": "question", "question": _question_view(node),
                "answered_count": len(state.answer_log)}

    def _on_answer(self, sid: str, doc: dict, now: int) -> dict:
        if sid in self.outcomes:
            return self._step_reply(sid)
        state = self.states[sid]
        if doc["question_id"] != state.current:
            return self._step_reply(sid)  # duplicate of an already-graded answer
        if now >= self.deadline:
            self._finish(sid, state, partial=True)
            return self._step_reply(sid)
        raw = doc["payload"]
        payload = frozenset(raw) if isinstance(raw, list) else raw
        answer = Answer(question_id=state.current, payload=payload,
                        answered_at=doc["answered_at"])
        state, _ = advance(self.graph, state, answer)
        self.states[sid] = state
        if state.current == END:
            self._finish(sid, state, partial=False)
        return self._step_reply(sid)

    def _on_submit(self, sid: str, doc: dict) -> dict:
        if sid not in self.outcomes:
            answers = {a["question_id"]: a for a in doc["answers"]}
            state = fresh_state(self.graph)
            while state.current != END:
                entry = answers.get(state.current)
                if entry is None:
                    break
                raw = entry["payload"]
                payload = frozenset(raw) if isinstance(raw, list) else raw
                answer = Answer(question_id=state.current, payload=payload,
                                answered_at=entry["answered_at"])
                state, _ = advance(self.graph, state, answer)
            self._finish(sid, state, partial=state.current != END)
        return self._step_reply(sid)

    def _finish(self, sid: str, state: EvalState, partial: bool) -> None:
        self.outcomes[sid] = (finalize(self.graph, state, partial=partial), partial)


def _question_view(node: QuestionNode) -> dict:
    return {"id": node.id, "prompt": node.prompt, "kind": node.kind.value,
            "choices": [[cid, text] for cid, text in node.choices],
            "points": node.points}


def _doc_bytes(doc: dict) -> int:
    return len(canon.encode_canonical(doc)) + FRAME_OVERHEAD


def _run_baseline(graph: TestGraph, n_students: int, policy: AnswerPolicy,
                  network: NetworkModel, deadline_ms: int, think_ms: int,
                  data_dir, retry_policy: RetryPolicy, static: bool) -> CampaignRun:
    loop = EventLoop()
    trace = Trace()
    net = SimNet(loop, network, trace)
    root = Path(data_dir) if data_dir else Path(tempfile.mkdtemp(prefix="mage-sim-"))
    sids = student_ids(n_students)
    bserver = BaselineServer(graph, deadline_ms, static)

    def server_handle(doc: dict) -> dict:
        def count(qid: str) -> None:
            trace.emit(t=loop.now, ev="grading", node=SERVER_NODE, question=qid)
        with observe_grading(count):
            return bserver.handle(doc, loop.now)

    class Client:
        """One web student: request, wait, answer; stalls while partitioned."""

        def __init__(self, sid: str):
            self.sid = sid
            self.rng = random.Random(f"{network.seed}/client/{sid}")
            self.done = False
            self.answered = 0
            self.pending: dict | None = None
            self.attempt = 0

        def send(self, doc: dict) -> None:
            self.pending = doc
            self.attempt = 0
            self._transmit()

        def _transmit(self) -> None:
            if self.done or self.pending is None:
                return
            if self.attempt > 0 and loop.now > retry_policy.give_up_at(deadline_ms):
                self.done = True
                trace.emit(t=loop.now, ev="gave_up", student=self.sid)
                return
            doc = self.pending
            delay = retry_policy.delay_ms(self.attempt, self.rng)
            self.attempt += 1

            def deliver() -> None:
                reply = server_handle(doc)
                if reply is not None:
                    net.message(SERVER_NODE, self.sid, reply["op"].upper(),
                                _doc_bytes(reply), lambda: self.on_reply(doc, reply))

            net.message(self.sid, SERVER_NODE, doc["op"].upper(), _doc_bytes(doc),
                        deliver)
            loop.schedule(delay, lambda: self._retransmit(doc))

        def _retransmit(self, doc: dict) -> None:
            if not self.done and self.pending is doc:
                self._transmit()

        def on_reply(self, sent: dict, reply: dict) -> None:
            if self.done or self.pending is not sent:
                return
            self.pending = None
            op = reply["op"]
            if op == "question":
                question = reply["question"]
                node = graph.node(question["id"])
                loop.schedule(think_ms, lambda: self._answer(node))
            elif op == "questionnaire":
                loop.schedule(think_ms * len(reply["questions"]),
                              lambda: self._submit(reply["questions"]))
            elif op == "result":
                self.done = True
                trace.emit(t=loop.now, ev="exam_completed", student=self.sid)
                trace.emit(t=loop.now, ev="return_ingested", student=self.sid)

        def _answer(self, node: QuestionNode) -> None:
            payload = policy.payload_for(network.seed, self.sid, node, self.answered)
            self.answered += 1
            self.send({"op": "answer", "student": self.sid, "question_id": node.id,
                       "payload": sorted(payload) if isinstance(payload, frozenset) else payload,
                       "answered_at": loop.now})

        def _submit(self, questions: list) -> None:
            answers = []
            base = loop.now - think_ms * len(questions)
            for i, question in enumerate(questions):
                node = graph.node(question["id"])
                payload = policy.payload_for(network.seed, self.sid, node, i)
                answers.append({
                    "question_id": node.id,
                    "payload": sorted(payload) if isinstance(payload, frozenset) else payload,
                    "answered_at": base + think_ms * (i + 1),
                })
            self.send({"op": "submit", "student": self.sid, "answers": answers})

    clients = {sid: Client(sid) for sid in sids}
    net.handlers[SERVER_NODE] = None  # baseline messages bypass frame handling
    for sid in sids:
        doc = {"op": "start", "student": sid}
        loop.schedule(0, lambda sid=sid, doc=doc: clients[sid].send(doc))
    loop.run()

    grade_book = {
        sid: GradeEntry(agent_id="", result=outcome[0], partial=outcome[1])
        for sid, outcome in bserver.outcomes.items()
    }
    results = compile_results_doc("campaign", graph.test_id, PUSH, grade_book, sids)
    metrics = metrics_from_trace(
        trace, mode=BASELINE_STATIC if static else BASELINE, test_id=graph.test_id,
        n_students=n_students, questions=len(graph.nodes), seed=network.seed)
    for sid in sids:
        metrics.completion_ms.setdefault(sid, None)
    return CampaignRun(metrics, results, trace, None, "campaign", loop, root)
