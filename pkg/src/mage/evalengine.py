"""Deterministic adaptive-test engine.

A test is an acyclic graph of exact-answer questions. Each node carries an
ordered list of guarded transitions; after grading an answer the first
matching guard selects the next question, so the path through the test
depends on previous answers and the running score. All grading is local,
deterministic and fully serializable, which is what lets a mobile agent
carry the whole engine state between machines.
"""

from __future__ import annotations

import unicodedata
from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass, replace
from decimal import ROUND_HALF_UP, Decimal
from enum import Enum

END = "END"

MAX_ORACLE_NODES = 12


class EngineError(Exception):
    """Engine failure carrying a machine-readable code."""

    def __init__(self, code: str, detail: str = ""):
        super().__init__(f"{code}: {detail}" if detail else code)
        self.code = code
        self.detail = detail


class QuestionKind(str, Enum):
    SINGLE_CHOICE = "SINGLE_CHOICE"
    MULTI_CHOICE = "MULTI_CHOICE"
    SHORT_TEXT = "SHORT_TEXT"


class GuardKind(str, Enum):
    ON_CORRECT = "ON_CORRECT"
    ON_INCORRECT = "ON_INCORRECT"
    ON_CHOICE = "ON_CHOICE"
    ON_SCORE_AT_LEAST = "ON_SCORE_AT_LEAST"
    DEFAULT = "DEFAULT"


@dataclass(frozen=True)
class Guard:
    kind: GuardKind
    choices: frozenset[str] = frozenset()  # ON_CHOICE only
    threshold: int = 0  # ON_SCORE_AT_LEAST only


@dataclass(frozen=True)
class Transition:
    guard: Guard
    target: str  # question id or END


@dataclass(frozen=True)
class QuestionNode:
    """One question: prompt, answer key, points and guarded transitions.

    ``correct`` is a frozenset of choice ids for choice kinds and an
    ordered tuple of accepted normalized strings for SHORT_TEXT.
    """

    id: str
    prompt: str
    kind: QuestionKind
    choices: tuple[tuple[str, str], ...]
    correct: frozenset[str] | tuple[str, ...]
    points: int
    transitions: tuple[Transition, ...]

    def choice_ids(self) -> tuple[str, ...]:
        return tuple(cid for cid, _ in self.choices)


@dataclass(frozen=True)
class TestGraph:
    test_id: str
    title: str
    entry: str
    nodes: tuple[QuestionNode, ...]
    version: int = 1

    def node(self, question_id: str) -> QuestionNode:
        for node in self.nodes:
            if node.id == question_id:
                return node
        raise EngineError("UNKNOWN_QUESTION", question_id)

    def node_ids(self) -> tuple[str, ...]:
        return tuple(node.id for node in self.nodes)


@dataclass(frozen=True)
class Answer:
    """A submitted answer: a frozenset of choice ids or raw text."""

    question_id: str
    payload: frozenset[str] | str
    answered_at: int  # logical milliseconds


@dataclass(frozen=True)
class EvalState:
    """Immutable execution state; advancing produces a new value."""

    current: str  # question id or END
    answer_log: tuple[tuple[Answer, int], ...]
    raw_score: int
    presented: tuple[str, ...]


@dataclass(frozen=True)
class ResultRecord:
    question_id: str
    normalized_answer: tuple[str, ...] | str | None  # None = never answered
    points_earned: int
    points_possible: int
    answered_at: int | None


@dataclass(frozen=True)
class ExamResult:
    records: tuple[ResultRecord, ...]
    raw_score: int
    max_on_path: int
    percent: float


@dataclass(frozen=True)
class Violation:
    rule: str
    nodes: tuple[str, ...] = ()
    detail: str = ""


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    violations: tuple[Violation, ...]

    def rules(self) -> set[str]:
        return {v.rule for v in self.violations}


# ---------------------------------------------------------------------------
# text normalization

# Simple case folding differs from str.casefold() (full folding) for code
# points whose full fold expands to several characters. Those fold to
# themselves in simple mode except the ones below (capital sharp s and the
# Greek capitals with prosgegrammeni), which have dedicated one-char folds.
_SIMPLE_FOLD_EXCEPTIONS = {
    "ẞ": "ß",
    **{chr(c): chr(c - 8) for c in range(0x1F88, 0x1F90)},
    **{chr(c): chr(c - 8) for c in range(0x1F98, 0x1FA0)},
    **{chr(c): chr(c - 8) for c in range(0x1FA8, 0x1FB0)},
    "ᾼ": "ᾳ",
    "ῌ": "ῃ",
    "ῼ": "ῳ",
}


def _simple_fold(text: str) -> str:
    out = []
    for ch in text:
        exc = _SIMPLE_FOLD_EXCEPTIONS.get(ch)
        if exc is not None:
            out.append(exc)
            continue
        folded = ch.casefold()
        out.append(folded if len(folded) == 1 else ch)
    return "".join(out)


def normalize_text(raw: str) -> str:
    """Normal form for exact text answers.

    NFC, then Unicode simple case folding, then trim, then collapse each
    internal whitespace run to a single space. Grading compares normal
    forms, so the same answer matches bit-exactly on every platform.
    """
    folded = _simple_fold(unicodedata.normalize("NFC", raw))
    return " ".join(folded.split())


# ---------------------------------------------------------------------------
# validation


def validate_graph(graph: TestGraph) -> ValidationReport:
    """Check every structural invariant; violations are data, not errors."""
    violations: list[Violation] = []

    if graph.version < 1:
        violations.append(Violation("BAD_VERSION", detail=str(graph.version)))
    if not graph.test_id:
        violations.append(Violation("BAD_TEST_ID"))

    ids = [node.id for node in graph.nodes]
    seen: set[str] = set()
    for qid in ids:
        if qid in seen:
            violations.append(Violation("DUPLICATE_ID", (qid,)))
        seen.add(qid)
    id_set = set(ids)

    for node in graph.nodes:
        violations.extend(_validate_node(node, id_set))

    if graph.entry not in id_set:
        violations.append(Violation("ENTRY_MISSING", detail=graph.entry))
        return ValidationReport(False, tuple(violations))

    adjacency = {
        node.id: [t.target for t in node.transitions if t.target != END]
        for node in graph.nodes
    }

    reachable = {graph.entry}
    frontier = [graph.entry]
    while frontier:
        qid = frontier.pop()
        for target in adjacency.get(qid, []):
            if target in id_set and target not in reachable:
                reachable.add(target)
                frontier.append(target)
    for qid in ids:
        if qid not in reachable:
            violations.append(Violation("UNREACHABLE", (qid,)))

    for cycle in _cycles(ids, adjacency):
        violations.append(Violation("CYCLE", tuple(cycle)))

    return ValidationReport(not violations, tuple(violations))


def _validate_node(node: QuestionNode, id_set: set[str]) -> list[Violation]:
    out: list[Violation] = []
    me = (node.id,)

    if not node.id or node.id == END:
        out.append(Violation("RESERVED_ID", me))
    if node.points < 1:
        out.append(Violation("BAD_POINTS", me, str(node.points)))

    choice_ids = node.choice_ids()
    if len(set(choice_ids)) != len(choice_ids):
        out.append(Violation("DUPLICATE_CHOICE", me))

    if node.kind is QuestionKind.SHORT_TEXT:
        if node.choices:
            out.append(Violation("BAD_CHOICES", me, "SHORT_TEXT takes no choices"))
        accepted = node.correct
        if not isinstance(accepted, tuple) or not accepted:
            out.append(Violation("BAD_CORRECT", me, "needs accepted answers"))
        else:
            for text in accepted:
                if normalize_text(text) != text:
                    out.append(Violation("NOT_NORMALIZED", me, text))
    else:
        if len(node.choices) < 2:
            out.append(Violation("BAD_CHOICES", me, "needs at least 2 choices"))
        correct = node.correct
        if not isinstance(correct, frozenset) or not correct:
            out.append(Violation("BAD_CORRECT", me, "needs correct choice ids"))
        else:
            if node.kind is QuestionKind.SINGLE_CHOICE and len(correct) != 1:
                out.append(Violation("BAD_CORRECT", me, "exactly one correct choice"))
            if not correct <= set(choice_ids):
                out.append(Violation("BAD_CORRECT", me, "correct ids not among choices"))

    defaults = [i for i, t in enumerate(node.transitions) if t.guard.kind is GuardKind.DEFAULT]
    if not defaults:
        out.append(Violation("MISSING_DEFAULT", me))
    else:
        if len(defaults) > 1:
            out.append(Violation("MULTIPLE_DEFAULT", me))
        if defaults[-1] != len(node.transitions) - 1:
            out.append(Violation("DEFAULT_NOT_LAST", me))

    for transition in node.transitions:
        guard = transition.guard
        if transition.target != END and transition.target not in id_set:
            out.append(Violation("BAD_TARGET", me, transition.target))
        if guard.kind is GuardKind.ON_CHOICE:
            if node.kind is QuestionKind.SHORT_TEXT:
                out.append(Violation("BAD_GUARD", me, "ON_CHOICE on a text question"))
            elif not guard.choices or not guard.choices <= set(choice_ids):
                out.append(Violation("BAD_GUARD", me, "ON_CHOICE ids not among choices"))
        if guard.kind is GuardKind.ON_SCORE_AT_LEAST and guard.threshold < 0:
            out.append(Violation("BAD_GUARD", me, "negative threshold"))
    return out


def _cycles(ids: list[str], adjacency: dict[str, list[str]]) -> list[list[str]]:
    """Tarjan strongly-connected components of size > 1, plus self-loops."""
    index: dict[str, int] = {}
    low: dict[str, int] = {}
    on_stack: set[str] = set()
    stack: list[str] = []
    counter = [0]
    found: list[list[str]] = []

    def strongconnect(v: str) -> None:
        index[v] = low[v] = counter[0]
        counter[0] += 1
        stack.append(v)
        on_stack.add(v)
        for w in adjacency.get(v, []):
            if w not in index:
                strongconnect(w)
                low[v] = min(low[v], low[w])
            elif w in on_stack:
                low[v] = min(low[v], index[w])
        if low[v] == index[v]:
            component = []
            while True:
                w = stack.pop()
                on_stack.discard(w)
                component.append(w)
                if w == v:
                    break
            if len(component) > 1 or v in adjacency.get(v, []):
                found.append(sorted(component))

    for v in dict.fromkeys(ids):
        if v not in index:
            strongconnect(v)
    return found


# ---------------------------------------------------------------------------
# grading

# Observer hook so a harness can attribute grading work to the node that
# performed it (the server must never grade during an agent-mode exam).
_grade_observer: ContextVar = ContextVar("grade_observer", default=None)


@contextmanager
def observe_grading(callback):
    token = _grade_observer.set(callback)
    try:
        yield
    finally:
        _grade_observer.reset(token)


def grade_answer(node: QuestionNode, answer: Answer) -> int:
    """Full points for an exact match, otherwise zero. No partial credit."""
    if answer.question_id != node.id:
        raise EngineError("QUESTION_MISMATCH", f"{answer.question_id} != {node.id}")
    observer = _grade_observer.get()
    if observer is not None:
        observer(node.id)
    if node.kind is QuestionKind.SHORT_TEXT:
        if not isinstance(answer.payload, str):
            raise EngineError("SHAPE_MISMATCH", "text question needs a text payload")
        return node.points if normalize_text(answer.payload) in node.correct else 0
    if not isinstance(answer.payload, frozenset):
        raise EngineError("SHAPE_MISMATCH", "choice question needs a set of choice ids")
    return node.points if answer.payload == node.correct else 0


def _guard_matches(guard: Guard, node: QuestionNode, answer: Answer,
                   points_earned: int, raw_score: int) -> bool:
    if guard.kind is GuardKind.DEFAULT:
        return True
    if guard.kind is GuardKind.ON_CORRECT:
        return points_earned == node.points
    if guard.kind is GuardKind.ON_INCORRECT:
        return points_earned == 0
    if guard.kind is GuardKind.ON_CHOICE:
        return isinstance(answer.payload, frozenset) and bool(answer.payload & guard.choices)
    if guard.kind is GuardKind.ON_SCORE_AT_LEAST:
        return raw_score >= guard.threshold
    raise EngineError("UNKNOWN_GUARD", str(guard.kind))


def next_question(graph: TestGraph, state: EvalState, node: QuestionNode,
                  points_earned: int) -> str:
    """First matching transition wins; raw score already includes this answer."""
    if node.id != state.current:
        raise EngineError("QUESTION_MISMATCH", f"{node.id} != {state.current}")
    answer = state.answer_log[-1][0]
    for transition in node.transitions:
        if _guard_matches(transition.guard, node, answer, points_earned, state.raw_score):
            return transition.target
    raise EngineError("NO_TRANSITION", node.id)  # unreachable on a validated graph


def fresh_state(graph: TestGraph) -> EvalState:
    return EvalState(current=graph.entry, answer_log=(), raw_score=0,
                     presented=(graph.entry,))


def advance(graph: TestGraph, state: EvalState, answer: Answer) -> tuple[EvalState, int]:
    """Grade the answer for the current question and move to the next one."""
    if state.current == END:
        raise EngineError("ALREADY_TERMINAL")
    node = graph.node(state.current)
    points = grade_answer(node, answer)
    graded = replace(
        state,
        answer_log=state.answer_log + ((answer, points),),
        raw_score=state.raw_score + points,
    )
    target = next_question(graph, graded, node, points)
    if target == END:
        return replace(graded, current=END), points
    return replace(graded, current=target, presented=graded.presented + (target,)), points


def _normalized_answer(node: QuestionNode, answer: Answer) -> tuple[str, ...] | str:
    if isinstance(answer.payload, frozenset):
        return tuple(sorted(answer.payload))
    return normalize_text(answer.payload)


def _percent(raw: int, max_on_path: int) -> float:
    if max_on_path == 0:
        return 0.0
    exact = Decimal(100 * raw) / Decimal(max_on_path)
    return float(exact.quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))


def finalize(graph: TestGraph, state: EvalState, partial: bool = False) -> ExamResult:
    """Compile one record per presented question.

    The percent denominator is the points presented on this student's
    path, so adaptive runs with different paths stay comparable. An
    unanswered presented question (possible only at a deadline cut-off)
    scores zero.
    """
    if state.current != END and not partial:
        raise EngineError("NOT_TERMINAL", state.current)
    answered = {entry[0].question_id: entry for entry in state.answer_log}
    records = []
    max_on_path = 0
    for qid in state.presented:
        node = graph.node(qid)
        max_on_path += node.points
        entry = answered.get(qid)
        if entry is None:
            records.append(ResultRecord(qid, None, 0, node.points, None))
        else:
            answer, points = entry
            records.append(ResultRecord(qid, _normalized_answer(node, answer),
                                        points, node.points, answer.answered_at))
    return ExamResult(tuple(records), state.raw_score, max_on_path,
                      _percent(state.raw_score, max_on_path))


# ---------------------------------------------------------------------------
# exhaustive path oracle

@dataclass(frozen=True)
class OraclePath:
    answers: tuple[Answer, ...]
    path: tuple[str, ...]
    raw_score: int


def _candidate_payloads(node: QuestionNode) -> list[frozenset[str] | str]:
    if node.kind is QuestionKind.SHORT_TEXT:
        wrong = "zz wrong zz"
        while wrong in node.correct:
            wrong += " zz"
        return [node.correct[0], wrong]
    ids = node.choice_ids()
    assert isinstance(node.correct, frozenset)
    candidates: list[frozenset[str]] = [node.correct]
    candidates.extend(frozenset((cid,)) for cid in ids)
    # a correct-superset stays wrong but still intersects the correct ids
    candidates.extend(node.correct | {cid} for cid in ids if cid not in node.correct)
    candidates.append(frozenset())
    unique: list[frozenset[str]] = []
    for cand in candidates:
        if cand not in unique:
            unique.append(cand)
    return unique


def enumerate_paths(graph: TestGraph, max_nodes: int = MAX_ORACLE_NODES) -> tuple[OraclePath, ...]:
    """Walk every reachable path, one representative answer per outcome class.

    Answers to one question are equivalent when they earn the same points
    and fire the same transition; exploring one representative of each
    class covers every reachable (path, score) combination. This walker
    re-derives guard matching and grading on its own so it can serve as an
    independent check of the stepwise engine.
    """
    if len(graph.nodes) > max_nodes:
        raise EngineError("TOO_LARGE", f"{len(graph.nodes)} nodes > {max_nodes}")
    report = validate_graph(graph)
    if not report.ok:
        raise EngineError("INVALID_GRAPH", ", ".join(sorted(report.rules())))

    nodes = {node.id: node for node in graph.nodes}
    out: list[OraclePath] = []

    def earned(node: QuestionNode, payload) -> int:
        if node.kind is QuestionKind.SHORT_TEXT:
            return node.points if normalize_text(payload) in node.correct else 0
        return node.points if payload == node.correct else 0

    def fired_index(node: QuestionNode, payload, points: int, raw_after: int) -> int:
        for i, transition in enumerate(node.transitions):
            guard = transition.guard
            if guard.kind is GuardKind.DEFAULT:
                return i
            if guard.kind is GuardKind.ON_CORRECT and points == node.points:
                return i
            if guard.kind is GuardKind.ON_INCORRECT and points == 0:
                return i
            if (guard.kind is GuardKind.ON_CHOICE and isinstance(payload, frozenset)
                    and payload & guard.choices):
                return i
            if guard.kind is GuardKind.ON_SCORE_AT_LEAST and raw_after >= guard.threshold:
                return i
        raise EngineError("NO_TRANSITION", node.id)

    def walk(qid: str, raw: int, answers: tuple[Answer, ...], path: tuple[str, ...]) -> None:
        node = nodes[qid]
        # (points, fired transition index) decides everything downstream
        seen_classes: set[tuple[int, int]] = set()
        for payload in _candidate_payloads(node):
            points = earned(node, payload)
            index = fired_index(node, payload, points, raw + points)
            if (points, index) in seen_classes:
                continue
            seen_classes.add((points, index))
            answer = Answer(question_id=qid, payload=payload, answered_at=0)
            target = node.transitions[index].target
            if target == END:
                out.append(OraclePath(answers + (answer,), path, raw + points))
            else:
                walk(target, raw + points, answers + (answer,), path + (target,))

    walk(graph.entry, 0, (), (graph.entry,))
    return tuple(out)


# ---------------------------------------------------------------------------
# document codec (test repository format)


def graph_to_doc(graph: TestGraph) -> dict:
    return {
        "test_id": graph.test_id,
        "title": graph.title,
        "entry": graph.entry,
        "version": graph.version,
        "nodes": [_node_to_doc(node) for node in graph.nodes],
    }


def _node_to_doc(node: QuestionNode) -> dict:
    if isinstance(node.correct, frozenset):
        correct = sorted(node.correct)
    else:
        correct = list(node.correct)
    return {
        "id": node.id,
        "prompt": node.prompt,
        "kind": node.kind.value,
        "choices": [[cid, text] for cid, text in node.choices],
        "correct": correct,
        "points": node.points,
        "transitions": [_transition_to_doc(t) for t in node.transitions],
    }


def _transition_to_doc(transition: Transition) -> dict:
    guard = transition.guard
    doc: dict = {"kind": guard.kind.value}
    if guard.kind is GuardKind.ON_CHOICE:
        doc["choices"] = sorted(guard.choices)
    if guard.kind is GuardKind.ON_SCORE_AT_LEAST:
        doc["threshold"] = guard.threshold
    return {"guard": doc, "target": transition.target}


def _expect_keys(doc: dict, keys: set[str], where: str) -> None:
    if not isinstance(doc, dict) or set(doc) != keys:
        raise EngineError("SCHEMA_VIOLATION", f"{where}: expected keys {sorted(keys)}")


def _expect(cond: bool, where: str) -> None:
    if not cond:
        raise EngineError("SCHEMA_VIOLATION", where)


def _sorted_id_set(values, where: str) -> frozenset[str]:
    _expect(isinstance(values, list) and all(isinstance(v, str) for v in values), where)
    _expect(list(values) == sorted(set(values)), f"{where}: must be a sorted unique list")
    return frozenset(values)


def graph_from_doc(doc) -> TestGraph:
    _expect_keys(doc, {"test_id", "title", "entry", "version", "nodes"}, "graph")
    _expect(isinstance(doc["test_id"], str), "graph.test_id")
    _expect(isinstance(doc["title"], str), "graph.title")
    _expect(isinstance(doc["entry"], str), "graph.entry")
    _expect(isinstance(doc["version"], int) and not isinstance(doc["version"], bool),
            "graph.version")
    _expect(isinstance(doc["nodes"], list), "graph.nodes")
    return TestGraph(
        test_id=doc["test_id"],
        title=doc["title"],
        entry=doc["entry"],
        version=doc["version"],
        nodes=tuple(_node_from_doc(n) for n in doc["nodes"]),
    )


def _node_from_doc(doc) -> QuestionNode:
    _expect_keys(doc, {"id", "prompt", "kind", "choices", "correct", "points",
                       "transitions"}, "node")
    _expect(isinstance(doc["id"], str) and isinstance(doc["prompt"], str), "node.id")
    try:
        kind = QuestionKind(doc["kind"])
    except ValueError:
        raise EngineError("SCHEMA_VIOLATION", f"node.kind: {doc['kind']!r}") from None
    _expect(isinstance(doc["choices"], list), "node.choices")
    choices = []
    for pair in doc["choices"]:
        _expect(isinstance(pair, list) and len(pair) == 2
                and all(isinstance(p, str) for p in pair), "node.choices entry")
        choices.append((pair[0], pair[1]))
    if kind is QuestionKind.SHORT_TEXT:
        _expect(isinstance(doc["correct"], list)
                and all(isinstance(v, str) for v in doc["correct"]), "node.correct")
        correct: frozenset[str] | tuple[str, ...] = tuple(doc["correct"])
    else:
        correct = _sorted_id_set(doc["correct"], "node.correct")
    _expect(isinstance(doc["points"], int) and not isinstance(doc["points"], bool),
            "node.points")
    _expect(isinstance(doc["transitions"], list), "node.transitions")
    return QuestionNode(
        id=doc["id"],
        prompt=doc["prompt"],
        kind=kind,
        choices=tuple(choices),
        correct=correct,
        points=doc["points"],
        transitions=tuple(_transition_from_doc(t) for t in doc["transitions"]),
    )


def _transition_from_doc(doc) -> Transition:
    _expect_keys(doc, {"guard", "target"}, "transition")
    _expect(isinstance(doc["target"], str), "transition.target")
    guard_doc = doc["guard"]
    _expect(isinstance(guard_doc, dict) and isinstance(guard_doc.get("kind"), str),
            "transition.guard")
    try:
        kind = GuardKind(guard_doc["kind"])
    except ValueError:
        raise EngineError("SCHEMA_VIOLATION", f"guard.kind: {guard_doc['kind']!r}") from None
    if kind is GuardKind.ON_CHOICE:
        _expect_keys(guard_doc, {"kind", "choices"}, "guard")
        return Transition(Guard(kind, choices=_sorted_id_set(guard_doc["choices"],
                                                             "guard.choices")),
                          doc["target"])
    if kind is GuardKind.ON_SCORE_AT_LEAST:
        _expect_keys(guard_doc, {"kind", "threshold"}, "guard")
        threshold = guard_doc["threshold"]
        _expect(isinstance(threshold, int) and not isinstance(threshold, bool),
                "guard.threshold")
        return Transition(Guard(kind, threshold=threshold), doc["target"])
    _expect_keys(guard_doc, {"kind"}, "guard")
    return Transition(Guard(kind), doc["target"])
