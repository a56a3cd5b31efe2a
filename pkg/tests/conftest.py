"""Shared builders: graphs, manual clock/scheduler, capture transport."""

from __future__ import annotations

import random

import pytest

from mage.evalengine import (
    END,
    Guard,
    GuardKind,
    QuestionKind,
    QuestionNode,
    TestGraph,
    Transition,
    advance,
    fresh_state,
)


def make_transitions(spec) -> tuple[Transition, ...]:
    """[(guard, target)] where guard is a GuardKind name, ("ON_CHOICE", ids)
    or ("ON_SCORE_AT_LEAST", n)."""
    out = []
    for guard, target in spec:
        if isinstance(guard, tuple):
            kind, arg = guard
            if kind == "ON_CHOICE":
                out.append(Transition(Guard(GuardKind.ON_CHOICE,
                                            choices=frozenset(arg)), target))
            else:
                out.append(Transition(Guard(GuardKind.ON_SCORE_AT_LEAST,
                                            threshold=arg), target))
        else:
            out.append(Transition(Guard(GuardKind[guard]), target))
    return tuple(out)


def make_node(qid: str, *, kind: str = "SINGLE_CHOICE", prompt: str | None = None,
              choices=(("a", "alpha"), ("b", "beta")), correct=("a",),
              points: int = 1, transitions=(("DEFAULT", END),)) -> QuestionNode:
    question_kind = QuestionKind[kind]
    if question_kind is QuestionKind.SHORT_TEXT:
        built_correct: frozenset[str] | tuple[str, ...] = tuple(correct)
        built_choices: tuple = ()
    else:
        built_correct = frozenset(correct)
        built_choices = tuple(choices)
    return QuestionNode(
        id=qid,
        prompt=prompt if prompt is not None else f"prompt {qid}",
        kind=question_kind,
        choices=built_choices,
        correct=built_correct,
        points=points,
        transitions=make_transitions(transitions),
    )


def make_graph(nodes, entry: str = "q1", test_id: str = "t1",
               title: str = "test graph", version: int = 1) -> TestGraph:
    return TestGraph(test_id=test_id, title=title, entry=entry,
                     nodes=tuple(nodes), version=version)


def chain_graph(n: int, *, points: int = 1, test_id: str = "chain") -> TestGraph:
    nodes = []
    for i in range(1, n + 1):
        target = f"q{i + 1}" if i < n else END
        nodes.append(make_node(f"q{i}", points=points,
                               transitions=(("DEFAULT", target),)))
    return make_graph(nodes, test_id=test_id)


def random_graph(rng: random.Random, max_nodes: int = 6,
                 test_id: str = "rnd") -> TestGraph:
    """Valid-by-construction random graph: node i's default transition goes
    to node i+1 (so everything is reachable), guarded transitions only jump
    forward (so it stays acyclic)."""
    n = rng.randint(1, max_nodes)
    nodes = []
    for i in range(1, n + 1):
        later = [f"q{j}" for j in range(i + 1, n + 1)] + [END]
        kind = rng.choice(["SINGLE_CHOICE", "MULTI_CHOICE", "SHORT_TEXT"])
        points = rng.randint(1, 5)
        if kind == "SHORT_TEXT":
            choices: tuple = ()
            correct: tuple | frozenset = ("yes", "indeed")
        else:
            ids = ["a", "b", "c", "d"][: rng.randint(2, 4)]
            choices = tuple((cid, f"choice {cid}") for cid in ids)
            if kind == "SINGLE_CHOICE":
                correct = frozenset({rng.choice(ids)})
            else:
                size = rng.randint(1, len(ids))
                correct = frozenset(rng.sample(ids, size))
        transitions = []
        for _ in range(rng.randint(0, 2)):
            guard = rng.choice(["ON_CORRECT", "ON_INCORRECT", "ON_CHOICE",
                                "ON_SCORE_AT_LEAST"])
            target = rng.choice(later)
            if guard == "ON_CHOICE":
                if kind == "SHORT_TEXT":
                    continue
                ids = [cid for cid, _ in choices]
                subset = frozenset(rng.sample(ids, rng.randint(1, len(ids))))
                transitions.append(Transition(Guard(GuardKind.ON_CHOICE,
                                                    choices=subset), target))
            elif guard == "ON_SCORE_AT_LEAST":
                transitions.append(Transition(
                    Guard(GuardKind.ON_SCORE_AT_LEAST,
                          threshold=rng.randint(0, 12)), target))
            else:
                transitions.append(Transition(Guard(GuardKind[guard]), target))
        default_target = f"q{i + 1}" if i < n else END
        transitions.append(Transition(Guard(GuardKind.DEFAULT), default_target))
        nodes.append(QuestionNode(
            id=f"q{i}", prompt=f"question {i}", kind=QuestionKind[kind],
            choices=choices, correct=correct, points=points,
            transitions=tuple(transitions)))
    return make_graph(nodes, test_id=test_id)


def replay_answers(graph: TestGraph, answers) -> tuple[tuple[str, ...], int]:
    """Drive the stepwise engine with a fixed answer list; must reach END."""
    state = fresh_state(graph)
    for answer in answers:
        assert state.current == answer.question_id
        state, _ = advance(graph, state, answer)
    assert state.current == END
    return state.presented, state.raw_score


class ManualClock:
    def __init__(self, t: int = 0):
        self.t = t

    def now(self) -> int:
        return self.t

    def advance(self, ms: int) -> None:
        self.t += ms


class ManualScheduler:
    """Timers fire only when the test says so."""

    def __init__(self, clock: ManualClock):
        self.clock = clock
        self.pending: list[tuple[int, int, object]] = []
        self._seq = 0

    def schedule(self, delay_ms: int, fn) -> None:
        self._seq += 1
        self.pending.append((self.clock.now() + max(0, delay_ms), self._seq, fn))

    def fire_due(self) -> int:
        fired = 0
        while True:
            due = sorted((p for p in self.pending if p[0] <= self.clock.now()),
                         key=lambda p: (p[0], p[1]))
            if not due:
                return fired
            item = due[0]
            self.pending.remove(item)
            item[2]()
            fired += 1


class CaptureTransport:
    """Records outbound frames; tests feed responses back explicitly."""

    def __init__(self):
        self.sent: list[tuple] = []  # (to, frame, on_response)

    def request(self, to, frame, on_response) -> None:
        self.sent.append((to, frame, on_response))

    def respond(self, index: int, frame: bytes) -> None:
        callback = self.sent[index][2]
        if callback is not None:
            callback(frame)


@pytest.fixture
def clock():
    return ManualClock()


@pytest.fixture
def scheduler(clock):
    return ManualScheduler(clock)


@pytest.fixture
def transport():
    return CaptureTransport()
