"""Ready-made test graphs for demos, simulations and tests."""

from __future__ import annotations

from .evalengine import (
    END,
    Guard,
    GuardKind,
    QuestionKind,
    QuestionNode,
    TestGraph,
    Transition,
)

DEFAULT = Transition(Guard(GuardKind.DEFAULT), END)


def _default_to(target: str) -> tuple[Transition, ...]:
    return (Transition(Guard(GuardKind.DEFAULT), target),)


def linear_graph(questions: int, *, test_id: str | None = None,
                 points: int = 1) -> TestGraph:
    """A fixed chain of single-choice questions (no branching)."""
    nodes = []
    for i in range(1, questions + 1):
        target = f"q{i + 1}" if i < questions else END
        nodes.append(QuestionNode(
            id=f"q{i}",
            prompt=f"Question {i}: pick the first option",
            kind=QuestionKind.SINGLE_CHOICE,
            choices=(("a", "first"), ("b", "second"), ("c", "third")),
            correct=frozenset({"a"}),
            points=points,
            transitions=_default_to(target),
        ))
    return TestGraph(test_id=test_id or f"linear-{questions}",
                     title=f"Linear {questions}-question drill",
                     entry="q1", nodes=tuple(nodes))


def adaptive_demo_graph(test_id: str = "adaptive-demo") -> TestGraph:
    """Three questions on a branching path: a wrong start gets an easier
    follow-up, a correct start a harder one; everyone answers three."""
    q1 = QuestionNode(
        id="q1",
        prompt="Which layer of the OSI model routes packets?",
        kind=QuestionKind.SINGLE_CHOICE,
        choices=(("a", "transport"), ("b", "network"), ("c", "data link")),
        correct=frozenset({"b"}),
        points=2,
        transitions=(
            Transition(Guard(GuardKind.ON_CORRECT), "q2hard"),
            Transition(Guard(GuardKind.DEFAULT), "q2easy"),
        ),
    )
    q2hard = QuestionNode(
        id="q2hard",
        prompt="Select every connection-oriented protocol",
        kind=QuestionKind.MULTI_CHOICE,
        choices=(("a", "TCP"), ("b", "UDP"), ("c", "SCTP")),
        correct=frozenset({"a", "c"}),
        points=3,
        transitions=_default_to("q3"),
    )
    q2easy = QuestionNode(
        id="q2easy",
        prompt="Does UDP guarantee delivery? (yes/no)",
        kind=QuestionKind.SHORT_TEXT,
        choices=(),
        correct=("no",),
        points=1,
        transitions=_default_to("q3"),
    )
    q3 = QuestionNode(
        id="q3",
        prompt="Name the protocol that resolves IP addresses to MAC addresses",
        kind=QuestionKind.SHORT_TEXT,
        choices=(),
        correct=("arp", "address resolution protocol"),
        points=2,
        transitions=(Transition(Guard(GuardKind.DEFAULT), END),),
    )
    return TestGraph(test_id=test_id, title="Networking warm-up",
                     entry="q1", nodes=(q1, q2hard, q2easy, q3))
