"""Server platform: repository, sessions, idempotent ingestion, compilation."""

import pytest

from conftest import (
    CaptureTransport,
    ManualClock,
    ManualScheduler,
    chain_graph,
    make_graph,
    make_node,
)
from mage import canon
from mage.agentcore import (
    AgentStatus,
    AnswerRecorded,
    Arrived,
    Dispatched,
    EndpointAddress,
    EvalDone,
    create_evaluation_agent,
    step_agent,
)
from mage.evalengine import Answer, EvalState, graph_to_doc
from mage.servernode import (
    PULL,
    PUSH,
    ServerCore,
    ServerError,
    load_test_repository,
    save_test,
)
from mage.wire import MsgType, doc_frame, frame_decode

HOME = EndpointAddress("server", 7400)


def write_test_file(directory, graph):
    return save_test(directory, graph)


def make_core(tmp_path, clock=None, scheduler=None, transport=None, **kw):
    clock = clock or ManualClock()
    scheduler = scheduler or ManualScheduler(clock)
    transport = transport or CaptureTransport()
    core = ServerCore(home=HOME, tests={"chain": chain_graph(2, test_id="chain")},
                      data_dir=tmp_path / "srv", clock=clock, scheduler=scheduler,
                      transport=transport, seed=1, **kw)
    return core, clock, scheduler, transport


def roster(n):
    return [(f"s{i:03d}", EndpointAddress(f"s{i:03d}", 7401)) for i in range(1, n + 1)]


def returning_snapshot(core, session_id, student_id, *, payloads=None, agent_id=None):
    """Walk a real agent through its lifecycle up to RETURNING."""
    session = core.sessions[session_id]
    agent_id = agent_id or session.per_student[student_id].agent_id
    graph = core.tests[session.test_id]
    snapshot = create_evaluation_agent(session_id, student_id, graph, HOME,
                                       session.endpoint_of(student_id),
                                       session.deadline, agent_id=agent_id)
    snapshot = step_agent(step_agent(snapshot, Dispatched()), Arrived())
    for payload in payloads or []:
        assert isinstance(snapshot.state, EvalState)
        answer = Answer(question_id=snapshot.state.current,
                        payload=frozenset(payload) if not isinstance(payload, str) else payload,
                        answered_at=1000)
        snapshot = step_agent(snapshot, AnswerRecorded(answer))
    return step_agent(snapshot, EvalDone())


# === repository ===

def test_load_repository(tmp_path):
    write_test_file(tmp_path, chain_graph(2, test_id="t-a"))
    write_test_file(tmp_path, chain_graph(3, test_id="t-b"))
    report = load_test_repository(tmp_path)
    assert set(report.tests) == {"t-a", "t-b"} and not report.skipped


def test_load_repository_skips_invalid(tmp_path):
    write_test_file(tmp_path, chain_graph(1, test_id="ok"))
    cyclic = make_graph([
        make_node("q1", transitions=(("DEFAULT", "q2"),)),
        make_node("q2", transitions=(("DEFAULT", "q1"),)),
    ], test_id="broken")
    (tmp_path / "broken.json").write_bytes(
        canon.encode_canonical(graph_to_doc(cyclic)))
    report = load_test_repository(tmp_path)
    assert set(report.tests) == {"ok"}
    assert any(name == "broken.json" and "CYCLE" in reason
               for name, reason in report.skipped)


def test_load_repository_empty(tmp_path):
    report = load_test_repository(tmp_path)
    assert report.tests == {} and not report.skipped


def test_load_repository_missing_dir(tmp_path):
    with pytest.raises(ServerError) as err:
        load_test_repository(tmp_path / "absent")
    assert err.value.code == "IO_FAILURE"


def test_load_repository_rejects_non_canonical(tmp_path):
    (tmp_path / "pretty.json").write_text('{\n  "test_id": "x"\n}')
    report = load_test_repository(tmp_path)
    assert not report.tests and report.skipped[0][1] == "NON_CANONICAL"


# === sessions ===

def test_create_session_pending_entries(tmp_path):
    core, *_ = make_core(tmp_path)
    session = core.create_session("chain", roster(3), 60_000)
    assert len(session.per_student) == 3
    assert all(r.status is AgentStatus.CREATED and r.agent_id is None
               for r in session.per_student.values())


def test_create_session_unknown_test(tmp_path):
    core, *_ = make_core(tmp_path)
    with pytest.raises(ServerError) as err:
        core.create_session("nope", roster(1), 1)
    assert err.value.code == "UNKNOWN_TEST"


def test_create_session_empty_roster_rules(tmp_path):
    core, *_ = make_core(tmp_path)
    with pytest.raises(ServerError) as err:
        core.create_session("chain", [], 1, PUSH)
    assert err.value.code == "EMPTY_ROSTER"
    session = core.create_session("chain", [], 1, PULL)  # students join via pull
    assert session.mode == PULL


def test_dispatch_all_marks_in_transit(tmp_path):
    core, clock, scheduler, transport = make_core(tmp_path)
    session = core.create_session("chain", roster(3), 60_000)
    outcomes = core.dispatch_all(session.session_id)
    assert outcomes == {sid: "IN_TRANSIT" for sid, _ in roster(3)}
    assert len(transport.sent) == 3
    assert {r.status for r in session.per_student.values()} == {AgentStatus.IN_TRANSIT}


def test_dispatch_all_twice_rejected(tmp_path):
    core, *_ = make_core(tmp_path)
    session = core.create_session("chain", roster(1), 60_000)
    core.dispatch_all(session.session_id)
    with pytest.raises(ServerError) as err:
        core.dispatch_all(session.session_id)
    assert err.value.code == "ALREADY_DISPATCHED"


def test_dispatch_ack_moves_to_executing(tmp_path):
    core, clock, scheduler, transport = make_core(tmp_path)
    session = core.create_session("chain", roster(1), 60_000)
    core.dispatch_all(session.session_id)
    record = session.per_student["s001"]
    transport.respond(0, doc_frame(MsgType.DISPATCH_ACK,
                                   {"agent_id": record.agent_id, "seq": 2,
                                    "status": "EXECUTING"}))
    assert record.status is AgentStatus.EXECUTING and record.last_seq == 2


def test_unreachable_student_expires_after_give_up(tmp_path):
    core, clock, scheduler, transport = make_core(tmp_path)
    session = core.create_session("chain", roster(2), 10_000)
    core.dispatch_all(session.session_id)
    record = session.per_student["s001"]
    transport.respond(0, doc_frame(MsgType.DISPATCH_ACK,
                                   {"agent_id": record.agent_id, "seq": 2,
                                    "status": "EXECUTING"}))
    core.ingest_return(returning_snapshot(core, session.session_id, "s001",
                                          payloads=[{"a"}, {"a"}]))
    while session.per_student["s002"].status is AgentStatus.IN_TRANSIT:
        clock.advance(61_000)
        scheduler.fire_due()
    assert session.per_student["s002"].status is AgentStatus.EXPIRED
    assert session.per_student["s002"].error == "DEADLINE_EXCEEDED"
    assert session.per_student["s001"].status is AgentStatus.COMPLETED
    assert sorted(core.compile_results(session.session_id)["missing"]) == ["s002"]


# === ingestion ===

def test_ingest_first_return(tmp_path):
    core, *_ = make_core(tmp_path)
    session = core.create_session("chain", roster(1), 60_000)
    core.dispatch_all(session.session_id)
    snapshot = returning_snapshot(core, session.session_id, "s001",
                                  payloads=[{"a"}, {"a"}])
    ack = core.ingest_return(snapshot)
    assert ack == {"agent_id": snapshot.agent_id, "seq": snapshot.seq}
    assert session.grade_book["s001"].result.percent == 100.0
    assert session.per_student["s001"].status is AgentStatus.COMPLETED


def test_ingest_duplicate_no_delta(tmp_path):
    core, *_ = make_core(tmp_path)
    session = core.create_session("chain", roster(1), 60_000)
    core.dispatch_all(session.session_id)
    snapshot = returning_snapshot(core, session.session_id, "s001",
                                  payloads=[{"a"}, {"b"}])
    first_ack = core.ingest_return(snapshot)
    before = canon.encode_canonical(core.compile_results(session.session_id))
    second_ack = core.ingest_return(snapshot)
    after = canon.encode_canonical(core.compile_results(session.session_id))
    assert first_ack == second_ack
    assert before == after


def test_ingest_unknown_agent(tmp_path):
    core, *_ = make_core(tmp_path)
    session = core.create_session("chain", roster(1), 60_000)
    core.dispatch_all(session.session_id)
    snapshot = returning_snapshot(core, session.session_id, "s001",
                                  payloads=[{"a"}, {"a"}], agent_id="foreign-agent")
    with pytest.raises(ServerError) as err:
        core.ingest_return(snapshot)
    assert err.value.code == "UNKNOWN_AGENT"


def test_ingest_after_close_rejected(tmp_path):
    core, clock, scheduler, _ = make_core(tmp_path)
    session = core.create_session("chain", roster(1), 10_000)
    core.dispatch_all(session.session_id)
    snapshot = returning_snapshot(core, session.session_id, "s001",
                                  payloads=[{"a"}, {"a"}])
    clock.advance(10_000 + 300_000)
    core.expire_overdue(clock.now())
    assert session.closed
    assert session.per_student["s001"].status is AgentStatus.EXPIRED
    with pytest.raises(ServerError) as err:
        core.ingest_return(snapshot)
    assert err.value.code == "SESSION_CLOSED"


# === compile & publish ===

def branchy_core(tmp_path):
    graph = make_graph([
        make_node("q1", transitions=(("ON_CORRECT", "q2"), ("DEFAULT", "q3"))),
        make_node("q2"), make_node("q3"),
    ], test_id="branchy")
    clock = ManualClock()
    scheduler = ManualScheduler(clock)
    core = ServerCore(home=HOME, tests={"branchy": graph}, data_dir=tmp_path / "srv",
                      clock=clock, scheduler=scheduler, transport=CaptureTransport(),
                      seed=2)
    return core


def test_compile_aggregates_and_difficulty(tmp_path):
    core = branchy_core(tmp_path)
    session = core.create_session("branchy", roster(3), 60_000)
    core.dispatch_all(session.session_id)
    # A: q1 right, q2 right; B: q1 right, q2 wrong; C: q1 wrong -> q3 right
    core.ingest_return(returning_snapshot(core, session.session_id, "s001",
                                          payloads=[{"a"}, {"a"}]))
    core.ingest_return(returning_snapshot(core, session.session_id, "s002",
                                          payloads=[{"a"}, {"b"}]))
    core.ingest_return(returning_snapshot(core, session.session_id, "s003",
                                          payloads=[{"b"}, {"a"}]))
    doc = core.compile_results(session.session_id)
    assert [row["student_id"] for row in doc["rows"]] == ["s001", "s002", "s003"]
    assert doc["aggregates"]["mean_percent"] == pytest.approx((100 + 50 + 50) / 3)
    assert doc["aggregates"]["median_percent"] == 50.0
    # q2 presented to two students, one full credit
    assert doc["aggregates"]["question_difficulty"]["q2"] == 0.5
    assert doc["aggregates"]["question_difficulty"]["q1"] == pytest.approx(2 / 3)
    assert doc["missing"] == []


def test_compile_simple_mean_median(tmp_path):
    core, *_ = make_core(tmp_path)
    session = core.create_session("chain", roster(3), 60_000)
    core.dispatch_all(session.session_id)
    payload_sets = {"s001": [{"b"}, {"b"}], "s002": [{"a"}, {"b"}],
                    "s003": [{"a"}, {"a"}]}  # 0%, 50%, 100%
    for sid, payloads in payload_sets.items():
        core.ingest_return(returning_snapshot(core, session.session_id, sid,
                                              payloads=payloads))
    aggregates = core.compile_results(session.session_id)["aggregates"]
    assert aggregates["mean_percent"] == 50.0
    assert aggregates["median_percent"] == 50.0


def test_compile_empty_session(tmp_path):
    core, *_ = make_core(tmp_path)
    session = core.create_session("chain", roster(2), 60_000)
    doc = core.compile_results(session.session_id)
    assert doc["rows"] == []
    assert doc["missing"] == ["s001", "s002"]
    assert doc["aggregates"]["mean_percent"] is None
    assert doc["aggregates"]["median_percent"] is None


def test_compile_deterministic_bytes(tmp_path):
    core, *_ = make_core(tmp_path)
    session = core.create_session("chain", roster(1), 60_000)
    core.dispatch_all(session.session_id)
    core.ingest_return(returning_snapshot(core, session.session_id, "s001",
                                          payloads=[{"a"}, {"a"}]))
    first = canon.encode_canonical(core.compile_results(session.session_id))
    second = canon.encode_canonical(core.compile_results(session.session_id))
    assert first == second


def test_publish_writes_report(tmp_path):
    core, *_ = make_core(tmp_path)
    session = core.create_session("chain", roster(1), 60_000)
    core.dispatch_all(session.session_id)
    core.ingest_return(returning_snapshot(core, session.session_id, "s001",
                                          payloads=[{"a"}, {"a"}]))
    path = core.publish_results(session.session_id)
    assert path.read_bytes() == canon.encode_canonical(
        core.compile_results(session.session_id))
    assert core.report_bytes(session.session_id) == path.read_bytes()
    assert session.published
    again = core.publish_results(session.session_id)
    assert again.read_bytes() == path.read_bytes()


def test_publish_empty_session(tmp_path):
    core, *_ = make_core(tmp_path)
    session = core.create_session("chain", roster(1), 60_000)
    path = core.publish_results(session.session_id)
    doc = canon.decode_canonical(path.read_bytes())
    assert doc["rows"] == []


# === crash recovery ===

def test_replay_restores_sessions(tmp_path):
    core, *_ = make_core(tmp_path)
    session = core.create_session("chain", roster(2), 60_000)
    core.dispatch_all(session.session_id)
    core.ingest_return(returning_snapshot(core, session.session_id, "s001",
                                          payloads=[{"a"}, {"b"}]))
    view_before = core.session_view(session.session_id)
    results_before = canon.encode_canonical(core.compile_results(session.session_id))

    clock = ManualClock()
    revived = ServerCore(home=HOME, tests={"chain": chain_graph(2, test_id="chain")},
                         data_dir=tmp_path / "srv", clock=clock,
                         scheduler=ManualScheduler(clock),
                         transport=CaptureTransport(), seed=1)
    assert revived.session_view(session.session_id) == view_before
    assert canon.encode_canonical(
        revived.compile_results(session.session_id)) == results_before


# === pull ===

def test_pull_creates_session_and_dispatches(tmp_path):
    core, clock, scheduler, transport = make_core(tmp_path)
    reply = EndpointAddress("student-platform", 7401)
    session_id, agent_id = core.handle_pull_request("s-self", "chain", reply)
    assert session_id.startswith("pull-")
    assert core.sessions[session_id].mode == PULL
    to, frame, _ = transport.sent[0]
    assert to == reply
    msg_type, _ = frame_decode(frame)
    assert msg_type is MsgType.DISPATCH


def test_pull_unknown_test(tmp_path):
    core, *_ = make_core(tmp_path)
    with pytest.raises(ServerError) as err:
        core.handle_pull_request("s-self", "missing", EndpointAddress("x", 1))
    assert err.value.code == "UNKNOWN_TEST"


def test_pull_unknown_student_with_registry(tmp_path):
    core, *_ = make_core(tmp_path, known_students={"enrolled"})
    with pytest.raises(ServerError) as err:
        core.handle_pull_request("stranger", "chain", EndpointAddress("x", 1))
    assert err.value.code == "UNKNOWN_STUDENT"
    core.handle_pull_request("enrolled", "chain", EndpointAddress("x", 1))


def test_repeated_pull_distinct_agents(tmp_path):
    core, *_ = make_core(tmp_path)
    reply = EndpointAddress("student-platform", 7401)
    first = core.handle_pull_request("s-self", "chain", reply)
    second = core.handle_pull_request("s-self", "chain", reply)
    assert first[0] != second[0] and first[1] != second[1]
    for session_id, _ in (first, second):
        rows = core.compile_results(session_id)
        assert rows["mode"] == PULL


def test_pull_rows_marked_self_assessment(tmp_path):
    core, *_ = make_core(tmp_path)
    reply = EndpointAddress("student-platform", 7401)
    session_id, agent_id = core.handle_pull_request("s-self", "chain", reply)
    snapshot = returning_snapshot(core, session_id, "s-self",
                                  payloads=[{"a"}, {"a"}], agent_id=agent_id)
    core.ingest_return(snapshot)
    doc = core.compile_results(session_id)
    assert doc["rows"][0]["self_assessment"] is True


# === wire handling ===

def test_handle_frame_ping_pong(tmp_path):
    core, *_ = make_core(tmp_path)
    response = core.handle_frame(doc_frame(MsgType.PING, {"hello": 1}))
    msg_type, payload = frame_decode(response)
    assert msg_type is MsgType.PONG
    assert canon.decode_canonical(payload) == {"hello": 1}


def test_handle_frame_return_roundtrip(tmp_path):
    from mage.agentcore import encode_snapshot
    from mage.wire import frame_encode
    core, *_ = make_core(tmp_path)
    session = core.create_session("chain", roster(1), 60_000)
    core.dispatch_all(session.session_id)
    snapshot = returning_snapshot(core, session.session_id, "s001",
                                  payloads=[{"a"}, {"a"}])
    response = core.handle_frame(frame_encode(MsgType.RETURN,
                                              encode_snapshot(snapshot)))
    msg_type, payload = frame_decode(response)
    assert msg_type is MsgType.RETURN_ACK
    assert canon.decode_canonical(payload)["agent_id"] == snapshot.agent_id


def test_handle_frame_error_for_unknown_agent(tmp_path):
    from mage.agentcore import encode_snapshot
    from mage.wire import frame_encode
    core, *_ = make_core(tmp_path)
    session = core.create_session("chain", roster(1), 60_000)
    core.dispatch_all(session.session_id)
    snapshot = returning_snapshot(core, session.session_id, "s001",
                                  payloads=[{"a"}, {"a"}], agent_id="nobody")
    response = core.handle_frame(frame_encode(MsgType.RETURN,
                                              encode_snapshot(snapshot)))
    msg_type, payload = frame_decode(response)
    assert msg_type is MsgType.ERROR
    assert canon.decode_canonical(payload)["code"] == "UNKNOWN_AGENT"
