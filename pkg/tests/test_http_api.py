"""Live-socket integration: real TCP wire exchanges + HTTP APIs."""

import json
import time
import urllib.error
import urllib.request

import pytest

from mage import canon
from mage.agentcore import EndpointAddress
from mage.hostnode import HostCore, attach_host_api
from mage.runtime import (
    FramedTcpServer,
    JsonHttpServer,
    TcpTransport,
    ThreadScheduler,
    WallClock,
)
from mage.samples import adaptive_demo_graph
from mage.servernode import ServerCore, attach_server_api
from mage.wire import MsgType, doc_frame, frame_decode


def wait_until(predicate, timeout_s=10.0, interval_s=0.05):
    deadline = time.time() + timeout_s
    while time.time() < deadline:
        value = predicate()
        if value:
            return value
        time.sleep(interval_s)
    raise AssertionError("condition not met in time")


def http(method, url, body=None):
    data = canon.encode_canonical(body) if body is not None else None
    request = urllib.request.Request(url, data=data, method=method,
                                     headers={"Content-Type": "application/json"})
    with urllib.request.urlopen(request, timeout=10) as response:
        return response.read()


def http_doc(method, url, body=None):
    return json.loads(http(method, url, body))


class Stack:
    """One server + two hosts on ephemeral localhost ports."""

    def __init__(self, tmp_path):
        self.closers = []
        self.graph = adaptive_demo_graph()
        clock = WallClock()

        server_scheduler = ThreadScheduler()
        self.server = ServerCore(
            home=EndpointAddress("127.0.0.1", 0), tests={self.graph.test_id: self.graph},
            data_dir=tmp_path / "server", clock=clock, scheduler=server_scheduler,
            transport=TcpTransport())
        server_wire = FramedTcpServer(0, self.server.handle_frame, host="127.0.0.1")
        server_wire.start()
        self.server.home = EndpointAddress("127.0.0.1", server_wire.port)
        self.server_wire_port = server_wire.port
        api = JsonHttpServer(0)
        attach_server_api(api, self.server)
        api.start()
        self.api = f"http://127.0.0.1:{api.port}"
        self.closers += [server_wire.close, api.close, server_scheduler.close]

        self.hosts = {}
        self.host_apis = {}
        self.host_endpoints = {}
        for sid in ("s001", "s002"):
            scheduler = ThreadScheduler()
            wire_server = FramedTcpServer(0, lambda f, sid=sid: self.hosts[sid].handle_frame(f),
                                          host="127.0.0.1")
            endpoint = EndpointAddress("127.0.0.1", wire_server.port)
            host = HostCore(endpoint=endpoint, data_dir=tmp_path / sid, clock=clock,
                            scheduler=scheduler, transport=TcpTransport())
            self.hosts[sid] = host
            wire_server.start()
            host_api = JsonHttpServer(0)
            attach_host_api(host_api, host)
            host_api.start()
            self.host_apis[sid] = f"http://127.0.0.1:{host_api.port}"
            self.host_endpoints[sid] = endpoint
            self.closers += [wire_server.close, host_api.close, scheduler.close]

    def roster(self):
        return [[sid, {"host": ep.host, "port": ep.port}]
                for sid, ep in self.host_endpoints.items()]

    def close(self):
        for closer in self.closers:
            try:
                closer()
            except Exception:
                pass


@pytest.fixture
def stack(tmp_path):
    s = Stack(tmp_path)
    yield s
    s.close()


def correct_payload(graph, question):
    node = graph.node(question["id"])
    if question["kind"] == "SHORT_TEXT":
        return node.correct[0]
    return sorted(node.correct)


def complete_exam(stack, sid):
    base = stack.host_apis[sid]
    wait_until(lambda: http_doc("GET", f"{base}/exam").get("active"))
    view = http_doc("GET", f"{base}/exam/question")
    while not view.get("terminal"):
        payload = correct_payload(stack.graph, view["question"])
        view = http_doc("POST", f"{base}/exam/answer",
                        {"question_id": view["question"]["id"], "payload": payload})
    return view


def test_push_exam_end_to_end(stack):
    deadline = int(time.time() * 1000) + 120_000
    session = http_doc("POST", f"{stack.api}/sessions",
                       {"test_id": stack.graph.test_id, "roster": stack.roster(),
                        "deadline": deadline, "mode": "PUSH", "session_id": "e2e"})
    assert session["session_id"] == "e2e"
    outcome = http_doc("POST", f"{stack.api}/sessions/e2e/dispatch", {})
    assert set(outcome) == {"s001", "s002"}

    final_views = {sid: complete_exam(stack, sid) for sid in ("s001", "s002")}
    assert all(v["result"]["percent"] == 100.0 for v in final_views.values())

    wait_until(lambda: http_doc("GET", f"{stack.api}/sessions/e2e")["returned_count"] == 2)
    results_bytes = http("GET", f"{stack.api}/sessions/e2e/results")
    published = http_doc("POST", f"{stack.api}/sessions/e2e/publish", {})
    assert published["published"] is True
    report_bytes = http("GET", f"{stack.api}/reports/e2e")
    assert report_bytes == results_bytes
    rows = json.loads(results_bytes)["rows"]
    assert [r["student_id"] for r in rows] == ["s001", "s002"]
    assert all(r["percent"] == 100.0 for r in rows)

    # grading happened on the hosts, not the server
    view = http_doc("GET", f"{stack.api}/sessions/e2e")
    assert all(entry["status"] == "COMPLETED"
               for entry in view["per_student"].values())


def test_exam_status_endpoint(stack):
    deadline = int(time.time() * 1000) + 120_000
    http_doc("POST", f"{stack.api}/sessions",
             {"test_id": stack.graph.test_id, "roster": stack.roster()[:1],
              "deadline": deadline, "mode": "PUSH", "session_id": "st"})
    http_doc("POST", f"{stack.api}/sessions/st/dispatch", {})
    base = stack.host_apis["s001"]
    wait_until(lambda: http_doc("GET", f"{base}/exam").get("active"))
    status = http_doc("GET", f"{base}/exam/status")
    assert status["answered_count"] == 0 and status["remaining_ms"] > 0
    assert not status["terminal"]


def test_pull_self_assessment(stack):
    base = stack.host_apis["s002"]
    accepted = http_doc("POST", f"{base}/exam/pull",
                        {"server": {"host": "127.0.0.1",
                                    "port": stack.server_wire_port},
                         "student_id": "learner-7", "test_id": stack.graph.test_id})
    assert accepted["accepted"] is True
    final = complete_exam(stack, "s002")
    assert final["terminal"]
    session_id = accepted["session_id"]
    wait_until(lambda: http_doc(
        "GET", f"{stack.api}/sessions/{session_id}")["returned_count"] == 1)
    doc = http_doc("GET", f"{stack.api}/sessions/{session_id}/results")
    assert doc["mode"] == "PULL"
    assert doc["rows"][0]["self_assessment"] is True


def test_pull_unknown_test_http_error(stack):
    base = stack.host_apis["s001"]
    with pytest.raises(urllib.error.HTTPError) as err:
        http_doc("POST", f"{base}/exam/pull",
                 {"server": {"host": "127.0.0.1", "port": stack.server_wire_port},
                  "student_id": "learner-7", "test_id": "no-such-test"})
    assert err.value.code == 404
    assert json.loads(err.value.read())["code"] == "UNKNOWN_TEST"


def test_install_over_wire(stack):
    hosts = [{"host": ep.host, "port": ep.port}
             for ep in stack.host_endpoints.values()]
    created = http_doc("POST", f"{stack.api}/install",
                       {"config_payload": {"ui_lang": "ro"}, "hosts": hosts})
    agent_id = created["agent_id"]
    report = wait_until(lambda: (
        lambda d: d if d["status"] == "COMPLETED" else None)(
        http_doc("GET", f"{stack.api}/install/{agent_id}")))
    assert [step["outcome"] for step in report["report"]] == ["applied", "applied"]
    for sid in stack.hosts:
        config = http_doc("GET", f"{stack.host_apis[sid]}/config")
        assert config == {"applied": {"ui_lang": "ro"}, "version": 1}


def test_wire_ping_pong(stack):
    transport = TcpTransport()
    response = transport.request_sync(
        EndpointAddress("127.0.0.1", stack.server_wire_port),
        doc_frame(MsgType.PING, {"probe": 1}))
    msg_type, payload = frame_decode(response)
    assert msg_type is MsgType.PONG
    assert canon.decode_canonical(payload) == {"probe": 1}


def test_http_unknown_session_404(stack):
    with pytest.raises(urllib.error.HTTPError) as err:
        http_doc("GET", f"{stack.api}/sessions/missing")
    assert err.value.code == 404


def test_tests_endpoint(stack):
    tests = http_doc("GET", f"{stack.api}/tests")
    assert tests == [{"test_id": stack.graph.test_id, "title": stack.graph.title,
                      "version": 1, "questions": 4}]
