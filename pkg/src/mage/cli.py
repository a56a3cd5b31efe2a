"""Command-line entry points.

examserve  - run the teacher platform (wire listener + HTTP admin API)
examhost   - run a student platform (wire listener + local exam API)
examctl    - drive the server admin API (thin HTTP client)
examsim    - deterministic campaign simulator and mode comparison
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import threading
import time
import urllib.error
import urllib.request
from pathlib import Path

from . import canon
from .agentcore import EndpointAddress
from .evalengine import graph_from_doc, graph_to_doc, validate_graph
from .harness import (
    AGENT,
    MODES,
    AnswerPolicy,
    NetworkModel,
    compare,
    run_campaign,
)
from .hostnode import HostCore, attach_host_api
from .runtime import (
    FramedTcpServer,
    JsonHttpServer,
    TcpTransport,
    ThreadScheduler,
    WallClock,
)
from .servernode import ServerCore, attach_server_api, load_test_repository, save_test


def _env(name: str, default):
    value = os.environ.get(name)
    return type(default)(value) if value is not None else default


def _endpoint(text: str) -> EndpointAddress:
    host, _, port = text.rpartition(":")
    if not host:
        raise argparse.ArgumentTypeError(f"expected host:port, got {text!r}")
    return EndpointAddress(host, int(port))


def _print_doc(doc) -> None:
    sys.stdout.buffer.write(canon.encode_canonical(doc) + b"\n")
    sys.stdout.buffer.flush()


# ---------------------------------------------------------------------------
# examserve


def main_examserve(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="examserve",
                                     description="Run the exam server platform.")
    parser.add_argument("--port", type=int, default=_env("MAGE_SERVER_PORT", 7400),
                        help="wire (agent migration) port")
    parser.add_argument("--api-port", type=int, default=_env("MAGE_SERVER_API_PORT", 7480),
                        help="HTTP admin/publication port")
    parser.add_argument("--tests-dir", default=_env("MAGE_TESTS_DIR", "tests-repo"))
    parser.add_argument("--data-dir", default=_env("MAGE_DATA_DIR", "server-data"))
    parser.add_argument("--advertise-host", default="127.0.0.1",
                        help="host name agents use to come home")
    parser.add_argument("--web-root", default=os.environ.get("MAGE_WEB_ROOT"),
                        help="directory with the teacher dashboard assets")
    args = parser.parse_args(argv)

    repo = load_test_repository(_ensure_dir(args.tests_dir))
    for name, reason in repo.skipped:
        print(f"skipping test file {name}: {reason}", file=sys.stderr)

    core = ServerCore(
        home=EndpointAddress(args.advertise_host, args.port),
        tests=repo.tests, data_dir=args.data_dir, clock=WallClock(),
        scheduler=ThreadScheduler(), transport=TcpTransport())
    wire_server = FramedTcpServer(args.port, core.handle_frame)
    api = JsonHttpServer(args.api_port, host="0.0.0.0",
                         web_root=Path(args.web_root) if args.web_root else None,
                         index="dashboard.html")
    attach_server_api(api, core)
    wire_server.start()
    api.start()
    print(f"examserve: wire :{wire_server.port}  api :{api.port}  "
          f"tests {len(repo.tests)}  data {args.data_dir}")
    try:
        threading.Event().wait()
    except KeyboardInterrupt:
        pass
    return 0


def _ensure_dir(path: str) -> str:
    Path(path).mkdir(parents=True, exist_ok=True)
    return path


# ---------------------------------------------------------------------------
# examhost


def main_examhost(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="examhost",
                                     description="Run a student platform.")
    parser.add_argument("--port", type=int, default=_env("MAGE_HOST_PORT", 7401))
    parser.add_argument("--api-port", type=int, default=_env("MAGE_HOST_API_PORT", 7481))
    parser.add_argument("--data-dir", default=_env("MAGE_DATA_DIR", "host-data"))
    parser.add_argument("--advertise-host", default="127.0.0.1",
                        help="endpoint install itineraries must use for this host")
    parser.add_argument("--web-root", default=os.environ.get("MAGE_WEB_ROOT"),
                        help="directory with the student exam client assets")
    args = parser.parse_args(argv)

    core = HostCore(
        endpoint=EndpointAddress(args.advertise_host, args.port),
        data_dir=args.data_dir, clock=WallClock(), scheduler=ThreadScheduler(),
        transport=TcpTransport())
    wire_server = FramedTcpServer(args.port, core.handle_frame)
    api = JsonHttpServer(args.api_port, host="0.0.0.0",
                         web_root=Path(args.web_root) if args.web_root else None,
                         index="exam.html")
    attach_host_api(api, core)
    wire_server.start()
    api.start()
    print(f"examhost: wire :{wire_server.port}  api :{api.port}  data {args.data_dir}")
    try:
        threading.Event().wait()
    except KeyboardInterrupt:
        pass
    return 0


# ---------------------------------------------------------------------------
# examctl


class _Api:
    def __init__(self, base: str):
        self.base = base.rstrip("/")

    def call(self, method: str, path: str, body: dict | None = None) -> bytes:
        data = canon.encode_canonical(body) if body is not None else None
        request = urllib.request.Request(self.base + path, data=data, method=method)
        request.add_header("Content-Type", "application/json")
        try:
            with urllib.request.urlopen(request) as response:
                return response.read()
        except urllib.error.HTTPError as exc:
            detail = exc.read().decode("utf-8", "replace")
            raise SystemExit(f"examctl: {exc.code} {detail}") from exc
        except urllib.error.URLError as exc:
            raise SystemExit(f"examctl: cannot reach {self.base}: {exc.reason}") from exc


def _parse_roster(text: str) -> list:
    roster = []
    for item in text.split(","):
        sid, _, endpoint = item.partition("=")
        if not endpoint:
            raise SystemExit(f"examctl: roster entry {item!r} must be sid=host:port")
        ep = _endpoint(endpoint)
        roster.append([sid, {"host": ep.host, "port": ep.port}])
    return roster


def main_examctl(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="examctl",
                                     description="Control a running exam server.")
    parser.add_argument("--server", default=os.environ.get("MAGE_SERVER_API",
                                                           "http://127.0.0.1:7480"))
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("list-tests")

    add_test = sub.add_parser("add-test", help="canonicalize a test file into the repository")
    add_test.add_argument("file")
    add_test.add_argument("--tests-dir", default=_env("MAGE_TESTS_DIR", "tests-repo"))

    create = sub.add_parser("create-session")
    create.add_argument("--test", required=True)
    create.add_argument("--roster", required=True, help="sid=host:port,sid=host:port,...")
    create.add_argument("--deadline-ms", type=int, help="absolute logical deadline")
    create.add_argument("--duration-ms", type=int, help="deadline = now + duration")
    create.add_argument("--mode", default="PUSH", choices=["PUSH", "PULL"])
    create.add_argument("--session")

    for name in ("dispatch", "session", "results", "publish"):
        command = sub.add_parser(name)
        command.add_argument("--session", required=True)

    install = sub.add_parser("install")
    install.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    install.add_argument("--hosts", required=True, help="host:port,host:port,...")
    install.add_argument("--wait", type=float, default=0.0,
                         help="seconds to poll for the final report")

    args = parser.parse_args(argv)
    api = _Api(args.server)

    if args.command == "list-tests":
        sys.stdout.buffer.write(api.call("GET", "/tests") + b"\n")
    elif args.command == "add-test":
        raw = json.loads(Path(args.file).read_text(encoding="utf-8"))
        graph = graph_from_doc(raw)
        report = validate_graph(graph)
        if not report.ok:
            raise SystemExit(f"examctl: invalid test: {sorted(report.rules())}")
        path = save_test(args.tests_dir, graph)
        print(f"wrote {path}")
    elif args.command == "create-session":
        if args.deadline_ms is None and args.duration_ms is None:
            raise SystemExit("examctl: need --deadline-ms or --duration-ms")
        deadline = args.deadline_ms
        if deadline is None:
            deadline = int(time.time() * 1000) + args.duration_ms
        body = {"test_id": args.test, "roster": _parse_roster(args.roster),
                "deadline": deadline, "mode": args.mode}
        if args.session:
            body["session_id"] = args.session
        sys.stdout.buffer.write(api.call("POST", "/sessions", body) + b"\n")
    elif args.command == "dispatch":
        sys.stdout.buffer.write(
            api.call("POST", f"/sessions/{args.session}/dispatch", {}) + b"\n")
    elif args.command == "session":
        sys.stdout.buffer.write(api.call("GET", f"/sessions/{args.session}") + b"\n")
    elif args.command == "results":
        sys.stdout.buffer.write(api.call("GET", f"/sessions/{args.session}/results") + b"\n")
    elif args.command == "publish":
        sys.stdout.buffer.write(
            api.call("POST", f"/sessions/{args.session}/publish", {}) + b"\n")
    elif args.command == "install":
        payload = {}
        for item in args.set:
            key, _, value = item.partition("=")
            payload[key] = value
        hosts = []
        for part in args.hosts.split(","):
            ep = _endpoint(part)
            hosts.append({"host": ep.host, "port": ep.port})
        raw = api.call("POST", "/install", {"config_payload": payload, "hosts": hosts})
        doc = json.loads(raw)
        deadline = time.time() + args.wait
        while args.wait and doc.get("status") != "COMPLETED" and time.time() < deadline:
            time.sleep(0.5)
            doc = json.loads(api.call("GET", f"/install/{doc['agent_id']}"))
        _print_doc(doc)
    return 0


# ---------------------------------------------------------------------------
# examsim


def _parse_partition(text: str) -> tuple[str, int, int]:
    try:
        node, start, end = text.split(":")
        return node, int(start), int(end)
    except ValueError:
        raise SystemExit(f"examsim: partition must be node:t0:t1, got {text!r}") from None


def main_examsim(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="examsim",
                                     description="Deterministic exam campaign simulator.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run")
    source = run.add_mutually_exclusive_group(required=True)
    source.add_argument("--test-file", help="canonical test document")
    source.add_argument("--test", help="test id inside --tests-dir")
    run.add_argument("--tests-dir", default=_env("MAGE_TESTS_DIR", "tests-repo"))
    run.add_argument("--students", type=int, default=1)
    run.add_argument("--policy", default="always-correct",
                     choices=["always-correct", "always-wrong", "random"])
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--latency", type=int, default=10)
    run.add_argument("--drop", type=float, default=0.0)
    run.add_argument("--partition", action="append", default=[], metavar="NODE:T0:T1")
    run.add_argument("--duplicate-returns", action="store_true",
                     help="fault injection: deliver every RETURN frame twice")
    run.add_argument("--mode", default=AGENT, choices=list(MODES))
    run.add_argument("--deadline", type=int, default=600_000)
    run.add_argument("--think", type=int, default=1000,
                     help="simulated per-question answer time (ms)")
    run.add_argument("--out", help="write metrics JSON here")
    run.add_argument("--results", help="write compiled results JSON here")
    run.add_argument("--trace", help="write the event trace JSON here")

    cmp_cmd = sub.add_parser("compare")
    cmp_cmd.add_argument("a")
    cmp_cmd.add_argument("b")

    gen = sub.add_parser("gen-test", help="write a sample test document")
    gen.add_argument("--kind", default="adaptive", choices=["adaptive", "linear"])
    gen.add_argument("--questions", type=int, default=5)
    gen.add_argument("--out", required=True)

    args = parser.parse_args(argv)

    if args.command == "gen-test":
        from .samples import adaptive_demo_graph, linear_graph
        graph = adaptive_demo_graph() if args.kind == "adaptive" \
            else linear_graph(args.questions)
        Path(args.out).write_bytes(canon.encode_canonical(graph_to_doc(graph)))
        print(f"wrote {args.out} ({graph.test_id})")
        return 0

    if args.command == "compare":
        doc_a = json.loads(Path(args.a).read_text(encoding="utf-8"))
        doc_b = json.loads(Path(args.b).read_text(encoding="utf-8"))
        table = compare(doc_a, doc_b)
        print(table["text"])
        return 0

    if args.test_file:
        graph = graph_from_doc(canon.decode_canonical(Path(args.test_file).read_bytes()))
    else:
        repo = load_test_repository(args.tests_dir)
        if args.test not in repo.tests:
            raise SystemExit(f"examsim: unknown test {args.test!r}")
        graph = repo.tests[args.test]

    network = NetworkModel(
        latency_ms=args.latency, drop_probability=args.drop,
        partitions=tuple(_parse_partition(p) for p in args.partition),
        seed=args.seed,
        duplicate_kinds=("RETURN",) if args.duplicate_returns else ())
    outcome = run_campaign(graph, args.students, AnswerPolicy(kind=args.policy),
                           network, args.deadline, mode=args.mode,
                           think_ms=args.think)
    metrics_doc = outcome.metrics.to_doc()
    if args.out:
        Path(args.out).write_bytes(canon.encode_canonical(metrics_doc))
    if args.results:
        Path(args.results).write_bytes(canon.encode_canonical(outcome.results))
    if args.trace:
        Path(args.trace).write_bytes(outcome.trace.encode())
    _print_doc(metrics_doc)
    return 0


if __name__ == "__main__":  # python -m mage.cli <tool> ...
    tool = sys.argv[1] if len(sys.argv) > 1 else ""
    mains = {"examserve": main_examserve, "examhost": main_examhost,
             "examctl": main_examctl, "examsim": main_examsim}
    if tool not in mains:
        print(f"usage: python -m mage.cli {{{'|'.join(mains)}}} ...", file=sys.stderr)
        sys.exit(2)
    sys.exit(mains[tool](sys.argv[2:]))
