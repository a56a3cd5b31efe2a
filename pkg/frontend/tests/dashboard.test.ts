import { describe, expect, it } from "vitest";

import { ServerApi } from "../src/api.js";
import { DashboardFlow, parseRoster } from "../src/dashboard.js";
import { FakeBackend } from "./fakes.js";

const sessionDoc = (returned: number) => ({
  session_id: "ses-1",
  test_id: "demo",
  mode: "PUSH",
  deadline: 99,
  dispatched: returned >= 0,
  published: false,
  closed: false,
  roster: [["s001", { host: "h1", port: 7401 }], ["s002", { host: "h2", port: 7401 }]],
  per_student: {
    s001: { agent_id: "a1", status: returned > 0 ? "COMPLETED" : "IN_TRANSIT",
            last_seq: 1, error: null },
    s002: { agent_id: "a2", status: returned > 1 ? "COMPLETED" : "IN_TRANSIT",
            last_seq: 1, error: null },
  },
  returned_count: returned,
});

function dashboardBackend() {
  const backend = new FakeBackend();
  backend.on("GET", "/tests", [
    { test_id: "demo", title: "Demo", version: 1, questions: 3 },
  ]);
  backend.on("POST", "/sessions", sessionDoc(0));
  backend.on("POST", "/sessions/ses-1/dispatch", { s001: "IN_TRANSIT", s002: "IN_TRANSIT" });
  backend.on("GET", "/sessions/ses-1", sessionDoc(2));
  backend.on("GET", "/sessions/ses-1/results", {
    session_id: "ses-1", test_id: "demo", mode: "PUSH",
    rows: [], missing: [],
    aggregates: { students_returned: 0, mean_percent: null,
                  median_percent: null, question_difficulty: {} },
  });
  return backend;
}

describe("DashboardFlow", () => {
  it("creates, dispatches, polls", async () => {
    const backend = dashboardBackend();
    const flow = new DashboardFlow(new ServerApi("", backend.fetch));
    await flow.loadTests();
    expect(flow.tests[0].test_id).toBe("demo");
    await flow.createSession("demo", parseRoster("s001=h1:7401\ns002=h2:7401"), 60_000);
    expect(flow.session?.session_id).toBe("ses-1");
    await flow.dispatch();
    expect(flow.session?.returned_count).toBe(2);
    expect(flow.allReturned()).toBe(true);
  });

  it("keeps the exact results byte text for display", async () => {
    const backend = dashboardBackend();
    const flow = new DashboardFlow(new ServerApi("", backend.fetch));
    await flow.createSession("demo", parseRoster("s001=h1:7401"), 1);
    const doc = await flow.fetchResults();
    expect(flow.resultsText).toBe(JSON.stringify(doc));
    expect(flow.resultsDoc).toEqual(doc);
  });

  it("sends the deadline as now + duration", async () => {
    const backend = dashboardBackend();
    const flow = new DashboardFlow(new ServerApi("", backend.fetch));
    await flow.createSession("demo", [], 60_000, "PUSH", 1_000_000);
    const createCall = backend.calls.find((c) => c.path === "/sessions");
    expect((createCall?.body as { deadline: number }).deadline).toBe(1_060_000);
  });

  it("surfaces server errors with their code", async () => {
    const backend = dashboardBackend();
    backend.on("POST", "/sessions", () => ({
      status: 404, body: { code: "UNKNOWN_TEST", detail: "nope" },
    }));
    const flow = new DashboardFlow(new ServerApi("", backend.fetch));
    await expect(flow.createSession("nope", [], 1)).rejects.toMatchObject({
      code: "UNKNOWN_TEST",
      status: 404,
    });
  });
});

describe("parseRoster", () => {
  it("parses lines and commas", () => {
    expect(parseRoster("s001=h1:7401, s002=h2:7402\ns003=h3:7403")).toEqual([
      { studentId: "s001", host: "h1", port: 7401 },
      { studentId: "s002", host: "h2", port: 7402 },
      { studentId: "s003", host: "h3", port: 7403 },
    ]);
  });

  it("rejects malformed entries", () => {
    expect(() => parseRoster("just-a-name")).toThrow(/bad roster entry/);
  });

  it("ignores blank lines", () => {
    expect(parseRoster("\n\n")).toEqual([]);
  });
});
