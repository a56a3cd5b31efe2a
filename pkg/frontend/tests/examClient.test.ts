import { describe, expect, it } from "vitest";

import { HostApi } from "../src/api.js";
import { ExamFlow } from "../src/examClient.js";
import { FakeBackend } from "./fakes.js";

const questionView = (id: string, answered: number) => ({
  agent_id: "agent-1",
  terminal: false,
  question: {
    id,
    prompt: `prompt ${id}`,
    kind: "SINGLE_CHOICE",
    choices: [["a", "alpha"], ["b", "beta"]],
    points: 1,
  },
  answered_count: answered,
  deadline: 60_000,
});

function examBackend() {
  const backend = new FakeBackend();
  backend.on("GET", "/exam", { active: true, agent_id: "agent-1" });
  backend.on("GET", "/exam/question", questionView("q1", 0));
  return backend;
}

describe("ExamFlow", () => {
  it("loads the first question", async () => {
    const backend = examBackend();
    const flow = new ExamFlow(new HostApi("", backend.fetch));
    const state = await flow.load();
    expect(state.phase).toBe("question");
    expect(state.question?.id).toBe("q1");
  });

  it("reports no-exam when the platform is empty", async () => {
    const backend = new FakeBackend();
    backend.on("GET", "/exam", { active: false });
    const flow = new ExamFlow(new HostApi("", backend.fetch));
    expect((await flow.load()).phase).toBe("no-exam");
  });

  it("walks question -> question -> finished", async () => {
    const backend = examBackend();
    backend.on("POST", "/exam/answer", (body: any) => {
      if (body.question_id === "q1") {
        return { body: questionView("q2", 1) };
      }
      return {
        body: {
          agent_id: "agent-1", terminal: true, status: "RETURNING",
          partial: false,
          result: { raw_score: 2, max_on_path: 2, percent: 100.0 },
        },
      };
    });
    const flow = new ExamFlow(new HostApi("", backend.fetch));
    await flow.load();
    let state = await flow.submit(["a"]);
    expect(state.phase).toBe("question");
    expect(state.question?.id).toBe("q2");
    expect(state.answeredCount).toBe(1);
    state = await flow.submit(["b"]);
    expect(state.phase).toBe("finished");
    expect(state.result?.percent).toBe(100.0);
  });

  it("shows the partial notice when the deadline fires mid-exam", async () => {
    const backend = examBackend();
    backend.on("POST", "/exam/answer", () => ({
      status: 409,
      body: { code: "DEADLINE_PASSED", detail: "deadline reached" },
    }));
    backend.on("GET", "/exam/status", {
      agent_id: "agent-1", status: "RETURNING", deadline: 1, remaining_ms: 0,
      answered_count: 1, terminal: true, partial: true,
      result: { raw_score: 1, max_on_path: 3, percent: 33.3 },
    });
    const flow = new ExamFlow(new HostApi("", backend.fetch));
    await flow.load();
    const state = await flow.submit(["a"]);
    expect(state.phase).toBe("expired");
    expect(state.partial).toBe(true);
    expect(state.result?.percent).toBe(33.3);
  });

  it("surfaces unexpected API errors verbatim", async () => {
    const backend = examBackend();
    backend.on("POST", "/exam/answer", () => ({
      status: 409,
      body: { code: "STALE_QUESTION", detail: "current question is q2" },
    }));
    const flow = new ExamFlow(new HostApi("", backend.fetch));
    await flow.load();
    const state = await flow.submit(["a"]);
    expect(state.phase).toBe("error");
    expect(state.errorCode).toBe("STALE_QUESTION");
  });

  it("reads the countdown from /exam/status", async () => {
    const backend = examBackend();
    backend.on("GET", "/exam/status", {
      agent_id: "agent-1", status: "EXECUTING", deadline: 60_000,
      remaining_ms: 42_000, answered_count: 0, terminal: false, partial: false,
      result: null,
    });
    const flow = new ExamFlow(new HostApi("", backend.fetch));
    await flow.load();
    expect(await flow.remainingMs()).toBe(42_000);
  });
});
