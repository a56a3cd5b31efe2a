// Thin typed clients over the documented HTTP/JSON endpoints.
// The fetch function is injectable so flows can be tested without sockets.

import type {
  CompiledResults,
  ExamResponse,
  ExamStatus,
  ExamSummary,
  RosterEntry,
  SessionView,
  TestInfo,
} from "./types.js";

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly code: string,
    public readonly detail: string,
  ) {
    super(detail ? `${code}: ${detail}` : code);
  }
}

interface RawReply {
  text: string;
  doc: unknown;
}

async function call(
  fetchFn: FetchLike,
  base: string,
  method: string,
  path: string,
  body?: unknown,
): Promise<RawReply> {
  const init: RequestInit = { method };
  if (body !== undefined) {
    init.body = JSON.stringify(body);
    init.headers = { "Content-Type": "application/json" };
  }
  let response: Response;
  try {
    response = await fetchFn(base + path, init);
  } catch (err) {
    throw new ApiError(0, "UNREACHABLE", String(err));
  }
  const text = await response.text();
  if (!response.ok) {
    let code = `HTTP_${response.status}`;
    let detail = text;
    try {
      const doc = JSON.parse(text) as { code?: string; detail?: string };
      if (doc.code) {
        code = doc.code;
        detail = doc.detail ?? "";
      }
    } catch {
      // non-JSON error body; keep the raw text as detail
    }
    throw new ApiError(response.status, code, detail);
  }
  return { text, doc: text ? JSON.parse(text) : null };
}

/** Local exam API served by the student's own host platform. */
export class HostApi {
  constructor(
    private readonly base: string = "",
    private readonly fetchFn: FetchLike = (...args) => fetch(...args),
  ) {}

  async exam(): Promise<ExamSummary> {
    return (await call(this.fetchFn, this.base, "GET", "/exam")).doc as ExamSummary;
  }

  async question(): Promise<ExamResponse> {
    return (await call(this.fetchFn, this.base, "GET", "/exam/question"))
      .doc as ExamResponse;
  }

  async answer(questionId: string, payload: string[] | string): Promise<ExamResponse> {
    return (
      await call(this.fetchFn, this.base, "POST", "/exam/answer", {
        question_id: questionId,
        payload,
      })
    ).doc as ExamResponse;
  }

  async status(): Promise<ExamStatus> {
    return (await call(this.fetchFn, this.base, "GET", "/exam/status"))
      .doc as ExamStatus;
  }

  async pull(server: { host: string; port: number }, studentId: string,
             testId: string): Promise<{ accepted: boolean; session_id?: string }> {
    return (
      await call(this.fetchFn, this.base, "POST", "/exam/pull", {
        server,
        student_id: studentId,
        test_id: testId,
      })
    ).doc as { accepted: boolean; session_id?: string };
  }
}

/** Teacher-facing admin API on the exam server. */
export class ServerApi {
  constructor(
    private readonly base: string = "",
    private readonly fetchFn: FetchLike = (...args) => fetch(...args),
  ) {}

  async listTests(): Promise<TestInfo[]> {
    return (await call(this.fetchFn, this.base, "GET", "/tests")).doc as TestInfo[];
  }

  async createSession(
    testId: string,
    roster: RosterEntry[],
    deadline: number,
    mode: string = "PUSH",
    sessionId?: string,
  ): Promise<SessionView> {
    const body: Record<string, unknown> = {
      test_id: testId,
      roster: roster.map((r) => [r.studentId, { host: r.host, port: r.port }]),
      deadline,
      mode,
    };
    if (sessionId) {
      body.session_id = sessionId;
    }
    return (await call(this.fetchFn, this.base, "POST", "/sessions", body))
      .doc as SessionView;
  }

  async dispatch(sessionId: string): Promise<Record<string, string>> {
    return (
      await call(this.fetchFn, this.base, "POST", `/sessions/${sessionId}/dispatch`, {})
    ).doc as Record<string, string>;
  }

  async session(sessionId: string): Promise<SessionView> {
    return (await call(this.fetchFn, this.base, "GET", `/sessions/${sessionId}`))
      .doc as SessionView;
  }

  /** Returns both the parsed doc and the exact byte text of the results. */
  async results(sessionId: string): Promise<{ text: string; doc: CompiledResults }> {
    const reply = await call(this.fetchFn, this.base, "GET",
      `/sessions/${sessionId}/results`);
    return { text: reply.text, doc: reply.doc as CompiledResults };
  }

  async publish(sessionId: string): Promise<{ published: boolean; path: string }> {
    return (
      await call(this.fetchFn, this.base, "POST", `/sessions/${sessionId}/publish`, {})
    ).doc as { published: boolean; path: string };
  }
}
