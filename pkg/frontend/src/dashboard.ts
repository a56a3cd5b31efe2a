// Teacher dashboard flow: create a session, dispatch agents, watch returns
// come in, then browse the compiled results. Result bytes are kept verbatim
// so the table always shows exactly what the server published.

import { ServerApi } from "./api.js";
import type { CompiledResults, RosterEntry, SessionView, TestInfo } from "./types.js";

export class DashboardFlow {
  tests: TestInfo[] = [];
  session: SessionView | null = null;
  resultsText: string | null = null;
  resultsDoc: CompiledResults | null = null;

  constructor(private readonly api: ServerApi) {}

  async loadTests(): Promise<TestInfo[]> {
    this.tests = await this.api.listTests();
    return this.tests;
  }

  async createSession(testId: string, roster: RosterEntry[], durationMs: number,
                      mode = "PUSH", now = Date.now()): Promise<SessionView> {
    this.session = await this.api.createSession(testId, roster, now + durationMs, mode);
    this.resultsText = null;
    this.resultsDoc = null;
    return this.session;
  }

  async dispatch(): Promise<Record<string, string>> {
    if (!this.session) {
      throw new Error("no session yet");
    }
    const outcome = await this.api.dispatch(this.session.session_id);
    await this.refresh();
    return outcome;
  }

  async refresh(): Promise<SessionView | null> {
    if (!this.session) {
      return null;
    }
    this.session = await this.api.session(this.session.session_id);
    return this.session;
  }

  allReturned(): boolean {
    return this.session !== null
      && this.session.returned_count === this.session.roster.length
      && this.session.roster.length > 0;
  }

  async fetchResults(): Promise<CompiledResults> {
    if (!this.session) {
      throw new Error("no session yet");
    }
    const { text, doc } = await this.api.results(this.session.session_id);
    this.resultsText = text;
    this.resultsDoc = doc;
    return doc;
  }

  async publish(): Promise<void> {
    if (!this.session) {
      throw new Error("no session yet");
    }
    await this.api.publish(this.session.session_id);
    await this.refresh();
  }
}

/** Parse roster lines of the form "sid=host:port". */
export function parseRoster(text: string): RosterEntry[] {
  const roster: RosterEntry[] = [];
  for (const line of text.split(/[\n,]/)) {
    const entry = line.trim();
    if (!entry) {
      continue;
    }
    const match = /^([^=\s]+)=([^:\s]+):(\d+)$/.exec(entry);
    if (!match) {
      throw new Error(`bad roster entry: ${entry} (expected sid=host:port)`);
    }
    roster.push({ studentId: match[1], host: match[2], port: Number(match[3]) });
  }
  return roster;
}
