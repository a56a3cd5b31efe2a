// Student exam flow: fetch the current question, submit, repeat until the
// completion (or deadline) screen. All grading happens on the host platform;
// the client only renders views and relays answers.

import { ApiError, HostApi } from "./api.js";
import type { ExamResponse, QuestionView, ResultSummary } from "./types.js";

export type ExamPhase =
  | "loading"
  | "no-exam"
  | "question"
  | "finished"
  | "expired"
  | "error";

export interface ExamViewState {
  phase: ExamPhase;
  question?: QuestionView;
  answeredCount: number;
  deadline: number;
  result?: ResultSummary | null;
  partial?: boolean;
  errorCode?: string;
  errorDetail?: string;
}

export class ExamFlow {
  state: ExamViewState = { phase: "loading", answeredCount: 0, deadline: 0 };

  constructor(private readonly api: HostApi) {}

  async load(): Promise<ExamViewState> {
    let summary;
    try {
      summary = await this.api.exam();
    } catch (err) {
      return this.fail(err);
    }
    if (!summary.agent_id) {
      this.state = { phase: "no-exam", answeredCount: 0, deadline: 0 };
      return this.state;
    }
    try {
      return this.absorb(await this.api.question());
    } catch (err) {
      return this.fail(err);
    }
  }

  async submit(payload: string[] | string): Promise<ExamViewState> {
    if (this.state.phase !== "question" || !this.state.question) {
      return this.state;
    }
    try {
      return this.absorb(await this.api.answer(this.state.question.id, payload));
    } catch (err) {
      if (err instanceof ApiError && err.code === "DEADLINE_PASSED") {
        // the host already finalized a partial run; show the notice
        this.state = {
          phase: "expired",
          answeredCount: this.state.answeredCount,
          deadline: this.state.deadline,
          partial: true,
          result: null,
        };
        await this.refreshResult();
        return this.state;
      }
      return this.fail(err);
    }
  }

  async remainingMs(): Promise<number> {
    const status = await this.api.status();
    return status.remaining_ms;
  }

  private async refreshResult(): Promise<void> {
    try {
      const status = await this.api.status();
      this.state.result = status.result;
    } catch {
      // host still reachable only for the wire side; leave result empty
    }
  }

  private absorb(reply: ExamResponse): ExamViewState {
    if (reply.terminal) {
      this.state = {
        phase: reply.partial ? "expired" : "finished",
        answeredCount: this.state.answeredCount,
        deadline: this.state.deadline,
        result: reply.result,
        partial: reply.partial,
      };
    } else {
      this.state = {
        phase: "question",
        question: reply.question,
        answeredCount: reply.answered_count,
        deadline: reply.deadline,
      };
    }
    return this.state;
  }

  private fail(err: unknown): ExamViewState {
    const code = err instanceof ApiError ? err.code : "UNEXPECTED";
    const detail = err instanceof ApiError ? err.detail : String(err);
    if (code === "UNKNOWN_AGENT") {
      this.state = { phase: "no-exam", answeredCount: 0, deadline: 0 };
    } else {
      this.state = {
        phase: "error",
        answeredCount: this.state.answeredCount,
        deadline: this.state.deadline,
        errorCode: code,
        errorDetail: detail,
      };
    }
    return this.state;
  }
}

/** Read the chosen payload out of the rendered inputs. */
export function collectPayload(question: QuestionView,
                               root: ParentNode): string[] | string {
  if (question.kind === "SHORT_TEXT") {
    const input = root.querySelector<HTMLInputElement>("#text-answer");
    return input ? input.value : "";
  }
  const picked: string[] = [];
  root.querySelectorAll<HTMLInputElement>("input[name=choice]:checked")
    .forEach((el) => picked.push(el.value));
  return picked;
}
