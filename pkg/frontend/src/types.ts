// Payload shapes of the host exam API and the server admin API.
// These mirror the documented endpoints; nothing here is recomputed
// client-side and question views never contain answer keys.

export type QuestionKind = "SINGLE_CHOICE" | "MULTI_CHOICE" | "SHORT_TEXT";

export interface QuestionView {
  id: string;
  prompt: string;
  kind: QuestionKind;
  choices: [string, string][];
  points: number;
}

export interface QuestionResponse {
  agent_id: string;
  terminal: false;
  question: QuestionView;
  answered_count: number;
  deadline: number;
}

export interface ResultSummary {
  raw_score: number;
  max_on_path: number;
  percent: number;
}

export interface TerminalResponse {
  agent_id: string;
  terminal: true;
  status: string;
  partial: boolean;
  result: ResultSummary | null;
}

export type ExamResponse = QuestionResponse | TerminalResponse;

export interface ExamSummary {
  active: boolean;
  agent_id?: string;
  session_id?: string;
  student_id?: string;
  status?: string;
  deadline?: number;
  answered_count?: number;
  partial?: boolean;
}

export interface ExamStatus {
  agent_id: string;
  status: string;
  deadline: number;
  remaining_ms: number;
  answered_count: number;
  terminal: boolean;
  partial: boolean;
  result: ResultSummary | null;
}

export interface StudentEntry {
  agent_id: string | null;
  status: string;
  last_seq: number;
  error: string | null;
}

export interface SessionView {
  session_id: string;
  test_id: string;
  mode: string;
  deadline: number;
  dispatched: boolean;
  published: boolean;
  closed: boolean;
  roster: [string, { host: string; port: number }][];
  per_student: Record<string, StudentEntry>;
  returned_count: number;
}

export interface ResultRecordDoc {
  question_id: string;
  normalized_answer: string[] | string | null;
  points_earned: number;
  points_possible: number;
  answered_at: number | null;
}

export interface ResultRow {
  student_id: string;
  raw_score: number;
  max_on_path: number;
  percent: number;
  partial: boolean;
  self_assessment: boolean;
  path: string[];
  records: ResultRecordDoc[];
}

export interface CompiledResults {
  session_id: string;
  test_id: string;
  mode: string;
  rows: ResultRow[];
  missing: string[];
  aggregates: {
    students_returned: number;
    mean_percent: number | null;
    median_percent: number | null;
    question_difficulty: Record<string, number>;
  };
}

export interface TestInfo {
  test_id: string;
  title: string;
  version: number;
  questions: number;
}

export interface RosterEntry {
  studentId: string;
  host: string;
  port: number;
}
