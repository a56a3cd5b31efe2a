// Pure HTML renderers. Everything shown comes verbatim from API payloads;
// scores and aggregates are never recomputed here.

import type {
  CompiledResults,
  QuestionView,
  ResultSummary,
  SessionView,
  TestInfo,
} from "./types.js";

export function escapeHtml(raw: string): string {
  return raw
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;")
    .replace(/'/g, "&#39;");
}

export function renderQuestion(question: QuestionView, answeredCount: number): string {
  const noun = question.points === 1 ? "point" : "points";
  const header = `
    <div class="question-head">
      <span class="question-no">Question ${answeredCount + 1}</span>
      <span class="question-points">${question.points} ${noun}</span>
    </div>
    <p class="prompt">${escapeHtml(question.prompt)}</p>`;
  if (question.kind === "SHORT_TEXT") {
    return `${header}
    <input type="text" id="text-answer" name="text-answer"
           placeholder="type your answer" autocomplete="off">`;
  }
  const inputType = question.kind === "SINGLE_CHOICE" ? "radio" : "checkbox";
  const options = question.choices
    .map(
      ([choiceId, text]) => `
    <label class="choice">
      <input type="${inputType}" name="choice" value="${escapeHtml(choiceId)}">
      <span>${escapeHtml(text)}</span>
    </label>`,
    )
    .join("");
  return `${header}<div class="choices">${options}</div>`;
}

export function renderCountdown(remainingMs: number): string {
  const total = Math.max(0, Math.floor(remainingMs / 1000));
  const minutes = Math.floor(total / 60);
  const seconds = total % 60;
  return `${minutes}:${String(seconds).padStart(2, "0")}`;
}

export function renderCompletion(result: ResultSummary | null, partial: boolean): string {
  const notice = partial
    ? `<p class="notice partial">Time is up. Your answers so far were submitted.</p>`
    : `<p class="notice done">Exam complete. Your results are on their way to the server.</p>`;
  if (!result) {
    return notice;
  }
  return `${notice}
    <p class="score">Score: ${result.raw_score} / ${result.max_on_path}
      (${result.percent}%)</p>`;
}

export function renderTestList(tests: TestInfo[]): string {
  if (!tests.length) {
    return `<p class="empty">No tests in the repository.</p>`;
  }
  const rows = tests
    .map(
      (t) => `
    <tr><td><code>${escapeHtml(t.test_id)}</code></td>
        <td>${escapeHtml(t.title)}</td>
        <td>${t.questions}</td><td>v${t.version}</td></tr>`,
    )
    .join("");
  return `<table class="tests">
    <thead><tr><th>id</th><th>title</th><th>questions</th><th>version</th></tr></thead>
    <tbody>${rows}</tbody></table>`;
}

export function renderStatusTable(session: SessionView): string {
  const rows = Object.entries(session.per_student)
    .sort(([a], [b]) => (a < b ? -1 : 1))
    .map(
      ([studentId, entry]) => `
    <tr class="status-${entry.status.toLowerCase()}">
      <td>${escapeHtml(studentId)}</td>
      <td>${escapeHtml(entry.status)}</td>
      <td>${entry.error ? escapeHtml(entry.error) : ""}</td>
    </tr>`,
    )
    .join("");
  return `<table class="session-status">
    <thead><tr><th>student</th><th>status</th><th>note</th></tr></thead>
    <tbody>${rows}</tbody></table>
    <p class="returned">${session.returned_count} of ${session.roster.length} returned
      ${session.published ? "&middot; published" : ""}</p>`;
}

export function renderResultsTable(results: CompiledResults): string {
  const rows = results.rows
    .map(
      (row) => `
    <tr>
      <td>${escapeHtml(row.student_id)}</td>
      <td>${row.raw_score}</td>
      <td>${row.max_on_path}</td>
      <td>${row.percent}</td>
      <td>${row.partial ? "partial" : ""}${row.self_assessment ? " self" : ""}</td>
      <td><code>${row.path.map(escapeHtml).join(" &rarr; ")}</code></td>
    </tr>`,
    )
    .join("");
  const aggregates = results.aggregates;
  const difficulty = Object.entries(aggregates.question_difficulty)
    .map(([qid, value]) => `<li><code>${escapeHtml(qid)}</code>: ${value}</li>`)
    .join("");
  const missing = results.missing.length
    ? `<p class="missing">Missing: ${results.missing.map(escapeHtml).join(", ")}</p>`
    : "";
  return `<table class="results">
    <thead><tr><th>student</th><th>raw</th><th>max</th><th>percent</th>
      <th>flags</th><th>path</th></tr></thead>
    <tbody>${rows}</tbody></table>
    ${missing}
    <div class="aggregates">
      <p>mean: <span id="mean-percent">${aggregates.mean_percent ?? "n/a"}</span>
         &middot; median: <span id="median-percent">${aggregates.median_percent ?? "n/a"}</span>
         &middot; returned: ${aggregates.students_returned}</p>
      <p>per-question full-credit rate:</p><ul class="difficulty">${difficulty}</ul>
    </div>`;
}

export function renderError(code: string, detail: string): string {
  return `<p class="error"><strong>${escapeHtml(code)}</strong>
    ${detail ? escapeHtml(detail) : ""}</p>`;
}
