// DOM bootstrap for the teacher dashboard (served by the exam server).

import { ServerApi } from "./api.js";
import { DashboardFlow, parseRoster } from "./dashboard.js";
import {
  renderError,
  renderResultsTable,
  renderStatusTable,
  renderTestList,
} from "./render.js";

const POLL_MS = 2000;

function el<T extends HTMLElement = HTMLElement>(id: string): T {
  const found = document.getElementById(id);
  if (!found) {
    throw new Error(`missing element #${id}`);
  }
  return found as T;
}

async function main(): Promise<void> {
  const flow = new DashboardFlow(new ServerApi(""));
  const testsBox = el("tests");
  const statusBox = el("status");
  const resultsBox = el("results");
  const feedback = el("feedback");

  function oops(err: unknown): void {
    const code = (err as { code?: string }).code ?? "ERROR";
    const detail = (err as { detail?: string }).detail ?? String(err);
    feedback.innerHTML = renderError(code, detail);
  }

  async function repaintSession(): Promise<void> {
    if (!flow.session) {
      return;
    }
    statusBox.innerHTML = renderStatusTable(flow.session);
    if (flow.session.returned_count > 0) {
      try {
        await flow.fetchResults();
        resultsBox.innerHTML = renderResultsTable(flow.resultsDoc!);
      } catch (err) {
        oops(err);
      }
    }
  }

  try {
    testsBox.innerHTML = renderTestList(await flow.loadTests());
  } catch (err) {
    oops(err);
  }

  el<HTMLButtonElement>("create").addEventListener("click", async () => {
    feedback.innerHTML = "";
    try {
      const testId = el<HTMLInputElement>("test-id").value.trim();
      const roster = parseRoster(el<HTMLTextAreaElement>("roster").value);
      const minutes = Number(el<HTMLInputElement>("duration").value || "30");
      await flow.createSession(testId, roster, minutes * 60_000);
      await repaintSession();
    } catch (err) {
      oops(err);
    }
  });

  el<HTMLButtonElement>("dispatch").addEventListener("click", async () => {
    feedback.innerHTML = "";
    try {
      await flow.dispatch();
      await repaintSession();
    } catch (err) {
      oops(err);
    }
  });

  el<HTMLButtonElement>("publish").addEventListener("click", async () => {
    feedback.innerHTML = "";
    try {
      await flow.publish();
      await repaintSession();
    } catch (err) {
      oops(err);
    }
  });

  setInterval(async () => {
    try {
      await flow.refresh();
      await repaintSession();
    } catch {
      // transient poll failure; next tick retries
    }
  }, POLL_MS);
}

void main();
