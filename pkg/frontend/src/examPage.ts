// DOM bootstrap for the student exam page (served by the host platform,
// so the exam keeps working when the server is unreachable).

import { HostApi } from "./api.js";
import { ExamFlow, collectPayload } from "./examClient.js";
import {
  renderCompletion,
  renderCountdown,
  renderError,
  renderQuestion,
} from "./render.js";

const POLL_STATUS_MS = 2000;

function el(id: string): HTMLElement {
  const found = document.getElementById(id);
  if (!found) {
    throw new Error(`missing element #${id}`);
  }
  return found;
}

async function main(): Promise<void> {
  const flow = new ExamFlow(new HostApi(""));
  const stage = el("stage");
  const countdown = el("countdown");
  const submit = el("submit") as HTMLButtonElement;

  function paint(): void {
    const state = flow.state;
    switch (state.phase) {
      case "no-exam":
        stage.innerHTML = `<p class="empty">No exam has arrived on this platform yet.</p>`;
        submit.hidden = true;
        break;
      case "question":
        stage.innerHTML = renderQuestion(state.question!, state.answeredCount);
        submit.hidden = false;
        submit.disabled = false;
        break;
      case "finished":
      case "expired":
        stage.innerHTML = renderCompletion(state.result ?? null,
                                           state.phase === "expired");
        submit.hidden = true;
        break;
      case "error":
        stage.innerHTML = renderError(state.errorCode ?? "ERROR",
                                      state.errorDetail ?? "");
        submit.hidden = true;
        break;
      default:
        stage.innerHTML = `<p class="empty">Loading&hellip;</p>`;
    }
  }

  submit.addEventListener("click", async () => {
    if (flow.state.phase !== "question" || !flow.state.question) {
      return;
    }
    submit.disabled = true;
    await flow.submit(collectPayload(flow.state.question, stage));
    paint();
  });

  async function tickCountdown(): Promise<void> {
    if (flow.state.phase === "question") {
      try {
        countdown.textContent = renderCountdown(await flow.remainingMs());
      } catch {
        countdown.textContent = "";
      }
    } else {
      countdown.textContent = "";
    }
  }

  await flow.load();
  if (flow.state.phase === "no-exam") {
    // keep checking until an agent arrives
    const poll = setInterval(async () => {
      await flow.load();
      if (flow.state.phase !== "no-exam") {
        clearInterval(poll);
      }
      paint();
    }, POLL_STATUS_MS);
  }
  paint();
  void tickCountdown();
  setInterval(tickCountdown, 1000);
}

void main();
