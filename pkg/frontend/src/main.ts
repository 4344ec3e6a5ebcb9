// DOM wiring: start screen, trial loop, completion screen. The candidates
// are shown exactly in the order the server delivered them; the page never
// reorders them and never learns what kind a trial is.

import { ApiClient, Choice } from "./api.js";
import { startAdminView } from "./admin.js";
import { bindKeyboard } from "./keyboard.js";
import { SessionController } from "./session.js";

const client = new ApiClient();
const controller = new SessionController(client);

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (node === null) throw new Error(`missing element #${id}`);
  return node as T;
}

function show(id: string): void {
  for (const screen of document.querySelectorAll<HTMLElement>(".screen")) {
    screen.hidden = screen.id !== id;
  }
}

function render(): void {
  if (controller.phase === "start") {
    show("screen-start");
    return;
  }
  if (controller.phase === "trial" && controller.trial !== null) {
    const t = controller.trial;
    el<HTMLImageElement>("img-reference").src = client.assetUrl(
      t.reference_view,
    );
    el<HTMLImageElement>("img-a").src = client.assetUrl(t.candidate_a_view);
    el<HTMLImageElement>("img-b").src = client.assetUrl(t.candidate_b_view);
    el("trial-counter").textContent = `${t.trial_index + 1} / ${
      controller.nTrials
    }`;
    el<HTMLProgressElement>("progress").value = t.progress;
    show("screen-trial");
    return;
  }
  if (controller.phase === "done" && controller.result !== null) {
    const ok = controller.result.status === "complete";
    el("result-status").textContent = ok
      ? "Session complete. Thank you!"
      : "Session rejected: too many inconsistent answers.";
    el("result-status").className = ok ? "ok" : "error";
    show("screen-done");
  }
}

async function choose(side: Choice): Promise<void> {
  try {
    await controller.choose(side);
  } catch (err) {
    el("trial-error").textContent = String(err);
  }
  render();
}

function wireAnnotator(): void {
  el<HTMLFormElement>("start-form").addEventListener("submit", (e) => {
    e.preventDefault();
    const worker = el<HTMLInputElement>("worker-id").value;
    el("start-error").textContent = "";
    controller.begin(worker).then(render, (err) => {
      el("start-error").textContent = String(err);
    });
  });
  el("pick-a").addEventListener("click", () => void choose("a"));
  el("pick-b").addEventListener("click", () => void choose("b"));
  bindKeyboard(document, (side) => void choose(side));
  render();
}

if (location.hash === "#admin") {
  show("screen-admin");
  startAdminView(el("screen-admin"), client);
} else {
  wireAnnotator();
}
