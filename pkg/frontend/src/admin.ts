// Admin convergence view: polls the convergence endpoint and renders the
// mean information gain per refit iteration as an inline SVG line chart.

import { ApiClient, ConvergenceState } from "./api.js";

const POLL_MS = 2000;

export function convergencePath(
  history: { iteration: number; mean_ig: number }[],
  width: number,
  height: number,
): string {
  if (history.length === 0) return "";
  const maxIg = Math.max(...history.map((p) => p.mean_ig), 1e-12);
  const maxIter = Math.max(...history.map((p) => p.iteration), 1);
  const points = history.map((p) => {
    const x = (p.iteration / maxIter) * width;
    const y = height - (p.mean_ig / maxIg) * height;
    return `${x.toFixed(1)},${y.toFixed(1)}`;
  });
  return `M ${points.join(" L ")}`;
}

export function renderConvergence(
  root: HTMLElement,
  state: ConvergenceState,
): void {
  const width = 480;
  const height = 160;
  const path = convergencePath(state.history, width, height);
  root.innerHTML = `
    <h2>Sampling convergence</h2>
    <dl class="stats">
      <dt>Iteration</dt><dd>${state.iteration}</dd>
      <dt>Mean information gain</dt>
      <dd>${state.mean_information_gain.toExponential(3)} bits</dd>
      <dt>Answers collected</dt><dd>${state.answers_total}</dd>
    </dl>
    <svg viewBox="0 0 ${width} ${height}" class="chart" role="img"
         aria-label="mean information gain per iteration">
      <path d="${path}" fill="none" stroke="#2a6" stroke-width="2"/>
    </svg>`;
}

export function startAdminView(root: HTMLElement, client: ApiClient): void {
  const tick = async () => {
    try {
      renderConvergence(root, await client.convergence());
    } catch (err) {
      root.innerHTML = `<p class="error">convergence fetch failed: ${err}</p>`;
    }
  };
  void tick();
  setInterval(() => void tick(), POLL_MS);
}
