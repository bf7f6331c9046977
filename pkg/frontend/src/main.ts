/** Wires the composer together: scene picker, canvas interaction,
 * constraint editing, resampling, compare panel, badges. */

import { ApiClient, ServiceError } from "./api.js";
import { panelBadges } from "./compare.js";
import { hasActiveConstraints, placeAttractor, setRepeller, undoLastAttractor } from "./constraints.js";
import { crossCheck } from "./metrics.js";
import { drawScene, scenePoints } from "./render.js";
import { LatestWins } from "./scheduler.js";
import { buildRequest, effectiveTimestep, initialState, loadScene, nextSeed } from "./state.js";
import type { SampleResponse } from "./types.js";
import { fitToPoints, makeViewport, sceneBounds, toScene, type Viewport } from "./viewport.js";

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
};

const baseUrl = new URLSearchParams(location.search).get("api") ?? "http://127.0.0.1:8080";
const client = new ApiClient(baseUrl);
const canvas = $<HTMLCanvasElement>("canvas");
const ctx = canvas.getContext("2d")!;
let state = initialState();
let viewport: Viewport = makeViewport(canvas.width, canvas.height);
const scheduler = new LatestWins<SampleResponse>();

function toast(message: string, isError = false): void {
  const el = $("toast");
  el.textContent = message;
  el.className = isError ? "toast error" : "toast";
  el.style.opacity = "1";
  setTimeout(() => (el.style.opacity = "0"), 2500);
}

function redraw(): void {
  if (!state.scene) return;
  drawScene(ctx, viewport, state.scene, state.lastResponse, state.editor);
  renderBadges();
}

function renderBadges(): void {
  const el = $("badges");
  if (!state.lastResponse) {
    el.textContent = "no samples yet";
    return;
  }
  const badges = panelBadges(state.lastResponse, state.editor.attractors);
  const checks = crossCheck(
    state.lastResponse.samples,
    state.editor.attractors,
    state.lastResponse.metrics,
  );
  const checksOk = checks.every((c) => c.ok);
  const parts = [
    `overlap ${badges.overlap.toFixed(3)}`,
    badges.meanTargetDistance !== null ? `mean dist to markers ${badges.meanTargetDistance.toFixed(3)}` : "",
    state.lastResponse.logp ? `logp range [${Math.min(...state.lastResponse.logp).toFixed(1)}, ${Math.max(...state.lastResponse.logp).toFixed(1)}]` : "",
    `cross-check ${checksOk ? "ok" : "MISMATCH"}`,
    `${state.lastResponse.timings_ms.total.toFixed(0)} ms`,
  ];
  el.textContent = parts.filter(Boolean).join(" | ");
  const before = state.baselineResponse;
  $("compare").textContent = before
    ? `before: overlap ${panelBadges(before, state.editor.attractors).overlap.toFixed(3)}` +
      (panelBadges(before, state.editor.attractors).meanTargetDistance !== null
        ? `, mean dist ${panelBadges(before, state.editor.attractors).meanTargetDistance!.toFixed(3)}`
        : "")
    : "";
}

function resample(): void {
  if (!state.scene) return toast("load a scene first", true);
  const seed = nextSeed(state);
  const req = buildRequest(state, seed);
  scheduler.submit(() => client.sample(req));
  toast(`sampling (seed ${seed})...`);
}

scheduler.onResult((response) => {
  if (!hasActiveConstraints(state.editor)) state.baselineResponse = response;
  state = { ...state, lastResponse: response };
  redraw();
});
scheduler.onError((err) => {
  const msg = err instanceof ServiceError ? `${err.code}: ${err.message}` : String(err);
  toast(msg, true);
});

canvas.addEventListener("click", (ev) => {
  if (!state.scene) return;
  const rect = canvas.getBoundingClientRect();
  const [x, y] = toScene(viewport, ev.clientX - rect.left, ev.clientY - rect.top);
  const bounds = sceneBounds(viewport);
  if (x < bounds.minX || x > bounds.maxX || y < bounds.minY || y > bounds.maxY) {
    toast("click outside scene bounds ignored", true);
    return;
  }
  state = {
    ...state,
    editor: placeAttractor(state.editor, state.selectedAgent, effectiveTimestep(state), x, y),
  };
  redraw();
});

async function boot(): Promise<void> {
  try {
    const health = await client.health();
    $("status").textContent = `service ok (model ${health.model_id})`;
    const { scenes } = await client.listScenes();
    const picker = $<HTMLSelectElement>("scene-picker");
    picker.innerHTML = scenes
      .map((s) => `<option value="${s.scenario_id}">${s.scenario_id} (${s.n_agents} agents)</option>`)
      .join("");
    picker.addEventListener("change", async () => {
      const scene = await client.getScene(picker.value);
      state = loadScene(state, scene);
      viewport = fitToPoints(viewport, scenePoints(scene));
      redraw();
    });
    if (scenes.length) {
      picker.value = scenes[0].scenario_id;
      picker.dispatchEvent(new Event("change"));
    }
  } catch (err) {
    $("status").textContent = `service unreachable at ${baseUrl}`;
    toast(String(err), true);
  }

  $("resample").addEventListener("click", resample);
  $("undo").addEventListener("click", () => {
    state = { ...state, editor: undoLastAttractor(state.editor) };
    redraw();
  });
  $<HTMLInputElement>("repeller").addEventListener("change", (ev) => {
    const on = (ev.target as HTMLInputElement).checked;
    state = { ...state, editor: setRepeller(state.editor, on ? 1.0 : null) };
    redraw();
  });
  $<HTMLSelectElement>("seed-mode").addEventListener("change", (ev) => {
    state = { ...state, seedMode: (ev.target as HTMLSelectElement).value as "fixed" | "fresh" };
  });
  $<HTMLSelectElement>("agent-picker").addEventListener("change", (ev) => {
    state = { ...state, selectedAgent: Number((ev.target as HTMLSelectElement).value) };
  });
}

void boot();
