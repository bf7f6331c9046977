/** Canvas drawing: histories, sampled futures (color-graded by log
 * probability, lighter = more likely), bold cluster representatives,
 * attractor markers, and the repeller radius ring. */

import type { ConstraintEditor } from "./constraints.js";
import type { Point, SampleResponse, SceneRecord } from "./types.js";
import { toPixel, type Viewport } from "./viewport.js";

const AGENT_HUES = [210, 20, 130, 80, 280, 330, 50, 170];

function polyline(ctx: CanvasRenderingContext2D, vp: Viewport, pts: Point[]): void {
  ctx.beginPath();
  pts.forEach(([x, y], i) => {
    const [px, py] = toPixel(vp, x, y);
    if (i === 0) ctx.moveTo(px, py);
    else ctx.lineTo(px, py);
  });
  ctx.stroke();
}

/** Map logp values to [0.25, 1] lightness weights (lighter = higher). */
export function logpWeights(logp: number[] | undefined, n: number): number[] {
  if (!logp || logp.length !== n) return new Array(n).fill(0.6);
  const lo = Math.min(...logp);
  const hi = Math.max(...logp);
  const span = hi - lo;
  if (!(span > 0)) return new Array(n).fill(0.6);
  return logp.map((v) => 0.25 + 0.75 * ((v - lo) / span));
}

export function drawScene(
  ctx: CanvasRenderingContext2D,
  vp: Viewport,
  scene: SceneRecord,
  response: SampleResponse | null,
  editor: ConstraintEditor,
): void {
  ctx.clearRect(0, 0, vp.width, vp.height);

  // scene frame cross
  ctx.strokeStyle = "#ddd";
  ctx.lineWidth = 1;
  polyline(ctx, vp, [
    [-100, 0],
    [100, 0],
  ]);
  polyline(ctx, vp, [
    [0, -100],
    [0, 100],
  ]);

  scene.agents.forEach((agent, i) => {
    const hue = AGENT_HUES[i % AGENT_HUES.length];
    ctx.lineWidth = 2.5;
    ctx.strokeStyle = `hsl(${hue}, 80%, 35%)`;
    polyline(ctx, vp, agent.history);
    const [sx, sy] = toPixel(vp, agent.pose.x, agent.pose.y);
    ctx.fillStyle = `hsl(${hue}, 80%, 35%)`;
    ctx.beginPath();
    ctx.arc(sx, sy, 5, 0, 2 * Math.PI);
    ctx.fill();
  });

  if (response) {
    const weights = logpWeights(response.logp, response.samples.length);
    response.samples.forEach((joint, s) => {
      const light = 20 + 55 * weights[s];
      joint.forEach((traj, i) => {
        const hue = AGENT_HUES[i % AGENT_HUES.length];
        ctx.lineWidth = 1;
        ctx.strokeStyle = `hsla(${hue}, 70%, ${light}%, 0.55)`;
        polyline(ctx, vp, traj);
      });
    });
    if (response.clusters) {
      response.clusters.trajectories.forEach((joint, k) => {
        const alpha = 0.5 + 0.5 * response.clusters!.probabilities[k];
        joint.forEach((traj, i) => {
          const hue = AGENT_HUES[i % AGENT_HUES.length];
          ctx.lineWidth = 3;
          ctx.strokeStyle = `hsla(${hue}, 90%, 40%, ${alpha})`;
          polyline(ctx, vp, traj);
        });
      });
    }
  }

  // attractor markers: an x at each placed target
  for (const marker of editor.attractors) {
    const [px, py] = toPixel(vp, marker.x, marker.y);
    ctx.strokeStyle = "#e6a817";
    ctx.lineWidth = 3;
    ctx.beginPath();
    ctx.moveTo(px - 6, py - 6);
    ctx.lineTo(px + 6, py + 6);
    ctx.moveTo(px - 6, py + 6);
    ctx.lineTo(px + 6, py - 6);
    ctx.stroke();
  }

  if (editor.repellerRadius !== null) {
    ctx.strokeStyle = "rgba(200, 40, 40, 0.6)";
    ctx.setLineDash([6, 4]);
    ctx.lineWidth = 1.5;
    const [cx, cy] = toPixel(vp, 0, 0);
    ctx.beginPath();
    ctx.arc(cx, cy, editor.repellerRadius * vp.scale, 0, 2 * Math.PI);
    ctx.stroke();
    ctx.setLineDash([]);
  }
}

export function scenePoints(scene: SceneRecord): Array<[number, number]> {
  const pts: Array<[number, number]> = [];
  for (const agent of scene.agents) {
    for (const p of agent.history) pts.push([p[0], p[1]]);
    for (const p of agent.future) pts.push([p[0], p[1]]);
  }
  return pts;
}
