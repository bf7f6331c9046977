/** Client-side metric badges, recomputed from the raw samples and
 * cross-checked against the service-reported values.
 *
 * The arithmetic mirrors the service exactly (plain sqrt of squared sums,
 * strict inequality for overlap at twice the radius) so agreement within
 * 1e-6 is expected, not hoped for.
 */

import type { AttractorPoint, Point, ResponseMetrics } from "./types.js";

export const OVERLAP_RADIUS = 0.25;

function dist(a: Point, b: Point): number {
  const dx = a[0] - b[0];
  const dy = a[1] - b[1];
  return Math.sqrt(dx * dx + dy * dy);
}

/** 1 iff any agent pair comes strictly within 2 * radius at any timestep. */
export function overlapIndicator(joint: Point[][], radius = OVERLAP_RADIUS): number {
  const nA = joint.length;
  for (let i = 0; i < nA; i++) {
    for (let j = i + 1; j < nA; j++) {
      const nT = Math.min(joint[i].length, joint[j].length);
      for (let t = 0; t < nT; t++) {
        if (dist(joint[i][t], joint[j][t]) < 2 * radius) return 1;
      }
    }
  }
  return 0;
}

export function meanSampleOverlap(samples: Point[][][], radius = OVERLAP_RADIUS): number {
  if (samples.length === 0) return 0;
  let total = 0;
  for (const joint of samples) total += overlapIndicator(joint, radius);
  return total / samples.length;
}

export interface TargetDistances {
  mean: number;
  min: number;
}

/** Distances from each sample's constrained waypoints to the markers. */
export function targetDistances(samples: Point[][][], attractors: AttractorPoint[]): TargetDistances | null {
  if (attractors.length === 0 || samples.length === 0) return null;
  let total = 0;
  let count = 0;
  let min = Infinity;
  for (const marker of attractors) {
    for (const joint of samples) {
      const d = dist(joint[marker.agent][marker.t_index], [marker.x, marker.y]);
      total += d;
      count += 1;
      if (d < min) min = d;
    }
  }
  return { mean: total / count, min };
}

/** Mean final-step distance to the markers (the compare-panel badge). */
export function meanEndpointDistance(samples: Point[][][], attractors: AttractorPoint[]): number | null {
  const finals = attractors.filter((a) => samples[0] && a.t_index === samples[0][a.agent].length - 1);
  const d = targetDistances(samples, finals.length ? finals : attractors);
  return d ? d.mean : null;
}

export interface BadgeCheck {
  name: string;
  client: number;
  service: number;
  delta: number;
  ok: boolean;
}

/** Recompute every number the service reported and compare. */
export function crossCheck(
  samples: Point[][][],
  attractors: AttractorPoint[],
  reported: ResponseMetrics,
  tol = 1e-6,
): BadgeCheck[] {
  const checks: BadgeCheck[] = [];
  const push = (name: string, client: number, service: number | undefined) => {
    if (service === undefined) return;
    const delta = Math.abs(client - service);
    checks.push({ name, client, service, delta, ok: delta <= tol });
  };
  push("mean_sample_overlap", meanSampleOverlap(samples), reported.mean_sample_overlap);
  const td = targetDistances(samples, attractors);
  if (td) {
    push("mean_target_distance", td.mean, reported.mean_target_distance);
    push("min_target_distance", td.min, reported.min_target_distance);
  }
  return checks;
}
