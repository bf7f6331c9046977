/** Before/after comparison of two cached responses with synchronized
 * viewports and per-panel metric badges. */

import { meanSampleOverlap, targetDistances } from "./metrics.js";
import type { AttractorPoint, SampleResponse } from "./types.js";
import type { Viewport } from "./viewport.js";

export interface PanelBadges {
  meanTargetDistance: number | null;
  overlap: number;
}

export function panelBadges(response: SampleResponse, attractors: AttractorPoint[]): PanelBadges {
  const td = targetDistances(response.samples, attractors);
  return {
    meanTargetDistance: td ? td.mean : null,
    overlap: meanSampleOverlap(response.samples),
  };
}

export interface ComparePair {
  before: SampleResponse;
  after: SampleResponse;
  viewport: Viewport; // shared: panning one panel pans both
}

export function makeComparePair(before: SampleResponse, after: SampleResponse, viewport: Viewport): ComparePair {
  return { before, after, viewport };
}

export function syncPan(pair: ComparePair, viewport: Viewport): ComparePair {
  return { ...pair, viewport };
}

export function identicalPanels(pair: ComparePair): boolean {
  return (
    JSON.stringify(pair.before.samples) === JSON.stringify(pair.after.samples) &&
    pair.before.seed === pair.after.seed
  );
}
