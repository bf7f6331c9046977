/** Composer state: the loaded scene, constraint edits, last responses. */

import type { ConstraintEditor } from "./constraints.js";
import { deserialize, emptyEditor, serialize } from "./constraints.js";
import type { SampleRequest, SampleResponse, SceneRecord, SeedMode } from "./types.js";

export interface ComposerState {
  scene: SceneRecord | null;
  editor: ConstraintEditor;
  seedMode: SeedMode;
  seed: number;
  numSamples: number;
  clusterK: number | null;
  includeLogp: boolean;
  selectedAgent: number;
  selectedTimestep: number; // defaults to the final step
  lastResponse: SampleResponse | null;
  baselineResponse: SampleResponse | null; // unconstrained render for compare
}

export function initialState(): ComposerState {
  return {
    scene: null,
    editor: emptyEditor(),
    seedMode: "fixed",
    seed: 0,
    numSamples: 32,
    clusterK: 6,
    includeLogp: true,
    selectedAgent: 0,
    selectedTimestep: -1,
    lastResponse: null,
    baselineResponse: null,
  };
}

export function loadScene(state: ComposerState, scene: SceneRecord): ComposerState {
  return {
    ...initialState(),
    seed: state.seed,
    seedMode: state.seedMode,
    numSamples: state.numSamples,
    scene,
  };
}

export function effectiveTimestep(state: ComposerState): number {
  if (!state.scene) return 0;
  const horizon = state.scene.agents[0].future.length;
  return state.selectedTimestep >= 0 ? state.selectedTimestep : horizon - 1;
}

/** Next request seed: fixed mode isolates constraint edits, fresh explores. */
export function nextSeed(state: ComposerState): number {
  return state.seedMode === "fixed" ? state.seed : Math.floor(Math.random() * 2 ** 31);
}

export function buildRequest(state: ComposerState, seed: number): SampleRequest {
  if (!state.scene) throw new Error("no scene loaded");
  const req: SampleRequest = {
    scene_id: state.scene.scenario_id,
    num_samples: state.numSamples,
    seed,
    include_logp: state.includeLogp,
  };
  if (state.clusterK) req.cluster_k = state.clusterK;
  const constraints = serialize(state.editor);
  if (constraints) req.constraints = constraints;
  return req;
}

/** Round-trip guard used by tests and the UI's debug panel. */
export function constraintsRoundTrip(state: ComposerState): boolean {
  const doc = serialize(state.editor);
  const back = serialize(deserialize(doc));
  return JSON.stringify(doc) === JSON.stringify(back);
}
