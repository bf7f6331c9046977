/** Constraint-set editing: attractor placement, repeller settings, undo.
 *
 * Edits are local until the user resamples; the serialized form is exactly
 * the service's guidance JSON so round trips are lossless.
 */

import type { AttractorPoint, ConstraintSet } from "./types.js";

export const DEFAULT_LAMBDA_ATTRACT = 20.0;
export const DEFAULT_LAMBDA_REPEL = 40.0;

export interface ConstraintEditor {
  attractors: AttractorPoint[];
  repellerRadius: number | null;
  lambdaAttract: number;
  lambdaRepel: number;
  scoreThresholding: boolean;
}

export function emptyEditor(): ConstraintEditor {
  return {
    attractors: [],
    repellerRadius: null,
    lambdaAttract: DEFAULT_LAMBDA_ATTRACT,
    lambdaRepel: DEFAULT_LAMBDA_REPEL,
    scoreThresholding: true,
  };
}

export function placeAttractor(
  editor: ConstraintEditor,
  agent: number,
  tIndex: number,
  x: number,
  y: number,
): ConstraintEditor {
  const marker: AttractorPoint = { agent, t_index: tIndex, x, y };
  // a second click on the same (agent, t) replaces the marker
  const rest = editor.attractors.filter((a) => !(a.agent === agent && a.t_index === tIndex));
  return { ...editor, attractors: [...rest, marker] };
}

export function undoLastAttractor(editor: ConstraintEditor): ConstraintEditor {
  return { ...editor, attractors: editor.attractors.slice(0, -1) };
}

export function setRepeller(editor: ConstraintEditor, radius: number | null): ConstraintEditor {
  return { ...editor, repellerRadius: radius };
}

export function hasActiveConstraints(editor: ConstraintEditor): boolean {
  return editor.attractors.length > 0 || editor.repellerRadius !== null;
}

export function serialize(editor: ConstraintEditor): ConstraintSet | undefined {
  if (!hasActiveConstraints(editor)) return undefined;
  const out: ConstraintSet = { score_thresholding: editor.scoreThresholding };
  if (editor.attractors.length > 0) {
    out.attractors = editor.attractors.map((a) => ({ ...a }));
    out.lambda_attract = editor.lambdaAttract;
  }
  if (editor.repellerRadius !== null) {
    out.repeller = { radius: editor.repellerRadius };
    out.lambda_repel = editor.lambdaRepel;
  }
  return out;
}

export function deserialize(doc: ConstraintSet | undefined | null): ConstraintEditor {
  const editor = emptyEditor();
  if (!doc) return editor;
  editor.scoreThresholding = doc.score_thresholding ?? true;
  editor.attractors = (doc.attractors ?? []).map((a) => ({ ...a }));
  if (doc.lambda_attract !== undefined) editor.lambdaAttract = doc.lambda_attract;
  if (doc.repeller) editor.repellerRadius = doc.repeller.radius;
  if (doc.lambda_repel !== undefined) editor.lambdaRepel = doc.lambda_repel;
  return editor;
}
