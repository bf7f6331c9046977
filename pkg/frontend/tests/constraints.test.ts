import { describe, expect, it } from "vitest";

import {
  deserialize,
  emptyEditor,
  hasActiveConstraints,
  placeAttractor,
  serialize,
  setRepeller,
  undoLastAttractor,
} from "../src/constraints.js";

describe("constraint editing", () => {
  it("places attractors in scene units", () => {
    const editor = placeAttractor(emptyEditor(), 1, 15, 2.5, -3.25);
    expect(editor.attractors).toEqual([{ agent: 1, t_index: 15, x: 2.5, y: -3.25 }]);
  });

  it("placing on the same (agent, t) replaces the marker", () => {
    let editor = placeAttractor(emptyEditor(), 0, 15, 1, 1);
    editor = placeAttractor(editor, 0, 15, 2, 2);
    expect(editor.attractors).toHaveLength(1);
    expect(editor.attractors[0].x).toBe(2);
  });

  it("marks only the clicked (agent, t) pair", () => {
    let editor = placeAttractor(emptyEditor(), 0, 15, 1, 1);
    editor = placeAttractor(editor, 1, 7, 3, 3);
    const doc = serialize(editor)!;
    expect(doc.attractors).toHaveLength(2);
    expect(doc.attractors![0]).toMatchObject({ agent: 0, t_index: 15 });
    expect(doc.attractors![1]).toMatchObject({ agent: 1, t_index: 7 });
  });

  it("undo removes exactly the last-placed marker", () => {
    let editor = placeAttractor(emptyEditor(), 0, 15, 1, 1);
    editor = placeAttractor(editor, 1, 15, 2, 2);
    editor = undoLastAttractor(editor);
    expect(editor.attractors).toEqual([{ agent: 0, t_index: 15, x: 1, y: 1 }]);
    expect(undoLastAttractor(undoLastAttractor(editor)).attractors).toEqual([]);
  });

  it("serializes the full guidance document and round-trips unchanged", () => {
    let editor = placeAttractor(emptyEditor(), 0, 15, 1.5, 2.5);
    editor = setRepeller(editor, 1.25);
    editor.scoreThresholding = false;
    const doc = serialize(editor)!;
    expect(doc).toEqual({
      score_thresholding: false,
      attractors: [{ agent: 0, t_index: 15, x: 1.5, y: 2.5 }],
      lambda_attract: 20.0,
      repeller: { radius: 1.25 },
      lambda_repel: 40.0,
    });
    expect(serialize(deserialize(doc))).toEqual(doc);
  });

  it("no active constraints serializes to undefined", () => {
    expect(serialize(emptyEditor())).toBeUndefined();
    expect(hasActiveConstraints(emptyEditor())).toBe(false);
  });
});
