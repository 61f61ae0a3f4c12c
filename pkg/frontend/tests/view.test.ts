import { beforeEach, describe, expect, it } from "vitest";
import type { ViewState } from "../src/view";
import {
  applySubmitResponse,
  imageToScreen,
  key,
  makeView,
  panBy,
  pendingLabels,
  screenToImage,
  setImage,
  togglePending,
  zoomAt,
} from "../src/view";

describe("view state", () => {
  let state: ViewState;

  beforeEach(() => {
    state = makeView();
    setImage(state, "0000", [[1, 1], [2, 3], [5, 5]], [[5, 5, 2]]);
  });

  it("only proposed pixels can become pending", () => {
    expect(togglePending(state, 0, 0, 1)).toBe(false);
    expect(state.pending.size).toBe(0);
    expect(togglePending(state, 1, 1, 1)).toBe(true);
    expect(state.pending.get(key(1, 1))).toBe(1);
  });

  it("already-annotated pixels are not clickable", () => {
    expect(togglePending(state, 5, 5, 1)).toBe(false);
    expect(state.pending.size).toBe(0);
  });

  it("toggling the same class twice clears the pending label", () => {
    togglePending(state, 1, 1, 3);
    togglePending(state, 1, 1, 3);
    expect(state.pending.size).toBe(0);
  });

  it("re-toggling with a different class replaces the label", () => {
    togglePending(state, 1, 1, 3);
    togglePending(state, 1, 1, 4);
    expect(state.pending.get(key(1, 1))).toBe(4);
  });

  it("every submitted coordinate originated in the proposal set", () => {
    togglePending(state, 1, 1, 0);
    togglePending(state, 2, 3, 4);
    togglePending(state, 9, 9, 1); // not proposed: ignored
    for (const label of pendingLabels(state)) {
      expect(state.proposed.has(key(label.x, label.y))).toBe(true);
    }
    expect(pendingLabels(state)).toHaveLength(2);
  });

  it("a 200 response empties pending and marks applied pixels annotated", () => {
    togglePending(state, 1, 1, 0);
    togglePending(state, 2, 3, 4);
    const submitted = pendingLabels(state);
    applySubmitResponse(state, submitted, {
      applied: 2,
      rejected: [],
      counts: { image: 3, total: 3 },
    });
    expect(state.pending.size).toBe(0);
    expect(state.annotated.get(key(1, 1))).toBe(0);
    expect(state.annotated.get(key(2, 3))).toBe(4);
  });

  it("conflicts surface as inline errors, not annotations", () => {
    togglePending(state, 1, 1, 0);
    const submitted = pendingLabels(state);
    applySubmitResponse(state, submitted, {
      applied: 0,
      rejected: [{ x: 1, y: 1, have: 3, got: 0 }],
      counts: { image: 1, total: 1 },
    });
    expect(state.pending.size).toBe(0);
    expect(state.annotated.has(key(1, 1))).toBe(false);
    expect(state.errors.get(key(1, 1))).toMatch(/class 3/);
  });

  it("screen/image transforms round-trip under zoom and pan", () => {
    zoomAt(state, 1.5, 100, 80);
    panBy(state, -23, 11);
    zoomAt(state, 0.7, 10, 400);
    for (const [ix, iy] of [[0, 0], [3, 7], [12, 9]] as const) {
      const [sx, sy] = imageToScreen(state, ix, iy);
      // the pixel's screen cell maps back to the same pixel, corner and center
      expect(screenToImage(state, sx + 0.01, sy + 0.01)).toEqual([ix, iy]);
      expect(screenToImage(state, sx + state.zoom / 2, sy + state.zoom / 2)).toEqual([ix, iy]);
    }
  });

  it("zoom is clamped and anchored at the cursor", () => {
    const [ix, iy] = screenToImage(state, 50, 50);
    for (let i = 0; i < 30; i++) zoomAt(state, 1.5, 50, 50);
    expect(state.zoom).toBeLessThanOrEqual(64);
    expect(screenToImage(state, 50, 50)).toEqual([ix, iy]);
  });
});
