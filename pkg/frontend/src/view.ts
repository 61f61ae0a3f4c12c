import type { AnnotateResponse, LabelEntry } from "./types";

/** Client-side state; the server stays the source of truth for labels. */
export interface ViewState {
  imageId: string | null;
  zoom: number;
  panX: number;
  panY: number;
  selectedClass: number;
  proposed: Set<string>;
  annotated: Map<string, number>;
  pending: Map<string, number>;
  errors: Map<string, string>;
}

export const key = (x: number, y: number) => `${x},${y}`;

export function parseKey(k: string): [number, number] {
  const [x, y] = k.split(",").map(Number);
  return [x, y];
}

export function makeView(): ViewState {
  return {
    imageId: null,
    zoom: 10,
    panX: 0,
    panY: 0,
    selectedClass: 0,
    proposed: new Set(),
    annotated: new Map(),
    pending: new Map(),
    errors: new Map(),
  };
}

export function setImage(
  state: ViewState,
  imageId: string,
  proposed: [number, number][],
  annotated: [number, number, number][] = [],
): void {
  state.imageId = imageId;
  state.proposed = new Set(proposed.map(([x, y]) => key(x, y)));
  state.annotated = new Map(annotated.map(([x, y, cls]) => [key(x, y), cls]));
  state.pending = new Map();
  state.errors = new Map();
}

/** Pixel top-left corner in screen coordinates. */
export function imageToScreen(state: ViewState, ix: number, iy: number): [number, number] {
  return [ix * state.zoom + state.panX, iy * state.zoom + state.panY];
}

export function screenToImage(state: ViewState, sx: number, sy: number): [number, number] {
  return [
    Math.floor((sx - state.panX) / state.zoom),
    Math.floor((sy - state.panY) / state.zoom),
  ];
}

export function zoomAt(state: ViewState, factor: number, sx: number, sy: number): void {
  const next = Math.min(64, Math.max(2, state.zoom * factor));
  const applied = next / state.zoom;
  state.panX = sx - (sx - state.panX) * applied;
  state.panY = sy - (sy - state.panY) * applied;
  state.zoom = next;
}

export function panBy(state: ViewState, dx: number, dy: number): void {
  state.panX += dx;
  state.panY += dy;
}

/**
 * Toggle a pending label. Only proposed, not-yet-annotated pixels are
 * clickable, so every coordinate the UI ever submits originated in a
 * ProposalBatch.
 */
export function togglePending(state: ViewState, x: number, y: number, cls: number): boolean {
  const k = key(x, y);
  if (!state.proposed.has(k) || state.annotated.has(k)) {
    return false;
  }
  if (state.pending.get(k) === cls) {
    state.pending.delete(k);
  } else {
    state.pending.set(k, cls);
    state.errors.delete(k);
  }
  return true;
}

export function pendingLabels(state: ViewState): LabelEntry[] {
  return [...state.pending.entries()].map(([k, cls]) => {
    const [x, y] = parseKey(k);
    return { x, y, class: cls };
  });
}

/** Reconcile after a 200 from POST /api/annotations: pending empties, applied
 * pixels become annotated, conflicts carry an inline error message. */
export function applySubmitResponse(
  state: ViewState,
  submitted: LabelEntry[],
  response: AnnotateResponse,
): void {
  const rejected = new Map(response.rejected.map((r) => [key(r.x, r.y), r]));
  for (const label of submitted) {
    const k = key(label.x, label.y);
    state.pending.delete(k);
    const conflict = rejected.get(k);
    if (conflict) {
      state.errors.set(k, `server already has class ${conflict.have}`);
    } else {
      state.annotated.set(k, label.class);
    }
  }
}
