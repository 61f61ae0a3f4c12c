import { ApiClient } from "./api";
import { proposalPixels } from "./rle";
import type { DatasetInfo, PaletteEntry, ProposalBatch, Status } from "./types";
import {
  applySubmitResponse,
  imageToScreen,
  makeView,
  panBy,
  parseKey,
  pendingLabels,
  screenToImage,
  setImage,
  togglePending,
  zoomAt,
} from "./view";

const api = new ApiClient("");
const state = makeView();

let dataset: DatasetInfo;
let palette: PaletteEntry[] = [];
let batch: ProposalBatch | null = null;
let status: Status | null = null;
let imageBitmap: ImageBitmap | null = null;

const $ = (id: string) => document.getElementById(id)!;
const canvas = () => $("canvas") as HTMLCanvasElement;

function classColor(cls: number): string {
  const color = palette[cls]?.color ?? [255, 255, 255];
  return `rgb(${color[0]}, ${color[1]}, ${color[2]})`;
}

async function loadImage(imageId: string): Promise<void> {
  batch = await api.getProposals(imageId);
  palette = batch.palette;
  const annotated: [number, number, number][] = [];
  setImage(state, imageId, proposalPixels(batch), annotated);
  const blob = await (await fetch(api.imageUrl(imageId))).blob();
  imageBitmap = await createImageBitmap(blob);
  fitView();
  renderSidebar();
}

function fitView(): void {
  const c = canvas();
  state.zoom = Math.max(2, Math.floor(Math.min(c.width / dataset.width, c.height / dataset.height)));
  state.panX = Math.floor((c.width - dataset.width * state.zoom) / 2);
  state.panY = Math.floor((c.height - dataset.height * state.zoom) / 2);
}

function draw(now: number): void {
  const c = canvas();
  const ctx = c.getContext("2d")!;
  ctx.fillStyle = "#1c1f26";
  ctx.fillRect(0, 0, c.width, c.height);
  if (imageBitmap) {
    ctx.imageSmoothingEnabled = false;
    ctx.drawImage(
      imageBitmap,
      state.panX,
      state.panY,
      dataset.width * state.zoom,
      dataset.height * state.zoom,
    );
  }
  const z = state.zoom;
  const pulse = 0.45 + 0.35 * Math.sin(now / 250);

  for (const k of state.proposed) {
    if (state.pending.has(k) || state.annotated.has(k)) continue;
    const [x, y] = parseKey(k);
    const [sx, sy] = imageToScreen(state, x, y);
    ctx.strokeStyle = `rgba(255, 255, 120, ${pulse})`;
    ctx.lineWidth = Math.max(1.5, z / 6);
    ctx.strokeRect(sx + 0.5, sy + 0.5, z - 1, z - 1);
  }
  for (const [k, cls] of state.annotated) {
    const [x, y] = parseKey(k);
    const [sx, sy] = imageToScreen(state, x, y);
    ctx.fillStyle = classColor(cls);
    ctx.fillRect(sx, sy, z, z);
  }
  for (const [k, cls] of state.pending) {
    const [x, y] = parseKey(k);
    const [sx, sy] = imageToScreen(state, x, y);
    ctx.fillStyle = classColor(cls);
    ctx.fillRect(sx, sy, z, z);
    ctx.strokeStyle = "#ffffff";
    ctx.lineWidth = 2;
    ctx.strokeRect(sx + 1, sy + 1, z - 2, z - 2);
  }
  for (const k of state.errors.keys()) {
    const [x, y] = parseKey(k);
    const [sx, sy] = imageToScreen(state, x, y);
    ctx.strokeStyle = "#ff4455";
    ctx.lineWidth = 2;
    ctx.beginPath();
    ctx.moveTo(sx, sy);
    ctx.lineTo(sx + z, sy + z);
    ctx.moveTo(sx + z, sy);
    ctx.lineTo(sx, sy + z);
    ctx.stroke();
  }
  requestAnimationFrame(draw);
}

function renderSidebar(): void {
  const list = $("images");
  list.innerHTML = "";
  for (const id of dataset.image_ids) {
    const item = document.createElement("button");
    item.textContent = id;
    item.className = id === state.imageId ? "image-item active" : "image-item";
    item.onclick = () => void loadImage(id);
    list.appendChild(item);
  }

  const pal = $("palette");
  pal.innerHTML = "";
  palette.forEach((entry) => {
    const btn = document.createElement("button");
    btn.textContent = `${entry.id} ${entry.name}`;
    btn.className = entry.id === state.selectedClass ? "class-item active" : "class-item";
    btn.style.borderLeftColor = classColor(entry.id);
    btn.onclick = () => {
      state.selectedClass = entry.id;
      renderSidebar();
    };
    pal.appendChild(btn);
  });

  const left = state.proposed.size - state.annotated.size - state.pending.size;
  $("proposal-info").textContent =
    state.proposed.size === 0
      ? "nothing to label on this image"
      : `${left} proposed pixels unlabeled, ${state.pending.size} pending`;
  const errors = [...state.errors.entries()]
    .map(([k, message]) => `(${k}): ${message}`)
    .join("; ");
  $("errors").textContent = errors;
}

function renderStatus(): void {
  if (!status) return;
  const history = status.miou_history.map((h) => `s${h.stage} ${(h.miou * 100).toFixed(1)}`).join("  ");
  $("status-line").textContent =
    `stage ${status.stage} (${status.strategy})` +
    ` | labeled ${status.budget.annotated_pixels} px` +
    ` (${(status.budget.annotated_fraction * 100).toFixed(2)}%)` +
    (history ? ` | mIoU: ${history}` : "") +
    (status.running ? " | training..." : "") +
    (status.job_error ? ` | error: ${status.job_error}` : "");
  ($("advance") as HTMLButtonElement).disabled = status.running;
}

async function pollStatus(): Promise<void> {
  const wasRunning = status?.running ?? false;
  try {
    status = await api.getStatus();
    $("banner").textContent = "";
  } catch {
    $("banner").textContent = "service unreachable, retrying...";
  }
  renderStatus();
  if (wasRunning && status && !status.running && state.imageId) {
    await loadImage(state.imageId); // next-stage proposals are ready
  }
}

async function submit(): Promise<void> {
  if (!state.imageId || state.pending.size === 0) return;
  const labels = pendingLabels(state);
  try {
    const response = await api.postAnnotations(state.imageId, labels);
    applySubmitResponse(state, labels, response);
  } catch (err) {
    $("banner").textContent = `submit failed: ${err}`;
  }
  renderSidebar();
}

function wireCanvas(): void {
  const c = canvas();
  let dragging = false;
  let moved = false;
  let last: [number, number] = [0, 0];

  c.addEventListener("mousedown", (ev) => {
    dragging = true;
    moved = false;
    last = [ev.offsetX, ev.offsetY];
  });
  c.addEventListener("mousemove", (ev) => {
    if (!dragging) return;
    const dx = ev.offsetX - last[0];
    const dy = ev.offsetY - last[1];
    if (Math.abs(dx) + Math.abs(dy) > 2) moved = true;
    panBy(state, dx, dy);
    last = [ev.offsetX, ev.offsetY];
  });
  window.addEventListener("mouseup", (ev) => {
    if (!dragging) return;
    dragging = false;
    if (moved) return;
    const rect = c.getBoundingClientRect();
    const [ix, iy] = screenToImage(state, ev.clientX - rect.left, ev.clientY - rect.top);
    if (ix >= 0 && iy >= 0 && ix < dataset.width && iy < dataset.height) {
      togglePending(state, ix, iy, state.selectedClass);
      renderSidebar();
    }
  });
  c.addEventListener("wheel", (ev) => {
    ev.preventDefault();
    zoomAt(state, ev.deltaY < 0 ? 1.25 : 0.8, ev.offsetX, ev.offsetY);
  });
}

async function boot(): Promise<void> {
  dataset = await api.getDataset();
  $("advance").onclick = async () => {
    try {
      await api.advanceStage();
    } catch (err) {
      $("banner").textContent = String(err);
    }
    await pollStatus();
  };
  $("submit").onclick = () => void submit();
  wireCanvas();
  await pollStatus();
  setInterval(() => void pollStatus(), 1500);
  if (dataset.image_ids.length) {
    await loadImage(dataset.image_ids[0]);
  }
  requestAnimationFrame(draw);
}

void boot();
