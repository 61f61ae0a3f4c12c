"""Two-domain synthetic scene generator with a controllable appearance shift.

Scenes are horizon-split backgrounds with rectangles, discs, and vertical
strips on top. The target domain re-renders the same label geometry under a
hue/brightness/noise/texture shift, so the domain gap is in the pixels only.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .netpbm import float_to_image, image_to_float, read_pgm, read_ppm, write_pgm, write_ppm

CLASS_NAMES = ["sky", "ground", "block", "disc", "stripe"]
PALETTE = [
    [113, 173, 227],
    [94, 130, 64],
    [204, 76, 64],
    [217, 201, 74],
    [124, 99, 171],
]
# Declared per-image seed splitting rule.
SEED_STRIDE = 1_000_003


@dataclass
class ShiftSpec:
    hue_shift: float = 0.0          # degrees of hue rotation
    brightness_delta: float = 0.0
    noise_sigma: float = 0.0
    texture_scale: float = 1.0      # multiplies the texture spatial frequency


@dataclass
class SceneSpec:
    width: int = 64
    height: int = 64
    num_classes: int = 5
    seed: int = 7
    shift: ShiftSpec = field(default_factory=ShiftSpec)

    def __post_init__(self):
        if isinstance(self.shift, dict):
            self.shift = ShiftSpec(**self.shift)
        if not 2 <= self.num_classes <= len(CLASS_NAMES):
            raise ValueError(f"num_classes must be in 2..{len(CLASS_NAMES)}")


def _rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    r, g, b = rgb
    maxc = rgb.max(axis=0)
    minc = rgb.min(axis=0)
    delta = maxc - minc
    safe = np.where(delta == 0, 1.0, delta)
    h = np.where(
        maxc == r, ((g - b) / safe) % 6.0,
        np.where(maxc == g, (b - r) / safe + 2.0, (r - g) / safe + 4.0),
    )
    h = np.where(delta == 0, 0.0, h) / 6.0
    s = np.where(maxc == 0, 0.0, delta / np.where(maxc == 0, 1.0, maxc))
    return np.stack([h, s, maxc])


def _hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    h, s, v = hsv
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    i = i.astype(np.int64) % 6
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b])


def image_seed(master_seed: int, image_index: int) -> int:
    return master_seed * SEED_STRIDE + image_index


def synth_labeled_image(spec: SceneSpec, shift: ShiftSpec, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """One scene: (image (3,H,W) float32 in [0,1], labels (H,W) uint8).

    The label geometry never depends on the shift values; the rng draws are in
    a fixed order so the same seed yields the same scene under any shift.
    """
    rng = np.random.default_rng(seed)
    w, h, k = spec.width, spec.height, spec.num_classes
    ys, xs = np.mgrid[0:h, 0:w]

    labels = np.zeros((h, w), dtype=np.uint8)
    horizon = int(rng.integers(int(0.3 * h), int(0.7 * h) + 1))
    labels[horizon:, :] = 1 if k > 1 else 0

    if k > 2:
        for _ in range(int(rng.integers(1, 4))):
            bw = int(rng.integers(max(2, w // 8), max(3, w // 3)))
            bh = int(rng.integers(max(2, h // 8), max(3, h // 3)))
            x0 = int(rng.integers(0, max(1, w - bw)))
            y0 = int(rng.integers(0, max(1, h - bh)))
            labels[y0 : y0 + bh, x0 : x0 + bw] = 2
    if k > 3:
        for _ in range(int(rng.integers(1, 4))):
            r = int(rng.integers(max(2, h // 12), max(3, h // 5)))
            cx = int(rng.integers(0, w))
            cy = int(rng.integers(0, h))
            labels[(xs - cx) ** 2 + (ys - cy) ** 2 <= r * r] = 3
    if k > 4:
        for _ in range(int(rng.integers(1, 3))):
            sw = int(rng.integers(2, max(3, w // 12)))
            x0 = int(rng.integers(0, max(1, w - sw)))
            labels[:, x0 : x0 + sw] = 4

    base = np.array(PALETTE[:k], dtype=np.float64) / 255.0
    base = np.clip(base + rng.uniform(-0.05, 0.05, size=base.shape), 0.0, 1.0)
    image = base[labels].transpose(2, 0, 1)

    # brightness texture: one oriented sinusoid per image
    theta = rng.uniform(0, np.pi)
    phase = rng.uniform(0, 2 * np.pi)
    cycles = rng.uniform(2.0, 4.0) * shift.texture_scale
    wave = np.sin(
        2 * np.pi * cycles * (np.cos(theta) * xs + np.sin(theta) * ys) / max(w, h) + phase
    )
    image = image * (1.0 + 0.08 * wave)

    noise = rng.standard_normal((3, h, w))
    if shift.hue_shift:
        hsv = _rgb_to_hsv(np.clip(image, 0.0, 1.0))
        hsv[0] = (hsv[0] + shift.hue_shift / 360.0) % 1.0
        image = _hsv_to_rgb(hsv)
    image = image + shift.brightness_delta + shift.noise_sigma * noise
    return np.clip(image, 0.0, 1.0).astype(np.float32), labels


_SPLIT_ORDER = (("source", "train"), ("source", "val"), ("target", "train"), ("target", "val"))


def generate_dataset(spec: SceneSpec, counts: dict[str, int], root) -> dict:
    """Write the full directory tree plus dataset.json; returns the manifest."""
    counts = dict(counts)
    counts.setdefault("source_val", 50)
    for key in ("source_train", "target_train", "target_val"):
        if counts.get(key, 0) < 1:
            raise ValueError(f"counts[{key!r}] must be >= 1")

    root = Path(root)
    zero = ShiftSpec()
    index = 0
    for domain, split in _SPLIT_ORDER:
        n = counts[f"{domain}_{split}"]
        img_dir = root / domain / split / "images"
        lab_dir = root / domain / split / "labels"
        img_dir.mkdir(parents=True, exist_ok=True)
        lab_dir.mkdir(parents=True, exist_ok=True)
        shift = spec.shift if domain == "target" else zero
        for i in range(n):
            image, labels = synth_labeled_image(spec, shift, image_seed(spec.seed, index))
            write_ppm(img_dir / f"{i:04d}.ppm", float_to_image(image))
            write_pgm(lab_dir / f"{i:04d}.pgm", labels)
            index += 1

    manifest = {
        "format_version": 1,
        "width": spec.width,
        "height": spec.height,
        "num_classes": spec.num_classes,
        "seed": spec.seed,
        "shift": asdict(spec.shift),
        "counts": counts,
        "class_names": CLASS_NAMES[: spec.num_classes],
        "palette": PALETTE[: spec.num_classes],
    }
    (root / "dataset.json").write_text(json.dumps(manifest, sort_keys=True, indent=1))
    return manifest


def load_manifest(root) -> dict:
    path = Path(root) / "dataset.json"
    if not path.exists():
        raise FileNotFoundError(f"no dataset manifest at {path}")
    return json.loads(path.read_text())


def split_ids(root, domain: str, split: str) -> list[str]:
    img_dir = Path(root) / domain / split / "images"
    return sorted(p.stem for p in img_dir.glob("*.ppm"))


def load_image(root, domain: str, split: str, image_id: str) -> np.ndarray:
    return image_to_float(read_ppm(Path(root) / domain / split / "images" / f"{image_id}.ppm"))


def load_labels(root, domain: str, split: str, image_id: str) -> np.ndarray:
    return read_pgm(Path(root) / domain / split / "labels" / f"{image_id}.pgm")


def load_split(root, domain: str, split: str) -> list[tuple[str, np.ndarray, np.ndarray]]:
    """All (id, image, labels) of a split, in id order, loaded into memory."""
    out = []
    for image_id in split_ids(root, domain, split):
        out.append((
            image_id,
            load_image(root, domain, split, image_id),
            load_labels(root, domain, split, image_id),
        ))
    if not out:
        raise FileNotFoundError(f"no images under {Path(root) / domain / split}")
    return out
