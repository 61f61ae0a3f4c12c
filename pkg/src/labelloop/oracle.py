"""Annotation machinery: a perfect simulated oracle that reveals ground truth
at selected pixels, and an append-only store accumulating sparse labels
across stages with per-merge provenance.
"""
from __future__ import annotations

import json
import logging
import threading
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .netpbm import read_pgm, write_pgm
from .numerics import IGNORE, ShapeMismatch

log = logging.getLogger(__name__)


def empty_labels(height: int, width: int) -> np.ndarray:
    return np.full((height, width), IGNORE, dtype=np.uint8)


def reveal(gt: np.ndarray, where) -> np.ndarray:
    """Ground truth at the selected pixels, IGNORE everywhere else.

    `where` is either a boolean mask of gt's shape or an iterable of (x, y).
    """
    out = empty_labels(*gt.shape)
    if isinstance(where, np.ndarray) and where.dtype == bool:
        if where.shape != gt.shape:
            raise ShapeMismatch(f"mask {where.shape} does not match labels {gt.shape}")
        out[where] = gt[where]
        return out
    for (x, y) in where:
        if not (0 <= y < gt.shape[0] and 0 <= x < gt.shape[1]):
            raise ValueError(f"point ({x}, {y}) outside {gt.shape[1]}x{gt.shape[0]} image")
        out[y, x] = gt[y, x]
    return out


@dataclass
class Provenance:
    stage: int
    strategy: str
    source: str  # "simulated" or "human"
    timestamp: str


@dataclass
class MergeResult:
    applied: int
    rejected: list[dict]


class AnnotationStore:
    """Per-image sparse label maps with append-only merge semantics.

    Re-annotating a pixel with the same class is a no-op; a different class is
    rejected pixel-by-pixel (the rest of the merge still applies). All
    mutations go through one lock so readers see consistent snapshots.
    """

    def __init__(self, width: int, height: int, num_classes: int):
        self.width = width
        self.height = height
        self.num_classes = num_classes
        self._maps: dict[str, np.ndarray] = {}
        self._events: dict[str, list[dict]] = {}
        self._lock = threading.Lock()

    def image_ids(self) -> list[str]:
        with self._lock:
            return sorted(self._maps)

    def labels_for(self, image_id: str) -> np.ndarray:
        with self._lock:
            if image_id in self._maps:
                return self._maps[image_id].copy()
        return empty_labels(self.height, self.width)

    def annotated_count(self, image_id: str | None = None) -> int:
        with self._lock:
            if image_id is not None:
                m = self._maps.get(image_id)
                return int((m != IGNORE).sum()) if m is not None else 0
            return sum(int((m != IGNORE).sum()) for m in self._maps.values())

    def annotated_points(self, image_id: str) -> set[tuple[int, int]]:
        labels = self.labels_for(image_id)
        ys, xs = np.nonzero(labels != IGNORE)
        return {(int(x), int(y)) for x, y in zip(xs, ys)}

    def merge(self, image_id: str, new: np.ndarray, provenance: Provenance) -> MergeResult:
        if new.shape != (self.height, self.width):
            raise ShapeMismatch(
                f"annotation map {new.shape} does not match store "
                f"({self.height}, {self.width})"
            )
        labeled = new != IGNORE
        values = new[labeled]
        if values.size and values.max() >= self.num_classes:
            raise ValueError(f"annotation class >= {self.num_classes}")

        with self._lock:
            current = self._maps.setdefault(image_id, empty_labels(self.height, self.width))
            conflict = labeled & (current != IGNORE) & (current != new)
            fresh = labeled & (current == IGNORE)
            current[fresh] = new[fresh]

            rejected = []
            for y, x in zip(*np.nonzero(conflict)):
                rejected.append({
                    "x": int(x), "y": int(y),
                    "have": int(current[y, x]), "got": int(new[y, x]),
                })
            if rejected:
                log.warning("%s: rejected %d conflicting re-annotations", image_id, len(rejected))

            applied = int(fresh.sum())
            event = asdict(provenance)
            event["pixels"] = [[int(x), int(y)] for y, x in zip(*np.nonzero(fresh))]
            self._events.setdefault(image_id, []).append(event)
        return MergeResult(applied=applied, rejected=rejected)

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        with self._lock:
            for image_id, labels in self._maps.items():
                write_pgm(directory / f"{image_id}.pgm", labels)
                meta = {
                    "image_id": image_id,
                    "width": self.width,
                    "height": self.height,
                    "num_classes": self.num_classes,
                    "events": self._events.get(image_id, []),
                }
                (directory / f"{image_id}.meta.json").write_text(
                    json.dumps(meta, sort_keys=True, indent=1)
                )

    @classmethod
    def load(cls, directory, width: int, height: int, num_classes: int) -> "AnnotationStore":
        store = cls(width, height, num_classes)
        directory = Path(directory)
        if not directory.is_dir():
            return store
        for pgm in sorted(directory.glob("*.pgm")):
            image_id = pgm.stem
            store._maps[image_id] = read_pgm(pgm)
            meta_path = directory / f"{image_id}.meta.json"
            if meta_path.exists():
                store._events[image_id] = json.loads(meta_path.read_text())["events"]
        return store
