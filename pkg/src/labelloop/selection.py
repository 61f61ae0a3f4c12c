"""Pixel-selection strategies: the disagreement mask, SPL, PPL (best/worst),
and the budget-matched RAND/SCONF/ENT baselines.

Points are (x, y) coordinates; all tie-breaks are by lowest class index or
row-major pixel order so every strategy is byte-reproducible.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import IGNORE, ShapeMismatch, entropy_map

Point = tuple[int, int]


@dataclass
class ClassCluster:
    """Masked pixels the task model assigns to one class, plus their prototype."""

    class_id: int
    members: list[Point]
    prototype: np.ndarray  # mean probability vector of the members


def inconsistency_mask(probs1: np.ndarray, probs2: np.ndarray) -> np.ndarray:
    """Boolean map of pixels where the two heads' argmax classes differ."""
    if probs1.shape != probs2.shape:
        raise ShapeMismatch(f"probability maps differ: {probs1.shape} vs {probs2.shape}")
    return probs1.argmax(axis=0) != probs2.argmax(axis=0)


def select_spl(mask: np.ndarray) -> np.ndarray:
    """Segment labeling annotates every masked pixel: identity on the mask."""
    return mask.copy()


def cluster_by_class(mask: np.ndarray, probs: np.ndarray) -> list[ClassCluster]:
    """Group masked pixels by the task model's argmax class (row-major member order)."""
    if mask.shape != probs.shape[1:]:
        raise ShapeMismatch(f"mask {mask.shape} does not match probs {probs.shape[1:]}")
    argmax = probs.argmax(axis=0)
    clusters = []
    for k in range(probs.shape[0]):
        ys, xs = np.nonzero(mask & (argmax == k))
        if ys.size == 0:
            continue
        vectors = probs[:, ys, xs]
        prototype = vectors.mean(axis=1, dtype=np.float64)
        members = [(int(x), int(y)) for y, x in zip(ys, xs)]
        clusters.append(ClassCluster(k, members, prototype))
    return clusters


def cosine_distance(a: np.ndarray, b: np.ndarray) -> float:
    """1 - cos(a, b); probability vectors sum to 1 so norms never vanish."""
    num = float(np.dot(a.astype(np.float64), b.astype(np.float64)))
    den = float(np.linalg.norm(a) * np.linalg.norm(b))
    return 1.0 - num / den


def select_ppl(mask: np.ndarray, probs: np.ndarray, variant: str = "best") -> list[Point]:
    """One representative pixel per predicted class inside the mask.

    best picks the member closest (cosine distance) to its class prototype,
    worst the farthest; distance ties break by row-major pixel order.
    """
    if variant not in ("best", "worst"):
        raise ValueError(f"variant must be 'best' or 'worst', got {variant!r}")
    points = []
    for cluster in cluster_by_class(mask, probs):
        best_point = None
        best_dist = None
        for (x, y) in cluster.members:
            d = cosine_distance(cluster.prototype, probs[:, y, x].astype(np.float64))
            better = best_dist is None or (d < best_dist if variant == "best" else d > best_dist)
            if better:
                best_point, best_dist = (x, y), d
        points.append(best_point)
    return points


def score_entropy(probs: np.ndarray) -> np.ndarray:
    """Per-pixel Shannon entropy of the prediction (natural log)."""
    return entropy_map(probs)


def score_sconf(probs: np.ndarray) -> np.ndarray:
    """Per-pixel least-confidence score: 1 - max probability."""
    return 1.0 - probs.max(axis=0)


def select_budgeted(
    score: np.ndarray | None,
    budget: int,
    exclude: np.ndarray,
    rng: np.random.Generator | None = None,
) -> list[Point]:
    """Top-`budget` pixels by score, or a seeded uniform sample when score is None.

    Pixels already annotated in `exclude` (entries != IGNORE) are never selected,
    so re-selections across stages cost no extra budget.
    """
    if budget < 0:
        raise ValueError(f"budget must be >= 0, got {budget}")
    h, w = exclude.shape
    allowed = (exclude == IGNORE).ravel()
    candidates = np.nonzero(allowed)[0]
    take = min(budget, candidates.size)
    if take == 0:
        return []

    if score is None:
        if rng is None:
            raise ValueError("uniform selection needs a seeded generator")
        chosen = rng.choice(candidates, size=take, replace=False)
    else:
        if score.shape != exclude.shape:
            raise ShapeMismatch(f"score {score.shape} does not match labels {exclude.shape}")
        flat = score.ravel().astype(np.float64).copy()
        flat[~allowed] = -np.inf
        # stable sort on -score: descending score, row-major ties
        chosen = np.argsort(-flat, kind="stable")[:take]
    return [(int(i % w), int(i // w)) for i in chosen]


def selection_report(
    stage: int,
    strategy: str,
    selections: dict[str, set[Point]],
    prior: dict[str, set[Point]],
    image_size: tuple[int, int],
) -> dict:
    """Per-stage and cumulative label-budget accounting.

    selections holds this stage's selected points per image, prior the points
    annotated before this stage; the cumulative count is their union.
    """
    w, h = image_size
    pixels_per_image = w * h
    images = sorted(selections)
    new_pixels = 0
    cumulative = 0
    for image_id in images:
        before = prior.get(image_id, set())
        new_pixels += len(selections[image_id] - before)
        cumulative += len(selections[image_id] | before)
    n = len(images)
    total = n * pixels_per_image
    return {
        "stage": stage,
        "strategy": strategy,
        "images": n,
        "new_pixels": new_pixels,
        "cumulative_pixels": cumulative,
        "stage_fraction": new_pixels / total if total else 0.0,
        "cumulative_fraction": cumulative / total if total else 0.0,
        "mean_points_per_image": cumulative / n if n else 0.0,
    }
