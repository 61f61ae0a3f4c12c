"""Training objectives: source supervision, selector self-training,
classifier-discrepancy min-max, sparse target supervision, and the optional
entropy regularizer.

Objectives that take a probability map return (LossReport, dlogits); the
selector objectives run forward and backward themselves and leave parameter
gradients in the model.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import model as mdl
from .numerics import IGNORE, entropy_map, masked_cross_entropy, softmax_backward

LOSS_NAMES = ("L_s", "L_self", "L_dis", "L_t", "L_ent")


@dataclass
class LossReport:
    name: str
    value: float
    pixels_used: int

    def record(self, stage: int, step: int) -> dict:
        return {"stage": stage, "step": step, "loss": self.name, "value": self.value}


def loss_source(pred: np.ndarray, labels: np.ndarray) -> tuple[LossReport, np.ndarray]:
    """Supervised cross entropy on the (densely labeled) source domain."""
    value, dlogits, n = masked_cross_entropy(pred, labels)
    return LossReport("L_s", value, n), dlogits


def loss_target_sparse(pred: np.ndarray, annotations: np.ndarray) -> tuple[LossReport, np.ndarray]:
    """Cross entropy over the sparse oracle-annotated pixels only."""
    value, dlogits, n = masked_cross_entropy(pred, annotations)
    return LossReport("L_t", value, n), dlogits


def make_pseudo_labels(pred: np.ndarray, tau: float = 0.9) -> np.ndarray:
    """Per-pixel argmax labels; pixels with max probability < tau become IGNORE."""
    labels = pred.argmax(axis=0).astype(np.uint8)
    labels[pred.max(axis=0) < tau] = IGNORE
    return labels


def loss_self(
    selector: mdl.ModelParams, image: np.ndarray, pseudo: np.ndarray
) -> tuple[LossReport, mdl.Prediction]:
    """Sum of both heads' cross entropies against shared pseudo labels.

    Gradients flow to the selector backbone and both heads.
    """
    if selector.num_heads != 2:
        raise ValueError("self-training loss expects the two-head selector")
    pred = mdl.forward(selector, image)
    total = 0.0
    dlogits = []
    n = 0
    for probs in pred.probs:
        value, dl, n = masked_cross_entropy(probs, pseudo)
        total += value
        dlogits.append(dl)
    mdl.backward(selector, pred, dlogits)
    return LossReport("L_self", total, n), pred


def discrepancy_value(probs1: np.ndarray, probs2: np.ndarray) -> float:
    """Mean over pixels of the L1 distance between the heads' probability vectors."""
    n_pixels = probs1.shape[1] * probs1.shape[2]
    return float(np.abs(probs1 - probs2).sum(dtype=np.float64) / n_pixels)


def loss_discrepancy(
    selector: mdl.ModelParams, image: np.ndarray
) -> tuple[LossReport, mdl.Prediction]:
    """L1 distance between the two heads' outputs, averaged over pixels.

    Where the heads agree exactly (always right after cloning) the zero
    subgradient of |.| would freeze the ascent at the discrepancy minimum, so
    ties take the alternating-by-class subgradient instead: a valid ascent
    direction that lets the copied heads diverge.
    """
    if selector.num_heads != 2:
        raise ValueError("discrepancy loss expects the two-head selector")
    pred = mdl.forward(selector, image)
    p1, p2 = pred.probs
    n_pixels = p1.shape[1] * p1.shape[2]

    value = discrepancy_value(p1, p2)
    sign = np.sign(p1 - p2)
    ties = sign == 0
    if ties.any():
        k = p1.shape[0]
        tie_direction = np.where(np.arange(k) % 2 == 0, 1.0, -1.0).astype(sign.dtype)
        sign[ties] = np.broadcast_to(tie_direction[:, None, None], sign.shape)[ties]
    sign /= n_pixels
    dlogits = [softmax_backward(p1, sign), softmax_backward(p2, -sign)]
    mdl.backward(selector, pred, dlogits)
    return LossReport("L_dis", value, n_pixels), pred


def discrepancy_minmax_round(
    selector: mdl.ModelParams,
    image: np.ndarray,
    inner_max_steps: int,
    lr: float,
    momentum: float,
) -> bool:
    """One alternation: inner_max_steps head-ascent updates, then one backbone descent.

    Returns False and leaves the round incomplete if a non-finite loss shows up.
    """
    for _ in range(inner_max_steps):
        selector.zero_grads()
        report, _ = loss_discrepancy(selector, image)
        if not np.isfinite(report.value):
            return False
        mdl.sgd_step(selector, lr, momentum, ascent_heads=True)

    selector.zero_grads()
    report, _ = loss_discrepancy(selector, image)
    if not np.isfinite(report.value):
        return False
    mdl.sgd_step(selector, lr, momentum, include="backbone")
    return True


def loss_entropy_reg(
    pred: np.ndarray, annotations: np.ndarray, weight: float = 1.0
) -> tuple[LossReport, np.ndarray]:
    """Mean prediction entropy over the unannotated (IGNORE) pixels.

    weight is the config lambda; the default run has it at 0, in which case
    the pipeline skips this term entirely.
    """
    unlabeled = annotations == IGNORE
    n = int(unlabeled.sum())
    if n == 0 or weight == 0.0:
        return LossReport("L_ent", 0.0, 0), np.zeros_like(pred)

    ent = entropy_map(pred)
    value = weight * float(ent[unlabeled].sum(dtype=np.float64) / n)

    logp = np.log(np.clip(pred, 1e-30, None))
    dprobs = np.zeros_like(pred)
    dprobs[:, unlabeled] = -(logp[:, unlabeled] + 1.0) * (weight / n)
    dlogits = softmax_backward(pred, dprobs)
    return LossReport("L_ent", value, n), dlogits
