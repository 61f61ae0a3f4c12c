"""Finite-difference validation of every training objective.

Each instance is a seeded 16x16 scene with randomly initialized models; all
checks run in float64 so the difference quotients are dominated by truncation,
not rounding. Central differences are only valid where the loss is smooth on
the whole [w-h, w+h] interval, so the check models are built with every
nonlinearity at a safe margin from its kink: small-scale backbone weights with
positive biases keep all ReLUs strictly active, and the selector's second head
carries alternating logit offsets so no |p1 - p2| term sits near zero. The
backward path being validated is identical to the training one.
"""
from __future__ import annotations

import numpy as np

from . import losses, model as mdl
from .losses import LOSS_NAMES
from .numerics import IGNORE, check_gradients, masked_cross_entropy

def _margin_model(rng: np.random.Generator, num_classes: int, num_heads: int) -> mdl.ModelParams:
    c1, c2 = mdl.HIDDEN_CHANNELS
    backbone = [
        mdl.Param("backbone.conv1.weight", rng.normal(0, 0.01, (c1, 3, 3, 3))),
        mdl.Param("backbone.conv1.bias", np.full(c1, 0.3)),
        mdl.Param("backbone.conv2.weight", rng.normal(0, 0.01, (c2, c1, 3, 3))),
        mdl.Param("backbone.conv2.bias", np.full(c2, 0.3)),
    ]
    if num_heads == 1:
        heads = [[
            mdl.Param("heads.0.weight", rng.normal(0, 0.5, (num_classes, c2, 1, 1))),
            mdl.Param("heads.0.bias", rng.normal(0, 0.2, num_classes)),
        ]]
    else:
        base = rng.normal(0, 0.2, (num_classes, c2, 1, 1))
        offsets = 0.3 * np.where(np.arange(num_classes) % 2 == 0, 1.0, -1.0)
        heads = [
            [mdl.Param("heads.0.weight", base.copy()),
             mdl.Param("heads.0.bias", np.zeros(num_classes))],
            [mdl.Param("heads.1.weight", base.copy()),
             mdl.Param("heads.1.bias", offsets.copy())],
        ]
    return mdl.ModelParams(backbone, heads, num_classes)


def make_instance(seed: int, size: int = 16, num_classes: int = 5) -> dict:
    rng = np.random.default_rng(seed)
    image = rng.uniform(0.0, 1.0, size=(3, size, size))
    dense = rng.integers(0, num_classes, size=(size, size)).astype(np.uint8)

    sparse = dense.copy()
    sparse[rng.uniform(size=(size, size)) < 0.9] = IGNORE
    pseudo = dense.copy()
    pseudo[rng.uniform(size=(size, size)) < 0.3] = IGNORE

    return {
        "image": image,
        "dense": dense,
        "sparse": sparse,
        "pseudo": pseudo,
        "task": _margin_model(rng, num_classes, 1),
        "selector": _margin_model(rng, num_classes, 2),
    }


def _grads_of(params: mdl.ModelParams) -> dict[str, np.ndarray]:
    return {p.name: p.grad.copy() for p in params.parameters()}


def _head_loss_check(params, image, loss_fn, rng, samples):
    def evaluate():
        pred = mdl.forward(params, image)
        report, dlogits = loss_fn(pred.probs[0])
        params.zero_grads()
        mdl.backward(params, pred, [dlogits])
        return report.value, _grads_of(params)

    def loss_only():
        return loss_fn(mdl.forward(params, image).probs[0])[0].value

    return check_gradients(evaluate, params.parameters(), rng, samples, loss_only=loss_only)


def _selector_loss_check(selector, loss_fn, value_fn, rng, samples):
    def evaluate():
        selector.zero_grads()
        report, _ = loss_fn()
        return report.value, _grads_of(selector)

    return check_gradients(
        evaluate, selector.parameters(), rng, samples, loss_only=value_fn
    )


def check_instance(inst: dict, rng: np.random.Generator, samples: int = 50) -> dict[str, float]:
    """Max relative gradient error of each objective on one instance."""
    task, selector = inst["task"], inst["selector"]
    image = inst["image"]
    out = {}

    out["L_s"] = _head_loss_check(
        task, image, lambda p: losses.loss_source(p, inst["dense"]), rng, samples
    )
    out["L_t"] = _head_loss_check(
        task, image, lambda p: losses.loss_target_sparse(p, inst["sparse"]), rng, samples
    )
    out["L_ent"] = _head_loss_check(
        task, image, lambda p: losses.loss_entropy_reg(p, inst["sparse"], weight=1.0), rng, samples
    )
    def self_value():
        pred = mdl.forward(selector, image)
        return sum(masked_cross_entropy(p, inst["pseudo"])[0] for p in pred.probs)

    out["L_self"] = _selector_loss_check(
        selector,
        lambda: losses.loss_self(selector, image, inst["pseudo"]),
        self_value,
        rng,
        samples,
    )
    out["L_dis"] = _selector_loss_check(
        selector,
        lambda: losses.loss_discrepancy(selector, image),
        lambda: losses.discrepancy_value(*mdl.forward(selector, image).probs),
        rng,
        samples,
    )
    return out


def gradient_suite(instances: int = 20, size: int = 16, num_classes: int = 5,
                   samples: int = 50) -> dict[str, float]:
    """Worst relative gradient error per objective over seeded instances."""
    worst = {name: 0.0 for name in LOSS_NAMES}
    for i in range(instances):
        inst = make_instance(1000 + i, size=size, num_classes=num_classes)
        rng = np.random.default_rng(2000 + i)
        for name, err in check_instance(inst, rng, samples).items():
            worst[name] = max(worst[name], err)
    return worst
