"""Segmentation network: shared 2-conv backbone plus one or two 1x1 heads.

The task model carries a single head; the selector variant created by
`clone_selector` carries two heads that start as exact copies of the task
head and diverge only through discrepancy maximization.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .numerics import (
    conv2d,
    conv2d_backward,
    relu,
    relu_backward,
    require_finite,
    softmax_channels,
)

HIDDEN_CHANNELS = (16, 32)
CHECKPOINT_MAGIC = "labelloop-checkpoint-v1"


@dataclass
class Param:
    """A named parameter with its gradient and momentum buffer."""

    name: str
    value: np.ndarray
    grad: np.ndarray = field(default=None)  # type: ignore[assignment]
    vel: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        if self.vel is None:
            self.vel = np.zeros_like(self.value)


@dataclass
class Prediction:
    """Per-head probability maps plus everything backward needs."""

    probs: list[np.ndarray]
    features: np.ndarray
    cache: dict


class ModelParams:
    """Parameter container for the fixed architecture.

    Backbone: 3x3 conv (3 -> 16), ReLU, 3x3 conv (16 -> 32), ReLU.
    Heads: one or two 1x1 convs (32 -> K logits).
    """

    def __init__(self, backbone: list[Param], heads: list[list[Param]], num_classes: int):
        self.backbone = backbone
        self.heads = heads
        self.num_classes = num_classes

    @classmethod
    def initialize(cls, num_classes: int, seed: int, num_heads: int = 1) -> "ModelParams":
        rng = np.random.default_rng(seed)
        c1, c2 = HIDDEN_CHANNELS

        def he(shape, fan_in):
            return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(np.float32)

        backbone = [
            Param("backbone.conv1.weight", he((c1, 3, 3, 3), 3 * 9)),
            Param("backbone.conv1.bias", np.zeros(c1, dtype=np.float32)),
            Param("backbone.conv2.weight", he((c2, c1, 3, 3), c1 * 9)),
            Param("backbone.conv2.bias", np.zeros(c2, dtype=np.float32)),
        ]
        heads = []
        for h in range(num_heads):
            heads.append([
                Param(f"heads.{h}.weight", he((num_classes, c2, 1, 1), c2)),
                Param(f"heads.{h}.bias", np.zeros(num_classes, dtype=np.float32)),
            ])
        return cls(backbone, heads, num_classes)

    @property
    def num_heads(self) -> int:
        return len(self.heads)

    def parameters(self) -> list[Param]:
        out = list(self.backbone)
        for head in self.heads:
            out.extend(head)
        return out

    def head_parameters(self) -> list[Param]:
        return [p for head in self.heads for p in head]

    def zero_grads(self) -> None:
        for p in self.parameters():
            p.grad[...] = 0

    def reset_momentum(self) -> None:
        for p in self.parameters():
            p.vel[...] = 0

    def copy(self) -> "ModelParams":
        def dup(p: Param) -> Param:
            return Param(p.name, p.value.copy(), p.grad.copy(), p.vel.copy())

        return ModelParams(
            [dup(p) for p in self.backbone],
            [[dup(p) for p in head] for head in self.heads],
            self.num_classes,
        )

    def astype(self, dtype) -> "ModelParams":
        """Copy with parameter values cast to dtype (for float64 grad checks)."""
        clone = self.copy()
        for p in clone.parameters():
            p.value = p.value.astype(dtype)
            p.grad = np.zeros_like(p.value)
            p.vel = np.zeros_like(p.value)
        return clone


def forward(params: ModelParams, image: np.ndarray) -> Prediction:
    """Run the network; returns one probability map per head."""
    require_finite("image", image)
    image = image.astype(params.backbone[0].value.dtype, copy=False)
    w1, b1, w2, b2 = (p.value for p in params.backbone)

    z1 = conv2d(image, w1, b1)
    a1 = relu(z1)
    z2 = conv2d(a1, w2, b2)
    a2 = relu(z2)
    probs = []
    for head in params.heads:
        logits = conv2d(a2, head[0].value, head[1].value)
        probs.append(softmax_channels(logits))
    return Prediction(
        probs=probs,
        features=a2,
        cache={"image": image, "z1": z1, "a1": a1, "z2": z2},
    )


def backward(params: ModelParams, pred: Prediction, dlogits: list[np.ndarray]) -> None:
    """Accumulate parameter gradients from per-head dL/dlogits."""
    if len(dlogits) != params.num_heads:
        raise ValueError(f"expected {params.num_heads} logit gradients, got {len(dlogits)}")
    cache = pred.cache
    a2 = pred.features

    dfeat = np.zeros_like(a2)
    for head, dl in zip(params.heads, dlogits):
        dx, dw, db = conv2d_backward(a2, head[0].value, dl)
        head[0].grad += dw
        head[1].grad += db
        dfeat += dx

    dz2 = relu_backward(cache["z2"], dfeat)
    da1, dw2, db2 = conv2d_backward(cache["a1"], params.backbone[2].value, dz2)
    params.backbone[2].grad += dw2
    params.backbone[3].grad += db2

    dz1 = relu_backward(cache["z1"], da1)
    _, dw1, db1 = conv2d_backward(cache["image"], params.backbone[0].value, dz1, need_dinput=False)
    params.backbone[0].grad += dw1
    params.backbone[1].grad += db1


def clone_selector(task: ModelParams) -> ModelParams:
    """Duplicate the task model into a two-head selector with fresh optimizer state."""
    if task.num_heads != 1:
        raise ValueError("selector is cloned from a single-head task model")

    def dup(p: Param, name: str) -> Param:
        return Param(name, p.value.copy())

    backbone = [dup(p, p.name) for p in task.backbone]
    head = task.heads[0]
    heads = [
        [dup(head[0], "heads.0.weight"), dup(head[1], "heads.0.bias")],
        [dup(head[0], "heads.1.weight"), dup(head[1], "heads.1.bias")],
    ]
    return ModelParams(backbone, heads, task.num_classes)


def sgd_step(
    params: ModelParams,
    lr: float,
    momentum: float,
    ascent_heads: bool = False,
    include: str = "all",
) -> bool:
    """Momentum-SGD update in place; returns False (no update) on non-finite grads.

    ascent_heads=True moves head parameters along +gradient and leaves the
    backbone untouched (the max half of the discrepancy min-max); include
    restricts a descent step to one parameter group ("all"/"backbone"/"heads").
    """
    if ascent_heads:
        group, sign = params.head_parameters(), +1.0
    elif include == "backbone":
        group, sign = list(params.backbone), -1.0
    elif include == "heads":
        group, sign = params.head_parameters(), -1.0
    elif include == "all":
        group, sign = params.parameters(), -1.0
    else:
        raise ValueError(f"unknown parameter group {include!r}")

    if not all(np.isfinite(p.grad).all() for p in group):
        return False
    for p in group:
        p.vel[...] = momentum * p.vel + p.grad
        p.value += sign * lr * p.vel
    return True


def save_checkpoint(params: ModelParams, path) -> None:
    """Flat binary container: u32 header length, JSON header, little-endian f32 arrays."""
    entries = []
    offset = 0
    blobs = []
    for p in params.parameters():
        data = np.ascontiguousarray(p.value, dtype="<f4")
        entries.append({
            "name": p.name,
            "shape": list(data.shape),
            "offset": offset,
            "nbytes": data.nbytes,
        })
        blobs.append(data.tobytes())
        offset += data.nbytes
    header = json.dumps({
        "format": CHECKPOINT_MAGIC,
        "num_classes": params.num_classes,
        "num_heads": params.num_heads,
        "params": entries,
    }, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        for blob in blobs:
            f.write(blob)


def load_checkpoint(path) -> ModelParams:
    with open(path, "rb") as f:
        (hlen,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(hlen).decode("utf-8"))
        if header.get("format") != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a {CHECKPOINT_MAGIC} file")
        payload = f.read()

    by_name = {}
    for entry in header["params"]:
        raw = payload[entry["offset"] : entry["offset"] + entry["nbytes"]]
        arr = np.frombuffer(raw, dtype="<f4").reshape(entry["shape"]).copy()
        by_name[entry["name"]] = Param(entry["name"], arr)

    backbone = [by_name[n] for n in (
        "backbone.conv1.weight", "backbone.conv1.bias",
        "backbone.conv2.weight", "backbone.conv2.bias",
    )]
    heads = []
    for h in range(header["num_heads"]):
        heads.append([by_name[f"heads.{h}.weight"], by_name[f"heads.{h}.bias"]])
    return ModelParams(backbone, heads, header["num_classes"])
