"""Dense array kernels and gradient machinery for the fixed small network.

All kernels are pure functions of their inputs and preserve the dtype of the
arrays they are given: training runs on float32 parameters, the gradient
checker promotes everything to float64 and re-runs the identical code path.
Scalar reductions (losses, sums over pixels) always accumulate in float64.
"""
from __future__ import annotations

from collections.abc import Callable, Iterable

import numpy as np

# Unannotated-pixel sentinel; matches the 8-bit label raster format.
IGNORE = 255


class ShapeMismatch(ValueError):
    """Raised when array shapes are incompatible with a kernel's contract."""


class BadLabel(ValueError):
    """Raised when a label map contains a class index outside 0..K-1 / IGNORE."""


def require_finite(name: str, arr: np.ndarray) -> None:
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite values")


def _windows(padded: np.ndarray, k: int) -> np.ndarray:
    """All k*k sliding windows of a padded (C, Hp, Wp) array as a view."""
    c, hp, wp = padded.shape
    h, w = hp - k + 1, wp - k + 1
    s0, s1, s2 = padded.strides
    return np.lib.stride_tricks.as_strided(
        padded, (c, k, k, h, w), (s0, s1, s2, s1, s2), writeable=False
    )


def _im2col(image: np.ndarray, k: int, padding: int) -> np.ndarray:
    """(C, H, W) -> (C*k*k, H*W) column matrix for a same-size convolution."""
    padded = np.pad(image, ((0, 0), (padding, padding), (padding, padding)))
    c = image.shape[0]
    h = image.shape[1]
    w = image.shape[2]
    return np.ascontiguousarray(_windows(padded, k).reshape(c * k * k, h * w))


def conv2d(
    image: np.ndarray,
    kernel: np.ndarray,
    bias: np.ndarray | None = None,
    padding: int | None = None,
) -> np.ndarray:
    """Same-size cross-correlation of (C_in, H, W) with (C_out, C_in, k, k).

    k must be odd and padding (k-1)/2 so the output keeps the input's H, W.
    """
    if image.ndim != 3 or kernel.ndim != 4:
        raise ShapeMismatch(
            f"conv2d expects image (C,H,W) and kernel (Cout,Cin,k,k), "
            f"got {image.shape} and {kernel.shape}"
        )
    c_out, c_in, k, k2 = kernel.shape
    if k != k2 or k % 2 == 0:
        raise ShapeMismatch(f"kernel must be square with odd size, got {k}x{k2}")
    if image.shape[0] != c_in:
        raise ShapeMismatch(
            f"kernel expects {c_in} input channels, image has {image.shape[0]}"
        )
    if padding is None:
        padding = (k - 1) // 2
    if padding != (k - 1) // 2:
        raise ShapeMismatch(f"padding must be (k-1)/2={(k - 1) // 2}, got {padding}")
    if bias is not None and bias.shape != (c_out,):
        raise ShapeMismatch(f"bias must have shape ({c_out},), got {bias.shape}")

    h, w = image.shape[1], image.shape[2]
    cols = _im2col(image, k, padding)
    out = kernel.reshape(c_out, c_in * k * k) @ cols
    if bias is not None:
        out += bias[:, None]
    return out.reshape(c_out, h, w)


def conv2d_backward(
    image: np.ndarray,
    kernel: np.ndarray,
    grad_out: np.ndarray,
    need_dinput: bool = True,
) -> tuple[np.ndarray | None, np.ndarray, np.ndarray]:
    """Gradients of conv2d w.r.t. (image, kernel, bias) given dL/doutput."""
    c_out, c_in, k, _ = kernel.shape
    h, w = image.shape[1], image.shape[2]
    p = (k - 1) // 2
    gflat = grad_out.reshape(c_out, h * w)

    cols = _im2col(image, k, p)
    dkernel = (gflat @ cols.T).reshape(kernel.shape)
    dbias = gflat.sum(axis=1)

    dinput = None
    if need_dinput:
        dcols = kernel.reshape(c_out, c_in * k * k).T @ gflat
        dcols = dcols.reshape(c_in, k, k, h, w)
        dpad = np.zeros((c_in, h + 2 * p, w + 2 * p), dtype=grad_out.dtype)
        for i in range(k):
            for j in range(k):
                dpad[:, i : i + h, j : j + w] += dcols[:, i, j]
        dinput = dpad[:, p : p + h, p : p + w] if p else dpad
    return dinput, dkernel, dbias


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(pre_activation: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    return grad_out * (pre_activation > 0)


def softmax_channels(logits: np.ndarray) -> np.ndarray:
    """Per-pixel softmax over the leading class axis of (K, H, W) logits."""
    require_finite("logits", logits)
    shifted = logits - logits.max(axis=0, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=0, keepdims=True)


def softmax_backward(probs: np.ndarray, grad_probs: np.ndarray) -> np.ndarray:
    """dL/dlogits given dL/dprobs, via the softmax Jacobian per pixel."""
    inner = (grad_probs * probs).sum(axis=0, keepdims=True)
    return probs * (grad_probs - inner)


def entropy_map(probs: np.ndarray) -> np.ndarray:
    """Per-pixel Shannon entropy (natural log) of a (K, H, W) probability map.

    0*log 0 is taken as 0.
    """
    logp = np.zeros_like(probs)
    np.log(probs, out=logp, where=probs > 0)
    return -(probs * logp).sum(axis=0)


def masked_cross_entropy(
    pred: np.ndarray, labels: np.ndarray
) -> tuple[float, np.ndarray, int]:
    """Mean -log p(y) over non-IGNORE pixels, plus the gradient w.r.t. logits.

    Returns (loss, dlogits, pixels_used). With an empty support the loss and
    gradient are exactly zero.
    """
    k = pred.shape[0]
    if labels.shape != pred.shape[1:]:
        raise ShapeMismatch(
            f"labels {labels.shape} do not match prediction field {pred.shape[1:]}"
        )
    sel = labels != IGNORE
    chosen = labels[sel].astype(np.int64)
    if chosen.size and (chosen.min() < 0 or chosen.max() >= k):
        raise BadLabel(f"label outside 0..{k - 1} (and not IGNORE={IGNORE})")

    n = int(sel.sum())
    dlogits = np.zeros_like(pred)
    if n == 0:
        return 0.0, dlogits, 0

    ys, xs = np.nonzero(sel)
    p_true = pred[chosen, ys, xs]
    loss = -np.log(np.clip(p_true, 1e-30, None)).sum(dtype=np.float64) / n

    dlogits[:, sel] = pred[:, sel] / n
    dlogits[chosen, ys, xs] -= 1.0 / np.asarray(n, dtype=pred.dtype)
    return float(loss), dlogits, n


# Relative-error floor for the checker: entries whose analytic and numeric
# gradients are both below this are pure central-difference truncation noise
# at h=1e-3 (error ~ h^2/6 * f''') and carry no information about backprop
# correctness.
GRAD_CHECK_FLOOR = 1e-3


def check_gradients(
    evaluate: Callable[[], tuple[float, dict[str, np.ndarray]]],
    params: Iterable,
    rng: np.random.Generator,
    samples: int = 50,
    step: float = 1e-3,
    loss_only: Callable[[], float] | None = None,
) -> float:
    """Max relative error between analytic gradients and central differences.

    `evaluate` recomputes the loss (and gradients) from the current parameter
    values; `params` is an iterable of objects with `.name` and a mutable
    `.value` array. At least `samples` parameter entries are drawn uniformly
    across all parameters, each perturbed by +-step in place. `loss_only`, if
    given, is a cheaper value-only evaluation used for the difference quotients.
    """
    params = list(params)
    _, grads = evaluate()
    if loss_only is None:
        loss_only = lambda: evaluate()[0]  # noqa: E731
    sizes = np.array([p.value.size for p in params])
    total = int(sizes.sum())
    picks = rng.choice(total, size=min(max(samples, 50), total), replace=False)
    offsets = np.cumsum(sizes)

    worst = 0.0
    for flat in picks:
        pi = int(np.searchsorted(offsets, flat, side="right"))
        idx = int(flat - (offsets[pi - 1] if pi else 0))
        param = params[pi]
        analytic = float(grads[param.name].flat[idx])

        original = param.value.flat[idx]
        param.value.flat[idx] = original + step
        loss_plus = loss_only()
        param.value.flat[idx] = original - step
        loss_minus = loss_only()
        param.value.flat[idx] = original

        numeric = (loss_plus - loss_minus) / (2.0 * step)
        denom = max(abs(analytic), abs(numeric), GRAD_CHECK_FLOOR)
        worst = max(worst, abs(analytic - numeric) / denom)
    return worst
