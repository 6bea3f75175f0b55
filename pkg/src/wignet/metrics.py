"""Accuracy, cross-entropy, MSE, PSNR and SSIM.

cross_entropy and mse are tape-aware (usable as training losses); accuracy,
psnr and ssim are plain evaluations.  PSNR is capped at 99 dB so reports on
identical images stay finite.  SSIM uses an 8x8 uniform sliding window with
the usual stabilizers C1=(0.01*maxval)^2, C2=(0.03*maxval)^2; this variant is
simple and symmetric, and ssim(a, a) is exactly 1.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .tensor import Tensor

PSNR_CAP_DB = 99.0


def _logits_array(logits) -> np.ndarray:
    return logits.data if isinstance(logits, Tensor) else np.asarray(logits)


def accuracy(logits, labels) -> float:
    """Fraction of rows whose argmax equals the label; argmax ties resolve to
    the lowest class index."""
    arr = _logits_array(logits)
    labels = np.asarray(labels)
    if arr.ndim != 2 or arr.shape[1] < 2:
        raise ShapeError(f"logits must be (B,K) with K >= 2, got {arr.shape}")
    if labels.shape != (arr.shape[0],):
        raise ShapeError(f"labels {labels.shape} do not match logits {arr.shape}")
    if labels.min() < 0 or labels.max() >= arr.shape[1]:
        raise ValueError(f"label out of range [0,{arr.shape[1]}): {labels.max()}")
    return float(np.mean(np.argmax(arr, axis=1) == labels))


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean softmax cross-entropy over the batch, stabilized by row-max
    subtraction; differentiable in the logits."""
    labels = np.asarray(labels)
    d = logits.data
    if d.ndim != 2 or d.shape[1] < 2:
        raise ShapeError(f"logits must be (B,K) with K >= 2, got {logits.shape}")
    B, K = d.shape
    if labels.shape != (B,):
        raise ShapeError(f"labels {labels.shape} do not match logits {logits.shape}")
    if labels.min() < 0 or labels.max() >= K:
        raise ValueError(f"label out of range [0,{K}): {labels.max()}")
    z = d - d.max(axis=1, keepdims=True)
    ez = np.exp(z)
    sez = ez.sum(axis=1, keepdims=True)
    softmax = ez / sez
    nll = np.log(sez[:, 0]) - z[np.arange(B), labels]
    out = np.asarray(nll.sum() / B, dtype=d.dtype)

    def backward_fn(g):
        if logits.requires_grad:
            gl = softmax.copy()
            gl[np.arange(B), labels] -= 1.0
            logits._accumulate((g.reshape(()) / B) * gl.astype(d.dtype))

    return Tensor._from_op(out, (logits,), backward_fn, "cross_entropy")


def mse(pred: Tensor, target) -> Tensor:
    """Mean squared error, differentiable in `pred`."""
    if not isinstance(target, Tensor):
        target = T.constant(np.asarray(target, dtype=pred.dtype))
    diff = T.sub(pred, target)
    return T.tmean(T.mul(diff, diff))


def psnr(ref, test, maxval: float = 1.0) -> float:
    """10*log10(maxval^2 / MSE) in dB, capped at 99 (identical inputs)."""
    a = np.asarray(ref, dtype=np.float64)
    b = np.asarray(test, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"psnr: shapes {a.shape} and {b.shape} differ")
    m = float(np.mean((a - b) ** 2))
    if m == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * np.log10(maxval * maxval / m), PSNR_CAP_DB)


def _box_mean(img: np.ndarray, w: int) -> np.ndarray:
    """Mean over every w*w window (valid positions), via an integral image."""
    H, W = img.shape
    ii = np.zeros((H + 1, W + 1), dtype=np.float64)
    ii[1:, 1:] = img.cumsum(axis=0).cumsum(axis=1)
    s = ii[w:, w:] - ii[:-w, w:] - ii[w:, :-w] + ii[:-w, :-w]
    return s / (w * w)


def _as_gray(img) -> np.ndarray:
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 3 and a.shape[0] == 1:
        a = a[0]
    if a.ndim != 2:
        raise ShapeError(f"ssim expects a grayscale image, got shape {np.asarray(img).shape}")
    return a


def ssim(ref, test, maxval: float = 1.0, window: int = 8) -> float:
    """Single-scale SSIM with a uniform window, mean over all windows."""
    x = _as_gray(ref)
    y = _as_gray(test)
    if x.shape != y.shape:
        raise ShapeError(f"ssim: shapes {x.shape} and {y.shape} differ")
    if min(x.shape) < window:
        raise ShapeError(f"ssim: image {x.shape} smaller than {window}x{window} window")
    c1 = (0.01 * maxval) ** 2
    c2 = (0.03 * maxval) ** 2
    mx = _box_mean(x, window)
    my = _box_mean(y, window)
    sxx = _box_mean(x * x, window) - mx * mx
    syy = _box_mean(y * y, window) - my * my
    sxy = _box_mean(x * y, window) - mx * my
    num = (2.0 * mx * my + c1) * (2.0 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    smap = num / den
    return float(smap.sum() / smap.size)
