"""Parameter initialization.

Ordinary weights draw from a zero-mean Gaussian with He-style std
sqrt(2/fan_in).  Gate parameters start as a scaled identity (dense) or a
scaled channel-wise delta kernel (convolutional), with zero gate bias, so a
fresh gate reproduces the sigmoid-weighted linear unit at scale 1 and an
approximate ReLU at large scale, the transfer-learning setting.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .tensor import parameter


@dataclass(frozen=True)
class InitPolicy:
    """How a network's parameters are initialized.

    mode "scratch" pins gate_scale to 1 (gates start as SiL); "transfer"
    requires gate_scale >= 1 so gates start ReLU-like and a pre-trained
    ReLU network's behaviour is approximately preserved.
    """

    mode: str = "scratch"
    gate_scale: float = 1.0

    def __post_init__(self):
        if self.mode not in ("scratch", "transfer"):
            raise ValueError(f"init mode must be scratch|transfer, got {self.mode!r}")
        if not math.isfinite(self.gate_scale) or self.gate_scale <= 0:
            raise ValueError(f"gate_scale must be finite and > 0, got {self.gate_scale}")
        if self.mode == "scratch" and self.gate_scale != 1.0:
            raise ValueError("scratch mode requires gate_scale = 1")
        if self.mode == "transfer" and self.gate_scale < 1.0:
            raise ValueError("transfer mode requires gate_scale >= 1")


def he_std(fan_in: int) -> float:
    return math.sqrt(2.0 / fan_in)


def init_weights(shape, fan_in: int, rng: np.random.Generator, dtype=np.float32) -> np.ndarray:
    """i.i.d. Gaussian, mean 0, std sqrt(2/fan_in); deterministic given rng state."""
    if fan_in < 1:
        raise ValueError(f"fan_in must be >= 1, got {fan_in}")
    return rng.normal(0.0, he_std(fan_in), size=shape).astype(dtype)


def gate_identity(n: int, scale: float, dtype=np.float32):
    """Dense gate start: weight = scale * I, bias = 0."""
    w = (scale * np.eye(n)).astype(dtype)
    b = np.zeros(n, dtype=dtype)
    return w, b


def gate_delta_kernel(channels: int, ksize: int, scale: float, dtype=np.float32):
    """Convolutional analogue of the scaled identity: the centre tap of each
    channel's own-channel slice is `scale`, everything else 0."""
    if ksize % 2 != 1 or ksize < 1:
        raise ValueError(f"gate kernel size must be odd and positive, got {ksize}")
    k = np.zeros((channels, channels, ksize, ksize), dtype=dtype)
    c = ksize // 2
    for ch in range(channels):
        k[ch, ch, c, c] = scale
    b = np.zeros(channels, dtype=dtype)
    return k, b


def init_gate(params, scale: float):
    """Return a copy of dense or conv gate params re-initialized at `scale`."""
    if not math.isfinite(scale) or scale <= 0:
        raise ValueError(f"gate scale must be finite and > 0, got {scale}")
    if hasattr(params, "gate_weight"):
        n = params.gate_weight.shape[0]
        dtype = params.gate_weight.dtype
        w, b = gate_identity(n, scale, dtype)
        return dataclasses.replace(
            params, gate_weight=parameter(w), gate_bias=parameter(b)
        )
    if hasattr(params, "gate_kernel"):
        channels = params.gate_kernel.shape[0]
        ksize = params.gate_kernel.shape[2]
        dtype = params.gate_kernel.dtype
        k, b = gate_delta_kernel(channels, ksize, scale, dtype)
        return dataclasses.replace(
            params, gate_kernel=parameter(k), gate_bias=parameter(b)
        )
    raise TypeError(f"not a gate parameter bundle: {type(params).__name__}")
