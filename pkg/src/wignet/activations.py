"""Gated and baseline activation units.

The weighted sigmoid gate multiplies its input element-wise by a learned
sigmoid mask: dense form x * sigmoid(Wg x + bg) with a square gate matrix,
convolutional form X * sigmoid(wg * X + Bg) with a channel-preserving SAME
gate convolution.  Scalar special cases recover the linear map x/2 (gain 0),
SiL (gain 1), Swish (gain beta) and, in the large-gain limit, ReLU and
negative-ReLU.

Every activation is exposed as a small layer object with
``forward(x, train, rng)`` / ``params()`` / ``out_shape()`` /
``build(in_shape, policy, rng, dtype)`` so networks can hold them uniformly;
the registry at the bottom maps the lowercase names used in network spec
files and CLI flags to these classes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import init as init_mod
from . import tensor as T
from .errors import ShapeError
from .tensor import Tensor


# ---------------------------------------------------------------------------
# scalar form
# ---------------------------------------------------------------------------

def _sigmoid_scalar(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def scalar_wig(x: float, w: float, b: float) -> float:
    """x * sigmoid(w*x + b), evaluated in 64-bit."""
    return x * _sigmoid_scalar(w * x + b)


def scalar_wig_derivative(x: float, w: float, b: float) -> float:
    """d/dx of scalar_wig: sigma(g) + x*w*sigma(g)*(1-sigma(g)) with g = w*x+b."""
    s = _sigmoid_scalar(w * x + b)
    return s + x * w * s * (1.0 - s)


# ---------------------------------------------------------------------------
# gate parameter bundles
# ---------------------------------------------------------------------------

@dataclass
class WiGDenseParams:
    """Square gate matrix (N,N) and gate bias (N,)."""

    gate_weight: Tensor
    gate_bias: Tensor

    def __post_init__(self):
        w, b = self.gate_weight, self.gate_bias
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ShapeError(f"gate weight must be square, got {w.shape}")
        if b.ndim != 1 or b.shape[0] != w.shape[0]:
            raise ShapeError(f"gate bias {b.shape} does not match gate weight {w.shape}")

    @property
    def n(self) -> int:
        return self.gate_weight.shape[0]


@dataclass
class WiGConvParams:
    """Channel-preserving gate kernel (C,C,k,k) and per-channel bias (C,)."""

    gate_kernel: Tensor
    gate_bias: Tensor

    def __post_init__(self):
        k, b = self.gate_kernel, self.gate_bias
        if k.ndim != 4 or k.shape[0] != k.shape[1]:
            raise ShapeError(f"gate kernel must be (C,C,kH,kW), got {k.shape}")
        if k.shape[2] != k.shape[3] or k.shape[2] % 2 != 1:
            raise ShapeError(f"gate kernel must be square with odd extent, got {k.shape}")
        if b.ndim != 1 or b.shape[0] != k.shape[0]:
            raise ShapeError(f"gate bias {b.shape} does not match gate kernel {k.shape}")

    @property
    def channels(self) -> int:
        return self.gate_kernel.shape[0]


def _dense_gate_pre(x: Tensor, p: WiGDenseParams) -> Tensor:
    """Wg x + bg for a vector, or X Wg^T + bg row-wise for a batch."""
    if x.shape[-1] != p.n or x.ndim not in (1, 2):
        raise ShapeError(f"input {x.shape} does not match gate of width {p.n}")
    if x.ndim == 1:
        return T.add_rowvec(T.matmul(p.gate_weight, x), p.gate_bias)
    return T.add_rowvec(T.matmul(x, T.transpose(p.gate_weight)), p.gate_bias)


def wig_dense_forward(x: Tensor, p: WiGDenseParams) -> Tensor:
    """x * sigmoid(Wg x + bg) for a single vector (N,) or a batch (B,N)."""
    return T.mul(x, T.sigmoid(_dense_gate_pre(x, p)))


def wig_dense_jacobian(x: np.ndarray, p: WiGDenseParams) -> np.ndarray:
    """Closed-form Jacobian d out_i / d x_j for a single input vector.

    J = diag(s) + diag(x * s * (1-s)) @ Wg  with  s = sigmoid(Wg x + bg).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != p.n:
        raise ShapeError(f"jacobian input {x.shape} does not match gate of width {p.n}")
    wg = p.gate_weight.data.astype(np.float64)
    bg = p.gate_bias.data.astype(np.float64)
    s = T.sigmoid_array(wg @ x + bg)
    return np.diag(s) + (x * s * (1.0 - s))[:, None] * wg


def wig_conv_forward(x: Tensor, p: WiGConvParams) -> Tensor:
    """X * sigmoid(wg * X + Bg); gate conv is SAME, stride 1, dilation 1, so
    the mask always matches the feature map shape."""
    channel_axis = 0 if x.ndim == 3 else 1
    if x.ndim not in (3, 4) or x.shape[channel_axis] != p.channels:
        raise ShapeError(f"feature map {x.shape} does not match {p.channels}-channel gate")
    g = T.conv2d(x, p.gate_kernel, p.gate_bias, stride=1, dilation=1, padding="same")
    return T.mul(x, T.sigmoid(g))


def fuse_reparameterize(w: Tensor, p: WiGDenseParams):
    """Fuse a preceding dense weighting W into the gate: returns (W, V) with
    V chosen so that (W x) * sigmoid(V x) equals the gated unit applied to
    W x, for every x.  That forces V = Wg W (the gate matrix composed with
    the weighting it absorbs).  Only the bias-free gate admits this exact
    rewrite, so a nonzero gate bias is rejected rather than approximated.
    """
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ShapeError(f"weighting matrix must be square, got {w.shape}")
    if w.shape[0] != p.n:
        raise ShapeError(f"weighting {w.shape} does not match gate of width {p.n}")
    if np.any(p.gate_bias.data != 0):
        raise ValueError("fusion is exact only for zero gate bias")
    v = Tensor(p.gate_weight.data @ w.data)
    return w, v


# ---------------------------------------------------------------------------
# activation layers
# ---------------------------------------------------------------------------

class _Stateless:
    """Base for parameter-free element-wise activations."""

    name = "?"

    def build(self, in_shape, policy, rng, dtype):
        return in_shape

    def out_shape(self, in_shape):
        return in_shape

    def params(self):
        return []

    def forward(self, x, train=False, rng=None):
        raise NotImplementedError


class ReLU(_Stateless):
    name = "relu"

    def forward(self, x, train=False, rng=None):
        return T.relu(x)


class LeakyReLU(_Stateless):
    name = "leaky_relu"

    def __init__(self, alpha: float = 0.01):
        self.alpha = float(alpha)

    def forward(self, x, train=False, rng=None):
        return T.leaky_relu(x, self.alpha)


class ELU(_Stateless):
    name = "elu"

    def __init__(self, alpha: float = 1.0):
        self.alpha = float(alpha)

    def forward(self, x, train=False, rng=None):
        return T.elu(x, self.alpha)


class SELU(_Stateless):
    name = "selu"

    def forward(self, x, train=False, rng=None):
        return T.selu(x)


class Softplus(_Stateless):
    name = "softplus"

    def forward(self, x, train=False, rng=None):
        return T.softplus(x)


class SiL(_Stateless):
    """x * sigmoid(x); the unit-gain, zero-bias gate."""

    name = "sil"

    def forward(self, x, train=False, rng=None):
        return T.mul(x, T.sigmoid(x))


class Swish:
    """x * sigmoid(beta x) with trainable scalar beta (default start 1)."""

    name = "swish"

    def __init__(self, beta: float = 1.0):
        self.beta_init = float(beta)
        self.beta: Tensor | None = None

    def build(self, in_shape, policy, rng, dtype):
        self.beta = T.parameter(np.full((1,), self.beta_init, dtype=dtype))
        return in_shape

    def out_shape(self, in_shape):
        return in_shape

    def params(self):
        return [("beta", self.beta)] if self.beta is not None else []

    def forward(self, x, train=False, rng=None):
        if self.beta is None:
            self.build(x.shape, None, None, x.dtype)
        return T.mul(x, T.sigmoid(T.mul(self.beta, x)))


class PReLU:
    """Leaky rectifier with one trainable slope per channel (start 0.25)."""

    name = "prelu"

    def __init__(self, alpha: float = 0.25):
        self.alpha_init = float(alpha)
        self.alpha: Tensor | None = None
        self._unbatched_ndim = None

    def build(self, in_shape, policy, rng, dtype):
        channels = in_shape[0]
        self._unbatched_ndim = len(in_shape)
        self.alpha = T.parameter(np.full((channels,), self.alpha_init, dtype=dtype))
        return in_shape

    def out_shape(self, in_shape):
        return in_shape

    def params(self):
        return [("alpha", self.alpha)] if self.alpha is not None else []

    def forward(self, x, train=False, rng=None):
        if self.alpha is None:
            self.build(x.shape if x.ndim in (1, 3) else x.shape[1:], None, None, x.dtype)
        axis = 0 if x.ndim == self._unbatched_ndim else 1
        return T.prelu(x, self.alpha, channel_axis=axis)


class WiG:
    """The weighted sigmoid gate as a drop-in activation layer.

    Adapts to its input at build time: a dense (N,N) gate for vector
    features, a (C,C,k,k) SAME-convolution gate for feature maps.  The gate
    mask from the most recent forward is kept on ``last_gate`` so training
    can apply the L1 sparseness constraint.
    """

    name = "wig"

    def __init__(self, kernel: int = 3, scale: float | None = None):
        self.kernel = int(kernel)
        self.scale_override = None if scale is None else float(scale)
        self.p: WiGDenseParams | WiGConvParams | None = None
        self.last_gate: Tensor | None = None

    def build(self, in_shape, policy, rng, dtype):
        scale = self.scale_override
        if scale is None:
            scale = policy.gate_scale if policy is not None else 1.0
        if len(in_shape) == 1:
            w, b = init_mod.gate_identity(in_shape[0], scale, dtype)
            self.p = WiGDenseParams(T.parameter(w), T.parameter(b))
        elif len(in_shape) == 3:
            k, b = init_mod.gate_delta_kernel(in_shape[0], self.kernel, scale, dtype)
            self.p = WiGConvParams(T.parameter(k), T.parameter(b))
        else:
            raise ShapeError(f"gate cannot be built for feature shape {in_shape}")
        return in_shape

    def out_shape(self, in_shape):
        return in_shape

    def params(self):
        if self.p is None:
            return []
        if isinstance(self.p, WiGDenseParams):
            return [("gate_weight", self.p.gate_weight), ("gate_bias", self.p.gate_bias)]
        return [("gate_weight", self.p.gate_kernel), ("gate_bias", self.p.gate_bias)]

    def forward(self, x, train=False, rng=None):
        if self.p is None:
            shape = x.shape if x.ndim in (1, 3) else x.shape[1:]
            self.build(shape, None, np.random.default_rng(0), x.dtype)
        if isinstance(self.p, WiGDenseParams):
            gate = T.sigmoid(_dense_gate_pre(x, self.p))
        else:
            g = T.conv2d(x, self.p.gate_kernel, self.p.gate_bias,
                         stride=1, dilation=1, padding="same")
            gate = T.sigmoid(g)
        self.last_gate = gate
        return T.mul(x, gate)


ACTIVATIONS = {
    "relu": ReLU,
    "leaky_relu": LeakyReLU,
    "elu": ELU,
    "selu": SELU,
    "softplus": Softplus,
    "sil": SiL,
    "prelu": PReLU,
    "swish": Swish,
    "wig": WiG,
}


def make_activation(name: str, **kwargs):
    """Instantiate an activation layer from its registry name."""
    try:
        cls = ACTIVATIONS[name.lower()]
    except KeyError:
        raise KeyError(
            f"unknown activation {name!r}; known: {', '.join(sorted(ACTIVATIONS))}"
        ) from None
    return cls(**kwargs)


def baseline_forward(kind: str, x: Tensor, **kwargs) -> Tensor:
    """One-shot element-wise application of a registry activation."""
    return make_activation(kind, **kwargs).forward(x)
