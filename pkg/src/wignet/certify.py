"""Numerical certification: finite differences, gradient checks, and the
special-case/equivalence battery.

The gradient oracle is the central difference (f(x+h e_i) - f(x-h e_i)) / 2h
evaluated in 64-bit; tape gradients and the closed-form gate Jacobian are
certified against it.  Errors are reported as the normalized infinity norm
|a-b|_inf / max(1, |a|_inf, |b|_inf), which stays meaningful for the
near-zero coordinates a plain ratio would blow up on.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .activations import (
    WiGConvParams,
    WiGDenseParams,
    fuse_reparameterize,
    scalar_wig,
    wig_dense_forward,
    wig_dense_jacobian,
    wig_conv_forward,
)
from .init import gate_identity
from .layers import build_network, reference_denoiser
from .tensor import Tensor

DEFAULT_H = 1e-5
GRAD_TOL = 1e-6


def finite_diff_grad(f, x, h: float = DEFAULT_H) -> np.ndarray:
    """Central-difference gradient of a scalar-valued f at x, coordinate by
    coordinate, in 64-bit."""
    if h <= 0:
        raise ValueError(f"step h must be > 0, got {h}")
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        xp = flat.copy()
        xm = flat.copy()
        xp[i] += h
        xm[i] -= h
        fp = float(f(xp.reshape(x.shape)))
        fm = float(f(xm.reshape(x.shape)))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ValueError(f"finite_diff_grad: non-finite f at coordinate {i}")
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def grad_rel_error(a: np.ndarray, b: np.ndarray) -> float:
    """Normalized infinity-norm disagreement between two gradients."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(1.0, float(np.abs(a).max(initial=0.0)), float(np.abs(b).max(initial=0.0)))
    return float(np.abs(a - b).max(initial=0.0)) / scale


def _fd_at_coords(fval, leaf: Tensor, coords, h: float) -> np.ndarray:
    """Central differences of fval() w.r.t. selected flat coordinates of leaf.data."""
    base = leaf.data
    out = np.zeros(len(coords), dtype=np.float64)
    for j, i in enumerate(coords):
        for sign, slot in ((+1, 0), (-1, 1)):
            arr = base.copy().reshape(-1)
            arr[i] += sign * h
            leaf.data = arr.reshape(base.shape)
            v = float(fval())
            if not np.isfinite(v):
                leaf.data = base
                raise ValueError("finite difference hit a non-finite objective")
            if slot == 0:
                fp = v
            else:
                fm = v
        out[j] = (fp - fm) / (2.0 * h)
    leaf.data = base
    return out


def certify_leaves(build_loss, leaves, h: float = DEFAULT_H,
                   max_coords: int | None = None, rng=None) -> dict:
    """Compare tape gradients of build_loss() against central differences for
    every named leaf; large leaves are checked on a seeded coordinate sample.

    Returns {leaf_name: normalized error}.
    """
    for _, leaf in leaves:
        leaf.grad = None
    loss = build_loss()
    loss.backward()
    tape_grads = {name: (leaf.grad.copy() if leaf.grad is not None
                         else np.zeros_like(leaf.data))
                  for name, leaf in leaves}

    def fval():
        with T.no_grad():
            return build_loss().item()

    errors = {}
    for name, leaf in leaves:
        n = leaf.data.size
        if max_coords is not None and n > max_coords:
            if rng is None:
                rng = np.random.default_rng(0)
            coords = rng.choice(n, size=max_coords, replace=False)
        else:
            coords = np.arange(n)
        fd = _fd_at_coords(fval, leaf, coords, h)
        tg = tape_grads[name].reshape(-1)[coords]
        errors[name] = grad_rel_error(tg, fd)
    return errors


# ---------------------------------------------------------------------------
# grad-check targets
# ---------------------------------------------------------------------------

@dataclass
class GradCheckResult:
    target: str
    threshold: float
    errors: list = field(default_factory=list)

    @property
    def max_error(self) -> float:
        return max(self.errors) if self.errors else 0.0

    @property
    def passed(self) -> bool:
        return self.max_error < self.threshold


def _weighted_sum(out: Tensor, weights: np.ndarray) -> Tensor:
    return T.tsum(T.mul(out, T.constant(weights.astype(out.dtype))))


def _check_wig_dense(rng, inject_error: bool) -> float:
    n = 5
    x = T.parameter(rng.uniform(-2, 2, size=n))
    p = WiGDenseParams(
        T.parameter(rng.normal(0, 0.8, size=(n, n))),
        T.parameter(rng.normal(0, 0.5, size=n)),
    )
    r = rng.normal(0, 1, size=n)
    leaves = [("x", x), ("gate_weight", p.gate_weight), ("gate_bias", p.gate_bias)]
    errs = certify_leaves(lambda: _weighted_sum(wig_dense_forward(x, p), r), leaves)
    worst = max(errs.values())

    # closed-form Jacobian against the tape: d(r.f)/dx must equal J^T r
    jac = wig_dense_jacobian(x.data, p)
    x.grad = None
    p.gate_weight.grad = None
    p.gate_bias.grad = None
    loss = _weighted_sum(wig_dense_forward(x, p), r)
    loss.backward()
    worst = max(worst, grad_rel_error(jac.T @ r, x.grad))
    if inject_error:
        worst = max(worst, grad_rel_error(jac.T @ r + 1e-3, x.grad))
    return worst


def _check_wig_conv(rng, inject_error: bool) -> float:
    c, hgt, wid = 2, 5, 5
    x = T.parameter(rng.uniform(-2, 2, size=(c, hgt, wid)))
    p = WiGConvParams(
        T.parameter(rng.normal(0, 0.5, size=(c, c, 3, 3))),
        T.parameter(rng.normal(0, 0.5, size=c)),
    )
    r = rng.normal(0, 1, size=(c, hgt, wid))
    leaves = [("x", x), ("gate_kernel", p.gate_kernel), ("gate_bias", p.gate_bias)]
    errs = certify_leaves(lambda: _weighted_sum(wig_conv_forward(x, p), r), leaves)
    worst = max(errs.values())
    if inject_error:
        worst = max(worst, 1.0)
    return worst


def _check_network(rng, inject_error: bool) -> float:
    spec = reference_denoiser("desk")
    spec = type(spec)(spec.layers, (1, 10, 10), spec.loss, "f64")
    net = build_network(spec, seed=int(rng.integers(0, 2**31)))
    x = T.parameter(rng.uniform(-1, 1, size=(1, 10, 10)))
    r = rng.normal(0, 1, size=(1, 10, 10))
    leaves = [("input", x)] + net.params()
    errs = certify_leaves(
        lambda: _weighted_sum(net.forward(x, train=False), r),
        leaves, max_coords=6, rng=rng,
    )
    worst = max(errs.values())
    if inject_error:
        worst = max(worst, 1.0)
    return worst


_TARGETS = {
    "wig-dense": _check_wig_dense,
    "wig-conv": _check_wig_conv,
    "network": _check_network,
}


def run_gradcheck(target: str, seed: int = 0, instances: int = 20,
                  threshold: float = GRAD_TOL, inject_error: bool = False) -> GradCheckResult:
    """Certify one target's gradients on `instances` seeded random instances."""
    try:
        check = _TARGETS[target]
    except KeyError:
        raise ValueError(f"unknown grad-check target {target!r}; "
                         f"known: {', '.join(sorted(_TARGETS))}") from None
    result = GradCheckResult(target=target, threshold=threshold)
    for k in range(instances):
        rng = np.random.Generator(np.random.PCG64(seed * 1000 + k))
        result.errors.append(check(rng, inject_error))
    return result


# ---------------------------------------------------------------------------
# special-case tower and fusion equivalence
# ---------------------------------------------------------------------------

@dataclass
class EquivLine:
    name: str
    value: float
    bound: float

    @property
    def passed(self) -> bool:
        return self.value <= self.bound


def _wig_diag_vector(x: np.ndarray, s: float) -> np.ndarray:
    """Dense gate with weight s*I, zero bias, applied to a vector of points."""
    p = WiGDenseParams(
        Tensor(gate_identity(x.size, s, np.float64)[0]),
        Tensor(np.zeros(x.size)),
    )
    return wig_dense_forward(Tensor(x), p).data


def swish_reference(x: np.ndarray, beta: float) -> np.ndarray:
    return x * T.sigmoid_array(beta * x)


def relu_limit_sup(s: float, lo: float = -6.0, hi: float = 6.0,
                   samples: int = 24001) -> float:
    """sup over a dense grid of |x*sigmoid(s x) - max(x,0)|."""
    xs = np.linspace(lo, hi, samples)
    wig = xs * T.sigmoid_array(s * xs)
    return float(np.abs(wig - np.maximum(xs, 0.0)).max())


def negative_relu_sup(s: float = 50.0, lo: float = -6.0, hi: float = 6.0,
                      samples: int = 24001) -> float:
    """sup over a grid of |x*sigmoid(-s x) - min(x,0)|."""
    xs = np.linspace(lo, hi, samples)
    wig = xs * T.sigmoid_array(-s * xs)
    return float(np.abs(wig - np.minimum(xs, 0.0)).max())


def fusion_max_rel_error(seed: int = 0, n: int = 8, trials: int = 100) -> float:
    """Composed form (W x then gate) vs fused form ((W x) * sigmoid(V x))."""
    rng = np.random.Generator(np.random.PCG64(seed))
    w = Tensor(rng.normal(0, 1 / np.sqrt(n), size=(n, n)))
    p = WiGDenseParams(
        Tensor(rng.normal(0, 1 / np.sqrt(n), size=(n, n))),
        Tensor(np.zeros(n)),
    )
    _, v = fuse_reparameterize(w, p)
    worst = 0.0
    for _ in range(trials):
        x = Tensor(rng.uniform(-1, 1, size=n))
        wx = T.matmul(w, x)
        composed = wig_dense_forward(wx, p).data
        fused = T.mul(wx, T.sigmoid(T.matmul(v, x))).data
        denom = np.maximum(np.maximum(np.abs(composed), np.abs(fused)), 1e-30)
        worst = max(worst, float((np.abs(composed - fused) / denom).max()))
    return worst


def run_equiv_check(seed: int = 0, points: int = 1000) -> list:
    """The special-case battery: Swish/SiL/linear reductions, the ReLU and
    negative-ReLU large-gain limits, and the fused-form equivalence."""
    rng = np.random.Generator(np.random.PCG64(seed))
    xs = rng.uniform(-6, 6, size=points)
    lines = []

    for s in (0.5, 1.0, 2.0, 10.0):
        diff = float(np.abs(_wig_diag_vector(xs, s) - swish_reference(xs, s)).max())
        lines.append(EquivLine(f"swish(beta={s:g})", diff, 1e-12))

    sil = xs * T.sigmoid_array(xs)
    lines.append(EquivLine("sil(s=1)", float(np.abs(_wig_diag_vector(xs, 1.0) - sil).max()), 1e-12))

    linear = float(np.abs(_wig_diag_vector(xs, 0.0) - 0.5 * xs).max())
    lines.append(EquivLine("linear(s=0)", linear, 0.0))

    for s in (10.0, 50.0, 200.0):
        lines.append(EquivLine(f"relu_limit(s={s:g})", relu_limit_sup(s), 0.2786 / s))

    lines.append(EquivLine("negative_relu(s=-50)", negative_relu_sup(50.0), 0.006))
    lines.append(EquivLine("fusion(fig1=fig2)", fusion_max_rel_error(seed), 1e-12))
    return lines
