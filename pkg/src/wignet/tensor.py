"""N-dimensional tensors with reverse-mode automatic differentiation.

Values are numpy arrays: float64 on certification paths, float32 allowed on
training paths.  Each differentiable operation records a node on an implicit
tape: the output Tensor keeps references to its inputs plus a closure that
pushes the output gradient back to them, and ``backward()`` on a scalar
replays the tape in reverse topological order.  Tensors are read-only once
built; the optimizer swaps whole ``.data`` arrays between steps instead of
writing in place, which keeps graphs and checkpoints reproducible.

Binary elementwise ops require identical shapes; the only implicit broadcast
is scalar*tensor (where the scalar may be a trainable 1-element tensor).
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable

import numpy as np

from .errors import GraphError, ShapeError
from . import conv as _conv

FLOAT_DTYPES = (np.float32, np.float64)

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable tape recording inside the block (evaluation fast path)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _as_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data, dtype=dtype)
    if arr.dtype not in FLOAT_DTYPES:
        arr = arr.astype(np.float64)
    return arr


class Tensor:
    """Immutable n-dimensional real array, optionally recorded on the tape.

    ``requires_grad=True`` marks a leaf parameter; results of operations on
    such tensors carry the tape node needed for ``backward()``.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn", "_op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = _as_array(data, dtype)
        if not np.all(np.isfinite(arr)):
            raise ValueError("tensor rejected: contains NaN or Inf")
        if arr is data:
            arr = arr.view()  # guard immutability without touching caller state
        arr.setflags(write=False)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: Callable[[np.ndarray], None] | None = None
        self._op = "leaf"

    # -- internal constructor for op results (skips the finiteness scan) --
    @classmethod
    def _from_op(cls, data: np.ndarray, parents: tuple["Tensor", ...], backward_fn, op: str) -> "Tensor":
        t = cls.__new__(cls)
        t.data = data
        t.grad = None
        if _grad_enabled and any(p.requires_grad for p in parents):
            t.requires_grad = True
            t._parents = parents
            t._backward_fn = backward_fn
            t._op = op
        else:
            t.requires_grad = False
            t._parents = ()
            t._backward_fn = None
            t._op = op
        return t

    # -- basic introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, op={self._op})"

    # -- autodiff -------------------------------------------------------------
    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        """Reverse-mode pass seeding d(self)/d(self) = 1.

        Only a scalar recorded on the tape may be differentiated; a leaf used
        along k paths receives the sum of its k contributions.
        """
        if self.size != 1:
            raise GraphError(f"backward requires a scalar output, got shape {self.shape}")
        if not self.requires_grad:
            raise GraphError("backward on a value that is not recorded on the tape")

        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward_fn is not None:
                node._backward_fn(node.grad)

    # -- operators -----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def sum(self) -> "Tensor":
        return tsum(self)

    def mean(self) -> "Tensor":
        return tmean(self)

    def reshape(self, *shape) -> "Tensor":
        return reshape(self, *shape)


def _coerce_pair(a, b):
    if not isinstance(a, Tensor):
        a = Tensor(a, dtype=b.dtype if isinstance(b, Tensor) else None)
    if not isinstance(b, Tensor):
        b = Tensor(b, dtype=a.dtype)
    return a, b


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: operand shapes {a.shape} and {b.shape} differ")
    if a.dtype != b.dtype:
        raise ShapeError(f"{op}: operand dtypes {a.dtype} and {b.dtype} differ")


def _is_scalar(t: Tensor) -> bool:
    return t.size == 1


def _scalar_pairing(a: Tensor, b: Tensor, op: str) -> bool:
    """True if this is the permitted scalar*tensor broadcast, else same-shape check."""
    if a.shape == b.shape:
        if a.dtype != b.dtype:
            raise ShapeError(f"{op}: operand dtypes {a.dtype} and {b.dtype} differ")
        return False
    if _is_scalar(a) or _is_scalar(b):
        return True
    raise ShapeError(f"{op}: operand shapes {a.shape} and {b.shape} differ")


# -- elementwise arithmetic ----------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    scalar_mix = _scalar_pairing(a, b, "add")
    out = a.data + b.data

    def backward_fn(g):
        if a.requires_grad:
            a._accumulate(g.sum().reshape(a.shape) if scalar_mix and _is_scalar(a) else g)
        if b.requires_grad:
            b._accumulate(g.sum().reshape(b.shape) if scalar_mix and _is_scalar(b) else g)

    return Tensor._from_op(out, (a, b), backward_fn, "add")


def sub(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    scalar_mix = _scalar_pairing(a, b, "sub")
    out = a.data - b.data

    def backward_fn(g):
        if a.requires_grad:
            a._accumulate(g.sum().reshape(a.shape) if scalar_mix and _is_scalar(a) else g)
        if b.requires_grad:
            b._accumulate((-g).sum().reshape(b.shape) if scalar_mix and _is_scalar(b) else -g)

    return Tensor._from_op(out, (a, b), backward_fn, "sub")


def mul(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    scalar_mix = _scalar_pairing(a, b, "mul")
    out = a.data * b.data

    def backward_fn(g):
        if a.requires_grad:
            ga = g * b.data
            a._accumulate(ga.sum().reshape(a.shape) if scalar_mix and _is_scalar(a) else ga)
        if b.requires_grad:
            gb = g * a.data
            b._accumulate(gb.sum().reshape(b.shape) if scalar_mix and _is_scalar(b) else gb)

    return Tensor._from_op(out, (a, b), backward_fn, "mul")


def neg(a: Tensor) -> Tensor:
    def backward_fn(g):
        if a.requires_grad:
            a._accumulate(-g)

    return Tensor._from_op(-a.data, (a,), backward_fn, "neg")


# -- linear algebra -------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with a fixed, reproducible accumulation order.

    Accepts (M,K)@(K,N) -> (M,N), (M,K)@(K,) -> (M,), (K,)@(K,N) -> (N,).
    """
    if not isinstance(a, Tensor) or not isinstance(b, Tensor):
        raise TypeError("matmul expects Tensor operands")
    if a.ndim not in (1, 2) or b.ndim not in (1, 2):
        raise ShapeError(f"matmul: ranks {a.ndim} and {b.ndim} unsupported (1D/2D only)")
    ka = a.shape[-1]
    kb = b.shape[0]
    if ka != kb:
        raise ShapeError(f"matmul: inner extents disagree for shapes {a.shape} and {b.shape}")
    if a.dtype != b.dtype:
        raise ShapeError(f"matmul: operand dtypes {a.dtype} and {b.dtype} differ")
    out = a.data @ b.data

    def backward_fn(g):
        g2 = np.atleast_2d(g)
        a2 = a.data if a.ndim == 2 else a.data[None, :]
        b2 = b.data if b.ndim == 2 else b.data[:, None]
        if a.ndim == 1 and b.ndim == 2:
            g2 = g[None, :]
        if b.ndim == 1 and a.ndim == 2:
            g2 = g[:, None]
        if a.requires_grad:
            ga = g2 @ b2.T
            a._accumulate(ga.reshape(a.shape))
        if b.requires_grad:
            gb = a2.T @ g2
            b._accumulate(gb.reshape(b.shape))

    return Tensor._from_op(out, (a, b), backward_fn, "matmul")


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError(f"transpose requires a matrix, got shape {a.shape}")

    def backward_fn(g):
        if a.requires_grad:
            a._accumulate(g.T)

    return Tensor._from_op(a.data.T, (a,), backward_fn, "transpose")


def add_rowvec(x: Tensor, b: Tensor) -> Tensor:
    """Add a length-N vector to every row of (..., N); the dense-layer bias."""
    if b.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise ShapeError(f"add_rowvec: cannot add vector {b.shape} to rows of {x.shape}")
    out = x.data + b.data

    def backward_fn(g):
        if x.requires_grad:
            x._accumulate(g)
        if b.requires_grad:
            axes = tuple(range(g.ndim - 1))
            b._accumulate(g.sum(axis=axes) if axes else g)

    return Tensor._from_op(out, (x, b), backward_fn, "add_rowvec")


# -- shape ops -------------------------------------------------------------------

def reshape(a: Tensor, *shape) -> Tensor:
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    out = a.data.reshape(shape)

    def backward_fn(g):
        if a.requires_grad:
            a._accumulate(g.reshape(a.shape))

    return Tensor._from_op(out, (a,), backward_fn, "reshape")


# -- reductions -------------------------------------------------------------------

def tsum(a: Tensor) -> Tensor:
    out = np.asarray(a.data.sum())

    def backward_fn(g):
        if a.requires_grad:
            a._accumulate(np.full(a.shape, g.reshape(()), dtype=a.dtype) if a.ndim else g.reshape(()))

    return Tensor._from_op(out, (a,), backward_fn, "sum")


def tmean(a: Tensor) -> Tensor:
    n = a.size
    out = np.asarray(a.data.sum() / n)

    def backward_fn(g):
        if a.requires_grad:
            a._accumulate(np.full(a.shape, g.reshape(()) / n, dtype=a.dtype))

    return Tensor._from_op(out, (a,), backward_fn, "mean")


# -- nonlinearities ----------------------------------------------------------------

def sigmoid_array(z: np.ndarray) -> np.ndarray:
    """Numerically stable logistic: never exponentiates a positive argument."""
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a: Tensor) -> Tensor:
    s = sigmoid_array(a.data)

    def backward_fn(g):
        if a.requires_grad:
            a._accumulate(g * (s * (1.0 - s)))

    return Tensor._from_op(s, (a,), backward_fn, "sigmoid")


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0)

    def backward_fn(g):
        if a.requires_grad:
            a._accumulate(g * (a.data > 0))

    return Tensor._from_op(out, (a,), backward_fn, "relu")


def leaky_relu(a: Tensor, alpha: float = 0.01) -> Tensor:
    out = np.where(a.data > 0, a.data, alpha * a.data)

    def backward_fn(g):
        if a.requires_grad:
            a._accumulate(g * np.where(a.data > 0, 1.0, alpha).astype(a.dtype))

    return Tensor._from_op(out, (a,), backward_fn, "leaky_relu")


def elu(a: Tensor, alpha: float = 1.0) -> Tensor:
    em1 = np.expm1(np.minimum(a.data, 0))
    out = np.where(a.data > 0, a.data, alpha * em1)

    def backward_fn(g):
        if a.requires_grad:
            a._accumulate(g * np.where(a.data > 0, 1.0, alpha * (em1 + 1.0)).astype(a.dtype))

    return Tensor._from_op(out, (a,), backward_fn, "elu")


SELU_LAMBDA = 1.0507009873554804934193349852946
SELU_ALPHA = 1.6732632423543772848170429916717


def selu(a: Tensor) -> Tensor:
    em1 = np.expm1(np.minimum(a.data, 0))
    out = SELU_LAMBDA * np.where(a.data > 0, a.data, SELU_ALPHA * em1)

    def backward_fn(g):
        if a.requires_grad:
            d = SELU_LAMBDA * np.where(a.data > 0, 1.0, SELU_ALPHA * (em1 + 1.0))
            a._accumulate(g * d.astype(a.dtype))

    return Tensor._from_op(out.astype(a.dtype, copy=False), (a,), backward_fn, "selu")


def softplus(a: Tensor) -> Tensor:
    # ln(1+e^x) = max(x,0) + log1p(e^{-|x|}); safe for large |x|
    out = np.maximum(a.data, 0) + np.log1p(np.exp(-np.abs(a.data)))
    s = sigmoid_array(a.data)

    def backward_fn(g):
        if a.requires_grad:
            a._accumulate(g * s)

    return Tensor._from_op(out, (a,), backward_fn, "softplus")


def prelu(a: Tensor, alpha: Tensor, channel_axis: int) -> Tensor:
    """max(x,0) + alpha*min(x,0) with one alpha per channel along channel_axis."""
    if alpha.ndim != 1 or a.shape[channel_axis] != alpha.shape[0]:
        raise ShapeError(
            f"prelu: alpha {alpha.shape} does not match axis {channel_axis} of {a.shape}"
        )
    bshape = [1] * a.ndim
    bshape[channel_axis] = alpha.shape[0]
    al = alpha.data.reshape(bshape)
    neg_part = np.minimum(a.data, 0)
    out = np.maximum(a.data, 0) + al * neg_part

    def backward_fn(g):
        if a.requires_grad:
            a._accumulate(g * np.where(a.data > 0, 1.0, al).astype(a.dtype))
        if alpha.requires_grad:
            axes = tuple(i for i in range(a.ndim) if i != channel_axis)
            alpha._accumulate((g * neg_part).sum(axis=axes))

    return Tensor._from_op(out, (a, alpha), backward_fn, "prelu")


# -- convolution --------------------------------------------------------------------

def conv2d(x: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1,
           dilation: int = 1, padding: str = "same") -> Tensor:
    """2-D cross-correlation over (C,H,W) or batched (B,C,H,W) input.

    kernel is (C_out, C_in, kH, kW), bias is (C_out,).  SAME padding zero-fills
    so the spatial output is ceil(extent/stride), with any odd pad row/column
    placed at the bottom/right; VALID requires the dilated kernel to fit.
    """
    single = x.ndim == 3
    xd = x.data[None] if single else x.data
    if xd.ndim != 4:
        raise ShapeError(f"conv2d: input must be (C,H,W) or (B,C,H,W), got {x.shape}")
    out, ctx = _conv.forward(xd, kernel.data, bias.data, stride, dilation, padding)
    if single:
        out = out[0]

    def backward_fn(g):
        g4 = g[None] if single else g
        gx, gk, gb = _conv.backward(g4, kernel.data, ctx, need_gx=x.requires_grad)
        if x.requires_grad:
            x._accumulate(gx[0] if single else gx)
        if kernel.requires_grad:
            kernel._accumulate(gk)
        if bias.requires_grad:
            bias._accumulate(gb)

    return Tensor._from_op(out, (x, kernel, bias), backward_fn, "conv2d")


# -- plumbing used by layers ----------------------------------------------------------

def constant(data, dtype=None) -> Tensor:
    """Untracked tensor (dropout masks, targets, inputs)."""
    return Tensor(data, requires_grad=False, dtype=dtype)


def parameter(data, dtype=None) -> Tensor:
    """Trainable leaf tensor."""
    return Tensor(data, requires_grad=True, dtype=dtype)


def collect_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: contains NaN or Inf")
