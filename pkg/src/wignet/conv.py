"""2-D cross-correlation kernels shared by the conv2d tape op.

Geometry follows the usual deep-learning convention:

    H_out = floor((H_pad - dilation*(kH-1) - 1) / stride) + 1

SAME padding zero-fills so that H_out = ceil(H / stride); when the total pad
is odd the extra row/column goes to the bottom/right.

The implementation lowers each convolution to one matrix product over an
explicit patch matrix (im2col held channel-first, taps gathered as strided
slices), which keeps every accumulation inside a single BLAS call per pass:
deterministic run to run on a fixed machine, and fast enough to train the
desk-scale networks on a laptop core.  The patch matrix is retained for the
backward pass; 1x1 kernels skip it entirely.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError


def _same_pad(extent: int, k_eff: int, stride: int) -> tuple[int, int, int]:
    out = math.ceil(extent / stride)
    total = max((out - 1) * stride + k_eff - extent, 0)
    lead = total // 2
    return lead, total - lead, out


def _valid_out(extent: int, k_eff: int, stride: int) -> int:
    return (extent - k_eff) // stride + 1


def resolve_geometry(xshape, kshape, stride: int, dilation: int, padding: str):
    """Pad amounts and output extents; raises ShapeError on misfit."""
    if stride < 1 or dilation < 1:
        raise ShapeError(f"conv2d: stride/dilation must be >= 1, got {stride}/{dilation}")
    B, C_in, H, W = xshape
    C_out, C_k, kH, kW = kshape
    if C_k != C_in:
        raise ShapeError(f"conv2d: kernel input channels {C_k} != input channels {C_in}")
    keH = dilation * (kH - 1) + 1
    keW = dilation * (kW - 1) + 1
    pad = padding.lower()
    if pad == "same":
        pt, pb, H_out = _same_pad(H, keH, stride)
        pl, pr, W_out = _same_pad(W, keW, stride)
    elif pad == "valid":
        pt = pb = pl = pr = 0
        if keH > H or keW > W:
            raise ShapeError(
                f"conv2d: dilated kernel {keH}x{keW} larger than input {H}x{W}"
            )
        H_out = _valid_out(H, keH, stride)
        W_out = _valid_out(W, keW, stride)
    else:
        raise ShapeError(f"conv2d: unknown padding {padding!r} (same|valid)")
    if keH > H + pt + pb or keW > W + pl + pr:
        raise ShapeError(
            f"conv2d: dilated kernel {keH}x{keW} larger than padded input "
            f"{H + pt + pb}x{W + pl + pr}"
        )
    return (pt, pb, pl, pr, H_out, W_out)


def output_shape(xshape, kshape, stride: int, dilation: int, padding: str):
    _, _, _, _, H_out, W_out = resolve_geometry(xshape, kshape, stride, dilation, padding)
    return (xshape[0], kshape[0], H_out, W_out)


@dataclass
class ConvCtx:
    """Forward-pass state retained for the backward pass."""

    col: np.ndarray          # (C_in*kH*kW, B*H_out*W_out), channel-major rows
    kshape: tuple
    xshape: tuple            # original input (B,C_in,H,W)
    padded_shape: tuple      # (C_in,B,Hp,Wp) of the transposed padded input
    stride: int
    dilation: int
    pads: tuple              # (pt, pl)
    out_hw: tuple


def _tap_slices(ky: int, kx: int, stride: int, dilation: int, out_hw):
    H_out, W_out = out_hw
    y0 = ky * dilation
    x0 = kx * dilation
    return (
        slice(y0, y0 + (H_out - 1) * stride + 1, stride),
        slice(x0, x0 + (W_out - 1) * stride + 1, stride),
    )


def forward(x: np.ndarray, k: np.ndarray, b: np.ndarray, stride: int,
            dilation: int, padding: str):
    """x: (B,C_in,H,W); k: (C_out,C_in,kH,kW); b: (C_out,).

    Returns (out, ctx) with out (B,C_out,H_out,W_out).
    """
    if k.ndim != 4:
        raise ShapeError(f"conv2d: kernel must be (C_out,C_in,kH,kW), got {k.shape}")
    if b.ndim != 1 or b.shape[0] != k.shape[0]:
        raise ShapeError(f"conv2d: bias {b.shape} must be ({k.shape[0]},)")
    if k.dtype != x.dtype or b.dtype != x.dtype:
        raise ShapeError(
            f"conv2d: mixed dtypes (input {x.dtype}, kernel {k.dtype}, bias {b.dtype})"
        )
    pt, pb, pl, pr, H_out, W_out = resolve_geometry(x.shape, k.shape, stride, dilation, padding)
    B, C_in, H, W = x.shape
    C_out, _, kH, kW = k.shape
    if pt or pb or pl or pr:
        xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    else:
        xp = x
    # channel-first copy: tap gathers and the backward scatter run at memcpy
    # speed, and the contraction is a single gemm
    xpt = np.ascontiguousarray(xp.transpose(1, 0, 2, 3))
    n = B * H_out * W_out
    if kH == 1 and kW == 1 and stride == 1:
        col = xpt.reshape(C_in, n)
    else:
        col6 = np.empty((C_in, kH, kW, B, H_out, W_out), dtype=x.dtype)
        for ky in range(kH):
            for kx in range(kW):
                sy, sx = _tap_slices(ky, kx, stride, dilation, (H_out, W_out))
                col6[:, ky, kx] = xpt[:, :, sy, sx]
        col = col6.reshape(C_in * kH * kW, n)
    out_t = np.matmul(col.T, k.reshape(C_out, -1).T)      # (B*n, C_out)
    out = np.ascontiguousarray(
        out_t.reshape(B, H_out, W_out, C_out).transpose(0, 3, 1, 2)
    )
    out += b[None, :, None, None]
    ctx = ConvCtx(col, k.shape, x.shape, xpt.shape, stride, dilation,
                  (pt, pl), (H_out, W_out))
    return out, ctx


def backward(gout: np.ndarray, k: np.ndarray, ctx: ConvCtx, need_gx: bool = True):
    """Gradients of forward() w.r.t. input, kernel and bias."""
    C_out, C_in, kH, kW = ctx.kshape
    B, _, H, W = ctx.xshape
    H_out, W_out = ctx.out_hw
    pt, pl = ctx.pads
    g2 = np.ascontiguousarray(gout.transpose(1, 0, 2, 3)).reshape(C_out, -1)
    gb = g2.sum(axis=1)
    gk = np.matmul(g2, ctx.col.T).reshape(ctx.kshape)
    gx = None
    if need_gx:
        kmat = k.reshape(C_out, -1)
        if kH == 1 and kW == 1 and ctx.stride == 1 and ctx.padded_shape[2:] == (H, W):
            gxt = np.matmul(kmat.T, g2).reshape(C_in, B, H, W)
            gx = np.ascontiguousarray(gxt.transpose(1, 0, 2, 3))
        else:
            dcol = np.matmul(kmat.T, g2).reshape(C_in, kH, kW, B, H_out, W_out)
            gxpt = np.zeros(ctx.padded_shape, dtype=gout.dtype)
            for ky in range(kH):
                for kx in range(kW):
                    sy, sx = _tap_slices(ky, kx, ctx.stride, ctx.dilation, ctx.out_hw)
                    gxpt[:, :, sy, sx] += dcol[:, ky, kx]
            gx = np.ascontiguousarray(
                gxpt[:, :, pt:pt + H, pl:pl + W].transpose(1, 0, 2, 3)
            )
    return gx, gk, gb
