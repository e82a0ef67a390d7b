"""Convolution, pooling and normalisation kernels with hand-written backward rules.

Convolutions are cross-correlations (no kernel flip). Windows are gathered
with ``sliding_window_view`` and contracted with ``tensordot`` so the heavy
lifting lands in BLAS.
"""

from __future__ import annotations

from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, GeometryError
from .tensor import Tensor, _check_same_dtype, add_bias, record


def _out_len(n: int, k: int, stride: int, padding: int) -> int:
    if stride < 1:
        raise GeometryError(f"stride must be >= 1, got {stride}")
    if padding < 0:
        raise GeometryError(f"padding must be >= 0, got {padding}")
    if n + 2 * padding < k:
        raise GeometryError(f"window {k} does not fit extent {n} with padding {padding}")
    return (n + 2 * padding - k) // stride + 1


def conv1d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """1D cross-correlation of ``x[B, C_in, L]`` with ``weight[C_out, C_in, k]``."""
    if x.ndim != 3 or weight.ndim != 3:
        raise DimensionError(f"conv1d expects 3-D input and weight, got {x.shape}, {weight.shape}")
    B, C, L = x.shape
    O, Cw, k = weight.shape
    if Cw != C:
        raise DimensionError(f"conv1d: weight expects {Cw} input channels, input has {C}")
    _check_same_dtype(x, weight)
    L_out = _out_len(L, k, stride, padding)

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    w = weight.data
    if stride == k:
        # non-overlapping windows: plain reshape, no strided view needed
        cols = xp[:, :, : L_out * k].reshape(B, C, L_out, k)
    else:
        cols = sliding_window_view(xp, k, axis=2)[:, :, ::stride][:, :, :L_out]
    out = np.tensordot(cols, w, axes=([1, 3], [1, 2])).transpose(0, 2, 1)

    def _backward(g):
        gw = np.tensordot(g, cols, axes=([0, 2], [0, 2]))
        gcols = np.tensordot(g, w, axes=([1], [0]))  # [B, L_out, C, k]
        gxp = np.zeros(xp.shape, dtype=g.dtype)
        if stride == k:
            gxp[:, :, : L_out * k] = gcols.transpose(0, 2, 1, 3).reshape(B, C, L_out * k)
        else:
            span = stride * (L_out - 1) + 1
            for j in range(k):
                gxp[:, :, j : j + span : stride] += gcols[:, :, :, j].transpose(0, 2, 1)
        gx = gxp[:, :, padding : padding + L] if padding else gxp
        return gx, gw

    out = record("conv1d", np.ascontiguousarray(out), (x, weight), _backward)
    return add_bias(out, bias, axis=1) if bias is not None else out


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2D cross-correlation of ``x[B, C_in, H, W]`` with ``weight[C_out, C_in, kh, kw]``."""
    if x.ndim != 4 or weight.ndim != 4:
        raise DimensionError(f"conv2d expects 4-D input and weight, got {x.shape}, {weight.shape}")
    B, C, H, W = x.shape
    O, Cw, kh, kw = weight.shape
    if Cw != C:
        raise DimensionError(f"conv2d: weight expects {Cw} input channels, input has {C}")
    _check_same_dtype(x, weight)
    Ho = _out_len(H, kh, stride, padding)
    Wo = _out_len(W, kw, stride, padding)

    p = padding
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    w = weight.data
    if kh == kw == 1:
        cols = xp[:, :, ::stride, ::stride][:, :, :Ho, :Wo, None, None]
    else:
        cols = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :Ho, :Wo]
    out = np.tensordot(cols, w, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)

    def _backward(g):
        gw = np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))
        gcols = np.tensordot(g, w, axes=([1], [0]))  # [B, Ho, Wo, C, kh, kw]
        gxp = np.zeros(xp.shape, dtype=g.dtype)
        sh = stride * (Ho - 1) + 1
        sw = stride * (Wo - 1) + 1
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i : i + sh : stride, j : j + sw : stride] += gcols[..., i, j].transpose(0, 3, 1, 2)
        gx = gxp[:, :, p : p + H, p : p + W] if p else gxp
        return gx, gw

    out = record("conv2d", np.ascontiguousarray(out), (x, weight), _backward)
    return add_bias(out, bias, axis=1) if bias is not None else out


def _windows(x: np.ndarray, s: int) -> np.ndarray:
    B, C, H, W = x.shape
    if H % s or W % s:
        raise GeometryError(f"pool window {s} does not divide spatial extents {(H, W)}")
    return x.reshape(B, C, H // s, s, W // s, s).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, H // s, W // s, s * s)


def _unwindows(g: np.ndarray, s: int) -> np.ndarray:
    B, C, Ho, Wo, _ = g.shape
    return g.reshape(B, C, Ho, Wo, s, s).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, Ho * s, Wo * s)


def max_pool2d(x: Tensor, size: int = 2) -> Tensor:
    """Non-overlapping ``size x size`` max pooling. Ties route gradient to the first maximum."""
    if x.ndim != 4:
        raise DimensionError(f"max_pool2d expects [B, C, H, W], got {x.shape}")
    win = _windows(x.data, size)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def _backward(g):
        gw = np.zeros(win.shape, dtype=g.dtype)
        np.put_along_axis(gw, idx[..., None], g[..., None], axis=-1)
        return (_unwindows(gw, size),)

    return record("max_pool2d", out, (x,), _backward)


def avg_pool2d(x: Tensor, size: int = 2) -> Tensor:
    if x.ndim != 4:
        raise DimensionError(f"avg_pool2d expects [B, C, H, W], got {x.shape}")
    win = _windows(x.data, size)
    n = size * size
    out = win.mean(axis=-1)

    def _backward(g):
        gw = np.repeat(g[..., None] / n, n, axis=-1)
        return (_unwindows(gw, size),)

    return record("avg_pool2d", out.astype(x.dtype), (x,), _backward)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
               running_var: np.ndarray, axis: int = 1, training: bool = True,
               momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalisation; statistics pool every axis except ``axis``.

    In training mode the batch statistics are used and ``running_mean`` /
    ``running_var`` are updated in place (unbiased variance, like the usual
    framework convention). In eval mode the running statistics are used.
    """
    axis = axis % x.ndim
    C = x.shape[axis]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise DimensionError(f"batch_norm: parameters {gamma.shape} do not match {C} channels")
    _check_same_dtype(x, gamma, beta)
    red = tuple(i for i in range(x.ndim) if i != axis)
    view = [1] * x.ndim
    view[axis] = C
    xd = x.data
    n = xd.size // C

    if training:
        mu = xd.mean(axis=red)
        var = xd.var(axis=red)
        running_mean *= 1 - momentum
        running_mean += momentum * mu
        running_var *= 1 - momentum
        running_var += momentum * var * (n / max(n - 1, 1))
    else:
        mu = running_mean.astype(xd.dtype)
        var = running_var.astype(xd.dtype)

    invstd = (1.0 / np.sqrt(var + eps)).astype(xd.dtype)
    xhat = (xd - mu.reshape(view)) * invstd.reshape(view)
    gd = gamma.data.reshape(view)
    out = xhat * gd + beta.data.reshape(view)

    def _backward(g):
        dgamma = (g * xhat).sum(axis=red)
        dbeta = g.sum(axis=red)
        dxhat = g * gd
        if training:
            s1 = dxhat.sum(axis=red).reshape(view)
            s2 = (dxhat * xhat).sum(axis=red).reshape(view)
            dx = invstd.reshape(view) / n * (n * dxhat - s1 - xhat * s2)
        else:
            dx = dxhat * invstd.reshape(view)
        return dx, dgamma, dbeta

    return record("batch_norm", out.astype(xd.dtype), (x, gamma, beta), _backward)
