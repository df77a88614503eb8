"""Weight-normalized convolutions and bilinear resizing."""
from __future__ import annotations

from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import NumericDomainError, StructuralError
from .core import Tensor, _make


def weight_norm(v: Tensor, g: Tensor, out_axis: int = 0) -> Tensor:
    """Effective weight ``g * v / ||v||`` with one norm per slice along ``out_axis``."""
    if g.shape != (v.shape[out_axis],):
        raise StructuralError(f"weight_norm: g {list(g.shape)} does not match axis {out_axis} of {list(v.shape)}")
    axes = tuple(i for i in range(v.data.ndim) if i != out_axis)
    bshape = [1] * v.data.ndim
    bshape[out_axis] = -1
    norm = np.sqrt(np.sum(v.data * v.data, axis=axes, keepdims=True))
    if np.any(norm == 0):
        raise NumericDomainError("weight_norm: direction tensor has a zero-norm slice")
    u = v.data / norm
    gb = g.data.reshape(bshape)
    w = gb * u

    def _bw(dw):
        dg = np.sum(dw * u, axis=axes)
        dv = (gb / norm) * (dw - u * dg.reshape(bshape))
        return dv, dg

    return _make(w, (v, g), _bw, "weight_norm")


def _windows(xp: np.ndarray, k: int, stride: int) -> np.ndarray:
    """[B,C,Hp,Wp] -> strided view [B,C,Ho,Wo,k,k]."""
    return sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]


def _scatter_windows(cols: np.ndarray, full_hw: tuple, stride: int) -> np.ndarray:
    """Inverse of ``_windows``: sum [B,C,Ho,Wo,k,k] patches into [B,C,*full_hw]."""
    b, c, ho, wo, k, _ = cols.shape
    out = np.zeros((b, c) + full_hw, dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            out[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += cols[:, :, :, :, i, j]
    return out


def _check_conv(x: Tensor, v: Tensor, in_axis: int, padding: int, stride: int, name: str) -> None:
    if x.data.ndim != 4 or v.data.ndim != 4:
        raise StructuralError(f"{name} expects 4-d input and weight")
    if x.shape[1] != v.shape[in_axis]:
        raise StructuralError(f"{name}: input has {x.shape[1]} channels, weight expects {v.shape[in_axis]}")
    if v.shape[2] != v.shape[3]:
        raise StructuralError(f"{name}: kernels must be square")
    if stride < 1 or padding < 0:
        raise StructuralError(f"{name}: stride must be >= 1 and padding >= 0")


def conv2d_raw(x: Tensor, w: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of x [B,Cin,H,W] with w [Cout,Cin,k,k]."""
    _check_conv(x, w, 1, padding, stride, "conv2d")
    k = w.shape[2]
    _, _, h, wd = x.shape
    if h + 2 * padding < k or wd + 2 * padding < k:
        raise StructuralError(f"conv2d: padded input {h + 2 * padding}x{wd + 2 * padding} smaller than kernel {k}")
    if bias.shape != (w.shape[0],):
        raise StructuralError("conv2d: bias must have one entry per output channel")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    win = _windows(xp, k, stride)
    out = np.tensordot(win, w.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    out += bias.data.reshape(1, -1, 1, 1)

    def _bw(g):
        gw = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))
        cols = np.tensordot(g, w.data, axes=([1], [0])).transpose(0, 3, 1, 2, 4, 5)
        gxp = _scatter_windows(cols, xp.shape[2:], stride)
        gx = gxp[:, :, padding:padding + h, padding:padding + wd] if padding else gxp
        return np.ascontiguousarray(gx), gw, g.sum(axis=(0, 2, 3))

    return _make(np.ascontiguousarray(out), (x, w, bias), _bw, "conv2d")


def conv_transpose2d_raw(x: Tensor, w: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Transposed convolution of x [B,Cin,H,W] with w [Cin,Cout,k,k]."""
    _check_conv(x, w, 0, padding, stride, "conv_transpose2d")
    k = w.shape[2]
    b, _, h, wd = x.shape
    full = ((h - 1) * stride + k, (wd - 1) * stride + k)
    out_h, out_w = full[0] - 2 * padding, full[1] - 2 * padding
    if out_h < 1 or out_w < 1:
        raise StructuralError("conv_transpose2d: padding removes the whole output")
    if bias.shape != (w.shape[1],):
        raise StructuralError("conv_transpose2d: bias must have one entry per output channel")
    cols = np.tensordot(x.data, w.data, axes=([1], [0])).transpose(0, 3, 1, 2, 4, 5)
    out = _scatter_windows(cols, full, stride)[:, :, padding:padding + out_h, padding:padding + out_w]
    out = out + bias.data.reshape(1, -1, 1, 1)

    def _bw(g):
        gp = np.pad(g, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else g
        win = _windows(gp, k, stride)
        gx = np.tensordot(win, w.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
        gw = np.tensordot(x.data, win, axes=([0, 2, 3], [0, 2, 3]))
        return np.ascontiguousarray(gx), gw, g.sum(axis=(0, 2, 3))

    return _make(np.ascontiguousarray(out), (x, w, bias), _bw, "conv_transpose2d")


def conv2d(x: Tensor, weight_v: Tensor, weight_g: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Weight-normalized convolution; ``weight_v`` is [Cout,Cin,k,k], ``weight_g`` is [Cout]."""
    _check_conv(x, weight_v, 1, padding, stride, "conv2d")
    return conv2d_raw(x, weight_norm(weight_v, weight_g, 0), bias, stride, padding)


def conv_transpose2d(x: Tensor, weight_v: Tensor, weight_g: Tensor, bias: Tensor,
                     stride: int = 1, padding: int = 0) -> Tensor:
    """Weight-normalized transposed convolution; ``weight_v`` is [Cin,Cout,k,k], ``weight_g`` is [Cout]."""
    _check_conv(x, weight_v, 0, padding, stride, "conv_transpose2d")
    return conv_transpose2d_raw(x, weight_norm(weight_v, weight_g, 1), bias, stride, padding)


@lru_cache(maxsize=64)
def _interp_matrix(n_in: int, n_out: int, dtype_name: str) -> np.ndarray:
    # half-pixel centres, edge-clamped
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0, n_in - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    m = np.zeros((n_out, n_in), dtype=np.float64)
    rows = np.arange(n_out)
    np.add.at(m, (rows, lo), 1 - frac)
    np.add.at(m, (rows, hi), frac)
    m = m.astype(dtype_name)
    m.setflags(write=False)
    return m


def resize_bilinear(x: Tensor, out_h: int, out_w: int) -> Tensor:
    if out_h < 1 or out_w < 1:
        raise StructuralError(f"resize_bilinear: output size {out_h}x{out_w} must be positive")
    if x.data.ndim != 4:
        raise StructuralError("resize_bilinear expects [B,C,H,W]")
    _, _, h, w = x.shape
    if (h, w) == (out_h, out_w):
        return _make(x.data.copy(), (x,), lambda g: (g,), "resize_bilinear")
    ah = _interp_matrix(h, out_h, x.dtype.name)
    aw = _interp_matrix(w, out_w, x.dtype.name)
    out = np.matmul(np.matmul(ah, x.data), aw.T)

    def _bw(g):
        return (np.matmul(np.matmul(ah.T, g), aw),)

    return _make(out, (x,), _bw, "resize_bilinear")
