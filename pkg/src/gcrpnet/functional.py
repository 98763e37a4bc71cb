"""Differentiable neural-network primitives on top of :mod:`gcrpnet.tensor`.

Feature maps are NCHW unless stated otherwise. Convolutions are
cross-correlations (no kernel flip). Bilinear resampling uses half-pixel
centres (``align_corners=False``).
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, _record, as_tensor, matmul, mean, tmax

# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split on sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(x: Tensor) -> Tensor:
    out = _sigmoid(x.data)
    return _record(out, (x,), lambda g: (g * out * (1.0 - out),))


def silu(x: Tensor) -> Tensor:
    xd = x.data
    s = _sigmoid(xd)
    return _record(xd * s, (x,), lambda g: (g * s * (1.0 + xd * (1.0 - s)),))


def relu(x: Tensor) -> Tensor:
    xd = x.data
    return _record(np.maximum(xd, 0), (x,), lambda g: (g * (xd > 0),))


def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    xd = x.data
    pos = xd > 0
    return _record(np.where(pos, xd, slope * xd), (x,), lambda g: (np.where(pos, g, slope * g),))


def elu(x: Tensor, alpha: float = 1.0) -> Tensor:
    xd = x.data
    pos = xd > 0
    neg_branch = alpha * np.expm1(np.minimum(xd, 0))
    out = np.where(pos, xd, neg_branch)
    return _record(out, (x,), lambda g: (np.where(pos, g, g * (neg_branch + alpha)),))


def softplus(x: Tensor) -> Tensor:
    xd = x.data
    out = np.logaddexp(0, xd)
    return _record(out, (x,), lambda g: (g * _sigmoid(xd),))


def softmax(x: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Softmax along ``axis``. Entries where ``mask`` is False get probability 0."""
    xd = x.data
    if mask is not None:
        xd = np.where(mask, xd, -np.inf)
    shifted = xd - xd.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _record(out, (x,), backward)


def layer_norm(x: Tensor, axis: int = -1, eps: float = 1e-5, weight: Tensor | None = None,
               bias: Tensor | None = None) -> Tensor:
    """Normalise over one axis, then apply the optional per-feature affine.

    ``weight``/``bias`` are 1-d with length ``x.shape[axis]``.
    """
    axis = axis % x.ndim
    xd = x.data
    mu = xd.mean(axis=axis, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    bshape = [1] * x.ndim
    bshape[axis] = x.shape[axis]
    wd = weight.data.reshape(bshape) if weight is not None else None
    out = xhat * wd if wd is not None else xhat
    if bias is not None:
        out = out + bias.data.reshape(bshape)
    red = tuple(i for i in range(x.ndim) if i != axis)
    n = x.shape[axis]

    def backward(g):
        gw = (g * xhat).sum(axis=red) if weight is not None and weight.requires_grad else None
        gb = g.sum(axis=red) if bias is not None and bias.requires_grad else None
        gh = g * wd if wd is not None else g
        gx = None
        if x.requires_grad:
            gx = inv * (gh - gh.mean(axis=axis, keepdims=True)
                        - xhat * (gh * xhat).sum(axis=axis, keepdims=True) / n)
        return gx, gw, gb

    parents = (x, weight if weight is not None else Tensor(0.0), bias if bias is not None else Tensor(0.0))
    return _record(out.astype(xd.dtype, copy=False), parents, backward)


# ---------------------------------------------------------------------------
# convolutions
# ---------------------------------------------------------------------------


def _check_conv_args(x: Tensor, w: Tensor, stride: int, padding: int) -> tuple[int, int]:
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and weight, got {x.shape} and {w.shape}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d channel mismatch: input has {x.shape[1]}, weight expects {w.shape[1]}")
    kh, kw = w.shape[2:]
    ho = (x.shape[2] + 2 * padding - kh) // stride + 1
    wo = (x.shape[3] + 2 * padding - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"input {x.shape[2:]} with padding {padding} is smaller than kernel {(kh, kw)}")
    return ho, wo


def _pad(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _col2im(cols: np.ndarray, shape, kh: int, kw: int, stride: int, padding: int) -> np.ndarray:
    """Adjoint of window extraction. ``cols`` is (N, Ho, Wo, C, kh, kw)."""
    n, c, h, w = shape
    ho, wo = cols.shape[1:3]
    out = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    if padding:
        out = out[:, :, padding:-padding, padding:-padding]
    return out


def _conv_forward(xd: np.ndarray, wd: np.ndarray, stride: int, padding: int):
    kh, kw = wd.shape[2:]
    if kh == 1 and kw == 1 and padding == 0:
        xs = xd[:, :, ::stride, ::stride] if stride > 1 else xd
        out = np.einsum("nchw,oc->nohw", xs, wd[:, :, 0, 0], optimize=True)
        return out, None
    cols = sliding_window_view(_pad(xd, padding), (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    # (N, C, Ho, Wo, kh, kw) -> (N, Ho, Wo, O)
    out = np.tensordot(cols, wd, axes=([1, 4, 5], [1, 2, 3]))
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2)), cols


def _conv_input_grad(g: np.ndarray, wd: np.ndarray, xshape, stride: int, padding: int) -> np.ndarray:
    kh, kw = wd.shape[2:]
    if kh == 1 and kw == 1 and padding == 0:
        gx_s = np.einsum("nohw,oc->nchw", g, wd[:, :, 0, 0], optimize=True)
        if stride == 1:
            return gx_s
        gx = np.zeros(xshape, dtype=g.dtype)
        gx[:, :, ::stride, ::stride][:, :, :gx_s.shape[2], :gx_s.shape[3]] = gx_s
        return gx
    dcols = np.tensordot(g, wd, axes=([1], [0]))  # (N, Ho, Wo, C, kh, kw)
    return _col2im(dcols, xshape, kh, kw, stride, padding)


def _conv_weight_grad(g: np.ndarray, xd: np.ndarray, cols, wshape, stride: int, padding: int) -> np.ndarray:
    if cols is None:
        xs = xd[:, :, ::stride, ::stride] if stride > 1 else xd
        xs = xs[:, :, :g.shape[2], :g.shape[3]]
        return np.einsum("nohw,nchw->oc", g, xs, optimize=True).reshape(wshape)
    return np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-d cross-correlation. ``x``: (N, C, H, W); ``w``: (O, C, kh, kw); ``b``: (O,)."""
    _check_conv_args(x, w, stride, padding)
    xd, wd = x.data, w.data
    out, cols = _conv_forward(xd, wd, stride, padding)
    if b is not None:
        out = out + b.data.reshape(1, -1, 1, 1)

    def backward(g):
        gx = _conv_input_grad(g, wd, xd.shape, stride, padding) if x.requires_grad else None
        gw = _conv_weight_grad(g, xd, cols, wd.shape, stride, padding) if w.requires_grad else None
        gb = g.sum(axis=(0, 2, 3)) if b is not None and b.requires_grad else None
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return _record(out, parents, backward)


def conv2d_transpose(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1) -> Tensor:
    """Adjoint of :func:`conv2d` (padding 0). ``w``: (C_in, C_out, kh, kw).

    Output spatial size is ``(H - 1) * stride + k``, i.e. ``H * stride`` when the
    kernel equals the stride.
    """
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"conv2d_transpose: input {x.shape} incompatible with weight {w.shape}")
    xd, wd = x.data, w.data
    n, _, h, wi = xd.shape
    kh, kw = wd.shape[2:]
    oshape = (n, wd.shape[1], (h - 1) * stride + kh, (wi - 1) * stride + kw)
    out = _conv_input_grad(xd, wd, oshape, stride, 0)
    if b is not None:
        out = out + b.data.reshape(1, -1, 1, 1)

    def backward(g):
        gx = gw = gb = None
        fwd, cols = _conv_forward(g, wd, stride, 0) if x.requires_grad or w.requires_grad else (None, None)
        if x.requires_grad:
            gx = fwd
        if w.requires_grad:
            gw = _conv_weight_grad(xd, g, cols, wd.shape, stride, 0)
        if b is not None and b.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return _record(out, parents, backward)


def depthwise_conv2d(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Per-channel 'same' convolution. ``w``: (C, 1, k, k) with odd ``k``."""
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"depthwise_conv2d expects 4-d tensors, got {x.shape} and {w.shape}")
    c = x.shape[1]
    if w.shape[0] != c or w.shape[1] != 1:
        raise ShapeError(f"depthwise kernel {w.shape} does not match {c} input channels")
    k = w.shape[2]
    if k % 2 == 0 or w.shape[3] != k:
        raise ShapeError(f"depthwise kernel must be square and odd, got {w.shape[2:]}")
    p = (k - 1) // 2
    xd, wd = x.data, w.data
    _, _, h, wi = xd.shape
    xp = _pad(xd, p)
    kern = wd[:, 0]
    out = np.zeros_like(xd)
    for i in range(k):
        for j in range(k):
            out += xp[:, :, i:i + h, j:j + wi] * kern[:, i, j].reshape(1, c, 1, 1)
    if b is not None:
        out += b.data.reshape(1, c, 1, 1)

    def backward(g):
        gx = gw = gb = None
        if x.requires_grad:
            gp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    gp[:, :, i:i + h, j:j + wi] += g * kern[:, i, j].reshape(1, c, 1, 1)
            gx = gp[:, :, p:p + h, p:p + wi] if p else gp
        if w.requires_grad:
            gk = np.empty_like(wd)
            for i in range(k):
                for j in range(k):
                    gk[:, 0, i, j] = (g * xp[:, :, i:i + h, j:j + wi]).sum(axis=(0, 2, 3))
            gw = gk
        if b is not None and b.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return _record(out, parents, backward)


# ---------------------------------------------------------------------------
# resampling and pooling
# ---------------------------------------------------------------------------


@lru_cache(maxsize=256)
def _interp_matrix(n_in: int, n_out: int, mode: str) -> np.ndarray:
    """Row-stochastic (n_out, n_in) matrix for 1-d resampling."""
    m = np.zeros((n_out, n_in), dtype=np.float64)
    scale = n_in / n_out
    rows = np.arange(n_out)
    if mode == "nearest":
        src = np.minimum(np.floor(rows * scale).astype(int), n_in - 1)
        m[rows, src] = 1.0
    elif mode == "bilinear":
        pos = np.clip((rows + 0.5) * scale - 0.5, 0.0, n_in - 1)
        lo = np.floor(pos).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        frac = pos - lo
        np.add.at(m, (rows, lo), 1.0 - frac)
        np.add.at(m, (rows, hi), frac)
    elif mode == "area":
        if n_in % n_out:
            raise ShapeError(f"area resampling needs integer factor, got {n_in} -> {n_out}")
        f = n_in // n_out
        for r in rows:
            m[r, r * f:(r + 1) * f] = 1.0 / f
    else:
        raise ValueError(f"unknown resize mode {mode!r}")
    m.setflags(write=False)
    return m


def resize(x: Tensor, target_h: int, target_w: int, mode: str = "bilinear") -> Tensor:
    """Resample the last two axes. Modes: ``nearest``, ``bilinear``, ``area``.

    Implemented as ``Ry @ x @ Rx^T`` with fixed interpolation matrices, so the
    gradient is the transposed interpolation.
    """
    if target_h < 1 or target_w < 1:
        raise ValueError(f"target size must be >= 1, got {(target_h, target_w)}")
    h, w = x.shape[-2:]
    if (h, w) == (target_h, target_w):
        return x
    ry = Tensor(_interp_matrix(h, target_h, mode).astype(x.dtype))
    rxt = Tensor(_interp_matrix(w, target_w, mode).T.astype(x.dtype))
    return matmul(matmul(ry, x), rxt)


def avg_pool(x: Tensor, factor: int) -> Tensor:
    """Non-overlapping ``factor x factor`` average pooling."""
    h, w = x.shape[-2:]
    return resize(x, h // factor, w // factor, mode="area")


def global_avg_pool(x: Tensor) -> Tensor:
    """(N, C, H, W) -> (N, C, 1, 1)."""
    return mean(x, axis=(2, 3), keepdims=True)


def global_max_pool(x: Tensor) -> Tensor:
    return tmax(x, axis=(2, 3), keepdims=True)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Channel-last affine map: ``x @ w + b`` with ``w`` shaped (in, out)."""
    out = matmul(x, w)
    return out + b if b is not None else out


def nchw_to_nhwc(x: Tensor) -> Tensor:
    return x.transpose(0, 2, 3, 1)


def nhwc_to_nchw(x: Tensor) -> Tensor:
    return x.transpose(0, 3, 1, 2)


__all__ = [
    "sigmoid", "silu", "relu", "leaky_relu", "elu", "softplus", "softmax", "layer_norm",
    "conv2d", "conv2d_transpose", "depthwise_conv2d", "resize", "avg_pool",
    "global_avg_pool", "global_max_pool", "linear", "nchw_to_nhwc", "nhwc_to_nchw", "as_tensor",
]
