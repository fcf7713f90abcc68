"""Network building blocks: convolutions, batch normalization, LSTM cell.

Convolutions run through an im2col view (stride tricks, no copy) and a
single BLAS matmul; the input gradient scatters back with a kernel-position
loop instead of ``np.add.at``, which is considerably faster at these sizes.
``conv_transpose2d`` is implemented as the exact adjoint of ``conv2d`` with
the same weight tensor, so the inner-product identity
``<conv2d(x, w), y> == <x, conv_transpose2d(y, w)>`` holds to rounding.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError
from .tensor import Tensor


def _pair(v):
    return tuple(v) if isinstance(v, (tuple, list)) else (v, v)


def _conv_out_size(size, kernel, stride, padding):
    return (size + 2 * padding - kernel) // stride + 1


def _patches(xp: np.ndarray, kh: int, kw: int, sh: int, sw: int, oh: int, ow: int) -> np.ndarray:
    """im2col view of a padded NCHW array -> (N, C*kh*kw, oh*ow)."""
    n, c, _, _ = xp.shape
    sn, sc, srow, scol = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp,
        shape=(n, c, kh, kw, oh, ow),
        strides=(sn, sc, srow, scol, sh * srow, sw * scol),
        writeable=False,
    )
    return view.reshape(n, c * kh * kw, oh * ow)


def _scatter_cols(cols: np.ndarray, padded_shape, kh, kw, sh, sw, oh, ow) -> np.ndarray:
    """col2im: accumulate (N, C*kh*kw, oh*ow) columns into a padded image."""
    n, c = padded_shape[0], padded_shape[1]
    out = np.zeros(padded_shape, dtype=cols.dtype)
    cols = cols.reshape(n, c, kh, kw, oh, ow)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + sh * oh : sh, j : j + sw * ow : sw] += cols[:, :, i, j]
    return out


def _unpad(xp: np.ndarray, ph: int, pw: int) -> np.ndarray:
    h, w = xp.shape[2], xp.shape[3]
    return xp[:, :, ph : h - ph if ph else h, pw : w - pw if pw else w]


def conv2d(x: Tensor, weight: Tensor, stride=1, padding=0) -> Tensor:
    """Cross-correlate NCHW input with OIKK weights.

    Output spatial size is floor((H + 2p - K) / s) + 1 per axis.
    """
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and weight, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    o, i, kh, kw = weight.shape
    if c != i:
        raise ShapeError(f"conv2d channel mismatch: input has {c}, weight expects {i}")
    if sh < 1 or sw < 1:
        raise ShapeError("conv2d stride must be >= 1")
    oh = _conv_out_size(h, kh, sh, ph)
    ow = _conv_out_size(w, kw, sw, pw)
    if oh < 1 or ow < 1:
        raise ShapeError(f"conv2d output would be empty for input {x.shape} kernel {weight.shape}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    cols = _patches(xp, kh, kw, sh, sw, oh, ow)
    w2 = weight.data.reshape(o, i * kh * kw)
    out_data = np.matmul(w2, cols).reshape(n, o, oh, ow)

    def backward(g):
        gflat = g.reshape(n, o, oh * ow)
        if weight.requires_grad:
            gw = np.matmul(gflat, cols.transpose(0, 2, 1)).sum(axis=0)
            weight.accumulate_grad(gw.reshape(o, i, kh, kw))
        if x.requires_grad:
            gcols = np.matmul(w2.T, gflat)
            gx = _scatter_cols(gcols, xp.shape, kh, kw, sh, sw, oh, ow)
            x.accumulate_grad(_unpad(gx, ph, pw))

    return Tensor.from_op(out_data, (x, weight), "conv2d", backward)


def conv_transpose2d(x: Tensor, weight: Tensor, stride=1, padding=0) -> Tensor:
    """Fractionally-strided convolution; adjoint of ``conv2d``.

    ``weight`` has shape (C_in, C_out, kh, kw): the channel roles of a
    conv2d weight, transposed.  Output spatial size is
    (H - 1) * s - 2p + K per axis.
    """
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(
            f"conv_transpose2d expects 4-D input and weight, got {x.shape} and {weight.shape}"
        )
    n, c, h, w = x.shape
    ci, co, kh, kw = weight.shape
    if c != ci:
        raise ShapeError(f"conv_transpose2d channel mismatch: input has {c}, weight expects {ci}")
    if sh < 1 or sw < 1:
        raise ShapeError("conv_transpose2d stride must be >= 1")
    oh = (h - 1) * sh - 2 * ph + kh
    ow = (w - 1) * sw - 2 * pw + kw
    if oh < 1 or ow < 1:
        raise ShapeError(f"conv_transpose2d output would be empty for input {x.shape}")

    w2 = weight.data.reshape(ci, co * kh * kw)
    xflat = x.data.reshape(n, ci, h * w)
    cols = np.matmul(w2.T, xflat)
    padded = _scatter_cols(cols, (n, co, oh + 2 * ph, ow + 2 * pw), kh, kw, sh, sw, h, w)
    out_data = _unpad(padded, ph, pw)

    def backward(g):
        gp = np.pad(g, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
        gcols = _patches(gp, kh, kw, sh, sw, h, w)
        if x.requires_grad:
            gx = np.matmul(w2, gcols).reshape(n, ci, h, w)
            x.accumulate_grad(gx)
        if weight.requires_grad:
            gw = np.matmul(xflat, gcols.transpose(0, 2, 1)).sum(axis=0)
            weight.accumulate_grad(gw.reshape(ci, co, kh, kw))

    return Tensor.from_op(out_data, (x, weight), "conv_transpose2d", backward)


class RunningStats:
    """Per-channel running mean/variance buffers for batch_norm eval mode."""

    def __init__(self, channels: int):
        self.mean = np.zeros(channels)
        self.var = np.ones(channels)

    def update(self, batch_mean: np.ndarray, batch_var: np.ndarray, momentum: float) -> None:
        self.mean = (1.0 - momentum) * self.mean + momentum * batch_mean
        self.var = (1.0 - momentum) * self.var + momentum * batch_var


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta_shift: Tensor,
    running: RunningStats,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-8,
) -> Tensor:
    """Per-channel normalization of an NCHW tensor.

    Train mode normalizes with batch statistics (biased variance) and
    updates the running buffers; eval mode normalizes with the stored
    running statistics.
    """
    if x.ndim != 4:
        raise ShapeError(f"batch_norm expects NCHW input, got shape {x.shape}")
    n, c, h, w = x.shape
    if gamma.size != c or beta_shift.size != c:
        raise ShapeError(f"batch_norm affine parameters must have length {c}")
    if n * h * w == 0:
        raise ShapeError("batch_norm on an empty batch")

    gamma_r = gamma.reshape(1, c, 1, 1)
    beta_r = beta_shift.reshape(1, c, 1, 1)
    if training:
        mu = x.mean(axis=(0, 2, 3), keepdims=True)
        centered = x - mu
        var = (centered * centered).mean(axis=(0, 2, 3), keepdims=True)
        running.update(mu.data.reshape(c), var.data.reshape(c), momentum)
        inv_std = (var + eps) ** -0.5
        return gamma_r * (centered * inv_std) + beta_r
    mu = Tensor(running.mean.reshape(1, c, 1, 1))
    inv_std = Tensor(1.0 / np.sqrt(running.var.reshape(1, c, 1, 1) + eps))
    return gamma_r * ((x - mu) * inv_std) + beta_r


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map (B, In) @ (In, Out) + (Out,)."""
    out = x @ weight
    if bias is not None:
        out = out + bias.reshape(1, bias.size)
    return out


def lstm_cell(x: Tensor, h_prev: Tensor, c_prev: Tensor, w_x: Tensor, w_h: Tensor, bias: Tensor):
    """One LSTM step; gate blocks ordered (input, forget, cell, output).

    x: (B, In), h_prev/c_prev: (B, H), w_x: (In, 4H), w_h: (H, 4H),
    bias: (4H,).  Returns (h, c).
    """
    hidden = h_prev.shape[1]
    if c_prev.shape != h_prev.shape or w_h.shape[0] != hidden or w_x.shape[1] != 4 * hidden:
        raise ShapeError(
            f"lstm_cell size mismatch: h {h_prev.shape}, c {c_prev.shape}, "
            f"w_x {w_x.shape}, w_h {w_h.shape}"
        )
    gates = x @ w_x + h_prev @ w_h + bias.reshape(1, 4 * hidden)
    i_gate = gates[:, 0 * hidden : 1 * hidden].sigmoid()
    f_gate = gates[:, 1 * hidden : 2 * hidden].sigmoid()
    g_cell = gates[:, 2 * hidden : 3 * hidden].tanh()
    o_gate = gates[:, 3 * hidden : 4 * hidden].sigmoid()
    c = f_gate * c_prev + i_gate * g_cell
    h = o_gate * c.tanh()
    return h, c
