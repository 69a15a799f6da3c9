"""Fused layer ops with hand-written backward passes."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from rffi.tensornet.tensor import Tensor, make_node, matmul, relu


class DimensionMismatchError(ValueError):
    """Raised when a fixed-size layer receives an input of the wrong extent."""


def dense(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """y = x A^T + b over the last axis; ``weight`` is A with shape (out, in)."""
    n_in = weight.shape[1]
    if x.shape[-1] != n_in:
        raise DimensionMismatchError(
            f"dense layer expects input vectors of length {n_in} but got {x.shape[-1]} "
            f"(input shape {x.shape}); a weight matrix of shape {weight.shape} cannot "
            "multiply a vector of a different length, so dense layers only accept "
            "fixed-size inputs"
        )
    y = matmul(x, _transpose2(weight))
    return y + bias if bias is not None else y


def _transpose2(w: Tensor) -> Tensor:
    def backward(g):
        w._accumulate(g.T)

    return make_node(w.data.T, (w,), backward)


# --- convolution ----------------------------------------------------------


def _im2col(xp: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """Padded (B, H+kh-1, W+kw-1, C) -> (B*H*W, kh*kw*C) patch matrix."""
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))  # B, H, W, C, kh, kw
    b, h, w, c = win.shape[:4]
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(b * h * w, kh * kw * c)


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None) -> Tensor:
    """Stride-1, zero 'same' padded 2-D convolution.

    x is (B, H, W, Cin) or (H, W, Cin); kernel is (kh, kw, Cin, Cout) with odd
    kh, kw. Spatial extents are preserved for any H, W >= 1.
    """
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    kh, kw, cin, cout = kernel.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"kernel extents must be odd, got {kh}x{kw}")
    if xd.shape[-1] != cin:
        raise DimensionMismatchError(f"conv2d expects {cin} input channels, got {xd.shape[-1]}")
    b, h, w, _ = xd.shape
    ph, pw = kh // 2, kw // 2
    pad = ((0, 0), (ph, ph), (pw, pw), (0, 0))
    wmat = kernel.data.reshape(kh * kw * cin, cout)

    cols = xd.reshape(-1, cin) if kh == kw == 1 else _im2col(np.pad(xd, pad), kh, kw)
    out = cols @ wmat
    if bias is not None:
        out += bias.data
    out = out.reshape(b, h, w, cout)

    def backward(g):
        g2 = g.reshape(-1, cout)
        if bias is not None and bias.requires_grad:
            bias._accumulate(g2.sum(axis=0))
        if kernel.requires_grad:
            kernel._accumulate((cols.T @ g2).reshape(kernel.shape))
        if x.requires_grad:
            # input gradient is a 'same' convolution with the flipped, transposed kernel
            if kh == kw == 1:
                dx = (g2 @ wmat.T).reshape(b, h, w, cin)
            else:
                flipped = kernel.data[::-1, ::-1].transpose(0, 1, 3, 2).reshape(kh * kw * cout, cin)
                gp = np.pad(g.reshape(b, h, w, cout), pad)
                dx = (_im2col(gp, kh, kw) @ flipped).reshape(b, h, w, cin)
            x._accumulate(dx[0] if squeeze else dx)

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return make_node(out[0] if squeeze else out, parents, backward)


# --- pooling --------------------------------------------------------------


def max_pool2d(x: Tensor) -> Tensor:
    """2x2 max pooling, stride 2, over axes (-3, -2) of (..., H, W, C).

    Ties route the gradient to the first element in row-major window order.
    """
    *lead, h, w, c = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"max_pool2d needs even spatial extents, got {h}x{w}")
    blocks = x.data.reshape(*lead, h // 2, 2, w // 2, 2, c)
    nl = len(lead)
    # -> (..., H/2, W/2, C, 2, 2) -> (..., H/2, W/2, C, 4)
    perm = (*range(nl), nl, nl + 2, nl + 4, nl + 1, nl + 3)
    win = blocks.transpose(perm).reshape(*lead, h // 2, w // 2, c, 4)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        gw = np.zeros(win.shape, dtype=g.dtype)
        np.put_along_axis(gw, arg[..., None], g[..., None], axis=-1)
        gw = gw.reshape(*lead, h // 2, w // 2, c, 2, 2)
        inv = np.argsort(perm)
        x._accumulate(gw.transpose(inv).reshape(x.shape))

    return make_node(out, (x,), backward)


def global_average_pool2d(x: Tensor) -> Tensor:
    """(..., H, W, C) -> (..., C)."""
    h, w = x.shape[-3], x.shape[-2]

    def backward(g):
        x._accumulate(np.broadcast_to(g[..., None, None, :] / (h * w), x.shape))

    return make_node(x.data.mean(axis=(-3, -2)), (x,), backward)


def global_average_pool1d(x: Tensor) -> Tensor:
    """(..., T, F) -> (..., F)."""
    t = x.shape[-2]

    def backward(g):
        x._accumulate(np.broadcast_to(g[..., None, :] / t, x.shape))

    return make_node(x.data.mean(axis=-2), (x,), backward)


def flatten(x: Tensor, start: int = 1) -> Tensor:
    shape = x.shape[:start] + (-1,)

    def backward(g):
        x._accumulate(g.reshape(x.shape))

    return make_node(x.data.reshape(shape), (x,), backward)


# --- normalisation, attention helpers, loss -------------------------------


def layer_norm(x: Tensor, gain: Tensor, shift: Tensor, eps: float = 1e-5) -> Tensor:
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    d = x.shape[-1]

    def backward(g):
        if gain.requires_grad:
            gain._accumulate((g * xhat).reshape(-1, d).sum(axis=0))
        if shift.requires_grad:
            shift._accumulate(g.reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            gx = g * gain.data
            dx = inv * (
                gx
                - gx.mean(axis=-1, keepdims=True)
                - xhat * (gx * xhat).mean(axis=-1, keepdims=True)
            )
            x._accumulate(dx)

    return make_node(xhat * gain.data + shift.data, (x, gain, shift), backward)


def sinusoidal_position_encoding(t: int, d: int, dtype=np.float64) -> np.ndarray:
    """Interleaved table: even columns sin, odd columns cos."""
    pos = np.arange(t)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    table = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return table.astype(dtype)


def log_softmax_np(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax_cross_entropy(logits: Tensor, labels) -> tuple[Tensor, np.ndarray]:
    """Mean cross-entropy of (B, K) or (K,) logits; returns (loss, probabilities)."""
    single = logits.ndim == 1
    z = logits.data[None] if single else logits.data
    labels = np.atleast_1d(np.asarray(labels))
    k = z.shape[-1]
    if labels.shape[0] != z.shape[0]:
        raise ValueError("one label per row of logits required")
    if np.any(labels < 0) or np.any(labels >= k):
        raise ValueError(f"labels must lie in [0, {k})")
    logp = log_softmax_np(z)
    probs = np.exp(logp)
    rows = np.arange(z.shape[0])
    loss = -logp[rows, labels].mean()

    def backward(g):
        d = probs.copy()
        d[rows, labels] -= 1.0
        d *= g / z.shape[0]
        logits._accumulate(d[0] if single else d)

    out = make_node(np.asarray(loss, dtype=z.dtype), (logits,), backward)
    return out, probs[0] if single else probs


def softmax_np(z: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax_np(z))


__all__ = [
    "DimensionMismatchError",
    "conv2d",
    "dense",
    "flatten",
    "global_average_pool1d",
    "global_average_pool2d",
    "layer_norm",
    "max_pool2d",
    "relu",
    "sinusoidal_position_encoding",
    "softmax_cross_entropy",
    "softmax_np",
]
