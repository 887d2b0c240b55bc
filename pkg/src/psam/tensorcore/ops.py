"""Differentiable primitives.

Each primitive computes its forward value with numpy and registers a closure
that maps the output gradient to one gradient per input. Broadcasting is
limited to leading batch axes: in ``add``/``mul`` the second operand's shape
must equal the first's or be a suffix of it.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeMismatch, Tensor, record_op


def _t(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _check(cond: bool, op: str, a, b) -> None:
    if not cond:
        raise ShapeMismatch(f"{op}: incompatible shapes {tuple(a)} and {tuple(b)}")


def _suffix_broadcast(x: Tensor, y: Tensor, op: str) -> int:
    """Number of leading axes of x that y is broadcast over."""
    lead = x.ndim - y.ndim
    _check(lead >= 0 and x.shape[lead:] == y.shape, op, x.shape, y.shape)
    return lead


def _reduce_lead(g: np.ndarray, lead: int) -> np.ndarray:
    return g.sum(axis=tuple(range(lead))) if lead else g


# ---------------------------------------------------------------- elementwise


def add(x, y) -> Tensor:
    x, y = _t(x), _t(y, x if isinstance(x, Tensor) else None)
    lead = _suffix_broadcast(x, y, "add")
    return record_op("add", (x, y), x.data + y.data, lambda g: (g, _reduce_lead(g, lead)))


def mul(x, y) -> Tensor:
    x, y = _t(x), _t(y, x if isinstance(x, Tensor) else None)
    lead = _suffix_broadcast(x, y, "mul")
    xd, yd = x.data, y.data
    return record_op("mul", (x, y), xd * yd, lambda g: (g * yd, _reduce_lead(g * xd, lead)))


def scale(x: Tensor, c: float) -> Tensor:
    c = x.dtype.type(c)
    return record_op("scale", (x,), x.data * c, lambda g: (g * c,))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return record_op("relu", (x,), np.where(mask, x.data, 0).astype(x.dtype), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    # split by sign for stability
    e = np.exp(-np.abs(d))
    y = np.where(d >= 0, 1 / (1 + e), e / (1 + e)).astype(x.dtype)
    return record_op("sigmoid", (x,), y, lambda g: (g * y * (1 - y),))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """tanh approximation of GELU."""
    d = x.data
    c = x.dtype.type(_GELU_C)
    k = x.dtype.type(0.044715)
    inner = c * (d + k * d**3)
    th = np.tanh(inner)
    y = 0.5 * d * (1 + th)

    def back(g):
        dinner = c * (1 + 3 * k * d**2)
        return (g * (0.5 * (1 + th) + 0.5 * d * (1 - th**2) * dinner),)

    return record_op("gelu", (x,), y, back)


# ---------------------------------------------------------------- structural


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    old = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeMismatch(f"reshape: cannot view {old} as {tuple(shape)}") from None
    return record_op("reshape", (x,), out, lambda g: (g.reshape(old),))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return record_op("transpose", (x,), x.data.transpose(axes), lambda g: (g.transpose(inv),))


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = tuple(tensors)
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        _check(
            t.ndim == len(ref) and all(a == b for i, (a, b) in enumerate(zip(ref, t.shape)) if i != ax),
            "concat",
            ref,
            t.shape,
        )
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def back(g):
        return tuple(np.take(g, range(bounds[i], bounds[i + 1]), axis=ax) for i in range(len(tensors)))

    return record_op("concat", tensors, np.concatenate([t.data for t in tensors], axis=ax), back)


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice ``[start, start+length)`` along ``axis``."""
    ax = axis % x.ndim
    _check(0 <= start and start + length <= x.shape[ax], "narrow", x.shape, (start, length))
    index = [slice(None)] * x.ndim
    index[ax] = slice(start, start + length)
    index = tuple(index)

    def back(g):
        full = np.zeros_like(x.data)
        full[index] = g
        return (full,)

    return record_op("narrow", (x,), x.data[index], back)


def expand(x: Tensor, n: int) -> Tensor:
    """Repeat x along a new leading axis of length n."""
    out = np.broadcast_to(x.data, (n, *x.shape)).copy()
    return record_op("expand", (x,), out, lambda g: (g.sum(axis=0),))


def pad_channels(x: Tensor, channels: int) -> Tensor:
    """Zero-pad axis 1 of an (N, C, H, W) tensor up to ``channels``."""
    n, c, h, w = x.shape
    _check(c <= channels, "pad_channels", x.shape, (channels,))
    out = np.zeros((n, channels, h, w), dtype=x.dtype)
    out[:, :c] = x.data
    return record_op("pad_channels", (x,), out, lambda g: (g[:, :c],))


def sum_all(x: Tensor) -> Tensor:
    return record_op("sum", (x,), np.asarray(x.data.sum(), dtype=x.dtype), lambda g: (np.full_like(x.data, g),))


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size
    return record_op(
        "mean", (x,), np.asarray(x.data.sum() / n, dtype=x.dtype), lambda g: (np.full_like(x.data, g / n),)
    )


# ---------------------------------------------------------------- linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """(..., n, k) @ (k, m) or (..., n, k) @ (..., k, m) with identical leading axes."""
    _check(a.ndim >= 2 and b.ndim >= 2 and a.shape[-1] == b.shape[-2], "matmul", a.shape, b.shape)
    _check(b.ndim == 2 or a.shape[:-2] == b.shape[:-2], "matmul", a.shape, b.shape)
    ad, bd = a.data, b.data

    def back(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        if bd.ndim == 2:
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return record_op("matmul", (a, b), ad @ bd, back)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x @ w (+ b); w is (in, out)."""
    y = matmul(x, w)
    return add(y, b) if b is not None else y


# ---------------------------------------------------------------- normalization


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply the per-feature affine."""
    if eps <= 0:
        raise ValueError("layer_norm eps must be > 0")
    d = x.shape[-1]
    _check(gamma.shape == (d,) and beta.shape == (d,), "layer_norm", x.shape, gamma.shape)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + x.dtype.type(eps))
    xhat = xc * inv
    gd = gamma.data

    def back(g):
        lead = g.ndim - 1
        ggamma = (g * xhat).sum(axis=tuple(range(lead)))
        gbeta = g.sum(axis=tuple(range(lead)))
        gx_hat = g * gd
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True) - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        return gx, ggamma, gbeta

    return record_op("layer_norm", (x, gamma, beta), xhat * gd + beta.data, back)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return record_op("softmax", (x,), y, back)


# ---------------------------------------------------------------- attention


def multi_head_attention(q: Tensor, k: Tensor, v: Tensor, heads: int) -> Tensor:
    """Scaled dot-product attention over (B, T, D) inputs split into ``heads`` heads."""
    _check(q.shape == k.shape == v.shape and q.ndim == 3, "multi_head_attention", q.shape, k.shape)
    bsz, t, d = q.shape
    if d % heads:
        raise ShapeMismatch(f"multi_head_attention: width {d} not divisible by {heads} heads")
    dh = d // heads
    s = q.dtype.type(1.0 / math.sqrt(dh))

    def split(a):
        return a.reshape(bsz, t, heads, dh).transpose(0, 2, 1, 3)

    def merge(a):
        return a.transpose(0, 2, 1, 3).reshape(bsz, t, d)

    qh, kh, vh = split(q.data), split(k.data), split(v.data)
    scores = (qh @ kh.transpose(0, 1, 3, 2)) * s
    scores = scores - scores.max(axis=-1, keepdims=True)
    p = np.exp(scores)
    p /= p.sum(axis=-1, keepdims=True)
    out = merge(p @ vh)

    def back(g):
        gh = split(g)
        gv = p.transpose(0, 1, 3, 2) @ gh
        gp = gh @ vh.transpose(0, 1, 3, 2)
        gs = p * (gp - (gp * p).sum(axis=-1, keepdims=True)) * s
        gq = gs @ kh
        gk = gs.transpose(0, 1, 3, 2) @ qh
        return merge(gq), merge(gk), merge(gv)

    return record_op("multi_head_attention", (q, k, v), out, back)


# ---------------------------------------------------------------- convolution and pooling


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """(N, C, Ho, Wo, kh, kw) strided view of a padded (N, C, H, W) array."""
    return sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of (N, C, H, W) input with (O, C, kh, kw) kernels, zero padding."""
    _check(x.ndim == 4 and w.ndim == 4 and x.shape[1] == w.shape[1], "conv2d", x.shape, w.shape)
    if b is not None:
        _check(b.shape == (w.shape[0],), "conv2d", w.shape, b.shape)
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    _check(h + 2 * pad >= kh and wd + 2 * pad >= kw, "conv2d", x.shape, w.shape)
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    win = _windows(xp, kh, kw, stride)
    ho, wo = win.shape[2], win.shape[3]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    wmat = w.data.reshape(o, c * kh * kw)
    out = cols @ wmat.T
    if b is not None:
        out = out + b.data
    out = out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2)

    def back(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, o)
        gw = (gmat.T @ cols).reshape(w.shape)
        gcols = (gmat @ wmat).reshape(n, ho, wo, c, kh, kw)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += gcols[:, :, :, :, i, j].transpose(
                    0, 3, 1, 2
                )
        gx = gxp[:, :, pad : pad + h, pad : pad + wd] if pad else gxp
        grads = [gx, gw]
        if b is not None:
            grads.append(gmat.sum(axis=0))
        return grads

    inputs = (x, w) if b is None else (x, w, b)
    return record_op("conv2d", inputs, np.ascontiguousarray(out), back)


def avg_pool2d(x: Tensor, k: int, stride: int | None = None) -> Tensor:
    stride = stride or k
    _check(x.ndim == 4 and x.shape[2] >= k and x.shape[3] >= k, "avg_pool2d", x.shape, (k, k))
    win = _windows(x.data, k, k, stride)
    ho, wo = win.shape[2], win.shape[3]
    out = win.mean(axis=(4, 5))

    def back(g):
        gx = np.zeros_like(x.data)
        share = g / (k * k)
        for i in range(k):
            for j in range(k):
                gx[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += share
        return (gx,)

    return record_op("avg_pool2d", (x,), out.astype(x.dtype), back)


def global_avg_pool(x: Tensor) -> Tensor:
    """(N, C, H, W) -> (N, C)."""
    _check(x.ndim == 4, "global_avg_pool", x.shape, ("N", "C", "H", "W"))
    n, c, h, w = x.shape
    return record_op(
        "global_avg_pool",
        (x,),
        x.data.mean(axis=(2, 3)),
        lambda g: (np.broadcast_to(g[:, :, None, None] / (h * w), x.shape).copy(),),
    )


def scale_channels(x: Tensor, s: Tensor) -> Tensor:
    """Multiply each (N, C) channel plane of x by the matching entry of s."""
    _check(x.ndim == 4 and s.shape == x.shape[:2], "scale_channels", x.shape, s.shape)
    xd, sd = x.data, s.data
    return record_op(
        "scale_channels",
        (x, s),
        xd * sd[:, :, None, None],
        lambda g: (g * sd[:, :, None, None], (g * xd).sum(axis=(2, 3))),
    )


# ---------------------------------------------------------------- loss


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean softmax cross-entropy of (N, K) logits against integer labels."""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    _check(logits.ndim == 2 and logits.shape[0] == labels.shape[0], "cross_entropy", logits.shape, labels.shape)
    n, k = logits.shape
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in [0, {k})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsum
    loss = -logp[np.arange(n), labels].mean()

    def back(g):
        p = np.exp(logp)
        p[np.arange(n), labels] -= 1
        return (p * (g / n),)

    return record_op("cross_entropy", (logits,), np.asarray(loss, dtype=logits.dtype), back)
