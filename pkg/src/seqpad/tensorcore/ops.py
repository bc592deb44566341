"""Differentiable operators over :class:`Tensor`.

Image tensors are channel-last (N, H, W, C). Convolutions use "same" zero
padding with the TensorFlow split (extra row/column at the bottom/right).
"""

from __future__ import annotations

import builtins
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, as_tensor


class ShapeError(ValueError):
    pass


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# -- elementwise arithmetic ---------------------------------------------------

def _is_scalar(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def add(a, b) -> Tensor:
    if _is_scalar(b):
        a = as_tensor(a)
        return Tensor._from_op(a.data + b, (a,), lambda g: (g,), "add")
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._from_op(a.data + b.data, (a, b), back, "add")


def sub(a, b) -> Tensor:
    if _is_scalar(b):
        return add(a, -b)
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor._from_op(a.data - b.data, (a, b), back, "sub")


def mul(a, b) -> Tensor:
    if _is_scalar(b):
        a = as_tensor(a)
        return Tensor._from_op(a.data * b, (a,), lambda g: (g * b,), "mul")
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor._from_op(a.data * b.data, (a, b), back, "mul")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return Tensor._from_op(-a.data, (a,), lambda g: (-g,), "neg")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return Tensor._from_op(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    return Tensor._from_op(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0  # derivative at exactly 0 is 0
    return Tensor._from_op(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = np.empty_like(a.data)
    pos = a.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    e = np.exp(a.data[~pos])
    out[~pos] = e / (1.0 + e)
    return Tensor._from_op(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return Tensor._from_op(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


# -- reductions and shape ops -------------------------------------------------

def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor._from_op(np.asarray(out), (a,), back, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return Tensor._from_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    inv = None if axes is None else np.argsort(axes)
    return Tensor._from_op(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def getitem(a, index) -> Tensor:
    a = as_tensor(a)

    def back(g):
        full = np.zeros_like(a.data)
        if _needs_add_at(index):
            np.add.at(full, index, g)
        else:
            full[index] = g
        return (full,)

    return Tensor._from_op(a.data[index], (a,), back, "getitem")


def _needs_add_at(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return builtins.any(isinstance(i, (list, np.ndarray)) for i in items)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor._from_op(np.concatenate([t.data for t in tensors], axis=axis), tensors, back, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]

    def back(g):
        return tuple(np.moveaxis(g, axis, 0))

    return Tensor._from_op(np.stack([t.data for t in tensors], axis=axis), tensors, back, "stack")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != b.shape[0 if b.ndim == 1 else -2]:
        raise ShapeError(f"matmul shapes {a.shape} and {b.shape} do not align")

    def back(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        if a.ndim > 2 and b.ndim == 2:
            gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return Tensor._from_op(a.data @ b.data, (a, b), back, "matmul")


# -- layers -------------------------------------------------------------------

def dense(x, weight, bias=None) -> Tensor:
    x, weight = as_tensor(x), as_tensor(weight)
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"dense input has {x.shape[-1]} features, weight expects {weight.shape[0]}")
    out = matmul(x, weight)
    return out if bias is None else add(out, bias)


def _same_padding(size: int, k: int, stride: int):
    out = -(-size // stride)
    total = builtins.max((out - 1) * stride + k - size, 0)
    return out, total // 2, total - total // 2


def _pad_same(x: np.ndarray, kh: int, kw: int, stride: int):
    ho, pt, pb = _same_padding(x.shape[1], kh, stride)
    wo, pl, pr = _same_padding(x.shape[2], kw, stride)
    xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0))) if (pt or pb or pl or pr) else x
    return xp, ho, wo, (pt, pl)


def conv2d(x, weight, bias=None, stride: int = 1) -> Tensor:
    """Standard convolution. ``weight`` has shape (kh, kw, c_in, c_out)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4 or x.shape[-1] != weight.shape[2]:
        raise ShapeError(f"conv2d got input {x.shape} and kernel {weight.shape}")
    kh, kw, cin, cout = weight.shape
    xp, ho, wo, (pt, pl) = _pad_same(x.data, kh, kw, stride)
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride][:, :ho, :wo]
    # win: (N, ho, wo, cin, kh, kw)
    w_t = weight.data.transpose(2, 0, 1, 3)  # (cin, kh, kw, cout)
    out = np.tensordot(win, w_t, axes=([3, 4, 5], [0, 1, 2]))

    def back(g):
        gw = np.tensordot(win, g, axes=([0, 1, 2], [0, 1, 2])).transpose(1, 2, 0, 3)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += g @ weight.data[i, j].T
        gx = gxp[:, pt:pt + x.shape[1], pl:pl + x.shape[2], :]
        return gx, gw

    out_t = Tensor._from_op(out, (x, weight), back, "conv2d")
    return out_t if bias is None else add(out_t, bias)


def depthwise_conv2d(x, weight, bias=None, stride: int = 1) -> Tensor:
    """Per-channel convolution. ``weight`` has shape (kh, kw, channels)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 3 or x.shape[-1] != weight.shape[2]:
        raise ShapeError(f"depthwise_conv2d got input {x.shape} and kernel {weight.shape}")
    kh, kw, _ = weight.shape
    xp, ho, wo, (pt, pl) = _pad_same(x.data, kh, kw, stride)
    out = np.zeros((x.shape[0], ho, wo, x.shape[3]), dtype=x.data.dtype)
    for i in range(kh):
        for j in range(kw):
            out += xp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] * weight.data[i, j]

    def back(g):
        gw = np.empty_like(weight.data)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                sl = (slice(None), slice(i, i + stride * ho, stride), slice(j, j + stride * wo, stride))
                gw[i, j] = np.einsum("nhwc,nhwc->c", xp[sl], g)
                gxp[sl] += g * weight.data[i, j]
        return gxp[:, pt:pt + x.shape[1], pl:pl + x.shape[2], :], gw

    out_t = Tensor._from_op(out, (x, weight), back, "depthwise_conv2d")
    return out_t if bias is None else add(out_t, bias)


def pointwise_conv2d(x, weight, bias=None) -> Tensor:
    """1x1 convolution; ``weight`` has shape (c_in, c_out)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 2 or x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"pointwise_conv2d got input {x.shape} and kernel {weight.shape}")
    return dense(x, weight, bias)


def batch_norm(x, gamma, beta, running_mean: np.ndarray, running_var: np.ndarray,
               training: bool, momentum: float = 0.9, eps: float = 1e-5) -> Tensor:
    """Normalize over every axis but the last.

    In training mode batch statistics are used and the running arrays are
    updated in place; in eval mode the running statistics give a fixed
    affine map.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if not training:
        scale = gamma.data / np.sqrt(running_var + eps)
        xhat = (x.data - running_mean) / np.sqrt(running_var + eps)

        def back_eval(g):
            return (g * scale, _unbroadcast(g * xhat, gamma.shape), _unbroadcast(g, beta.shape))

        return Tensor._from_op(xhat * gamma.data + beta.data, (x, gamma, beta), back_eval, "batch_norm")

    c = x.shape[-1]
    x2 = x.data.reshape(-1, c)
    n = x2.shape[0]
    mu = x2.mean(axis=0)
    centered = x2 - mu
    var = np.einsum("ij,ij->j", centered, centered) / n
    invstd = 1.0 / np.sqrt(var + eps)
    xhat = centered * invstd
    running_mean *= momentum
    running_mean += (1.0 - momentum) * mu
    running_var *= momentum
    running_var += (1.0 - momentum) * var
    out = (xhat * gamma.data + beta.data).reshape(x.shape)

    def back(g):
        g2 = g.reshape(-1, c)
        g_beta = g2.sum(axis=0)
        g_gamma = np.einsum("ij,ij->j", g2, xhat)
        gx = (gamma.data * invstd) * (g2 - (g_beta + xhat * g_gamma) / n)
        return gx.reshape(x.shape), g_gamma, g_beta

    return Tensor._from_op(out, (x, gamma, beta), back, "batch_norm")


def avg_pool_global(x) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"avg_pool_global expects (N, H, W, C), got {x.shape}")
    return mean(x, axis=(1, 2))


def dropout(x, rate: float, training: bool, rng: Optional[np.random.Generator] = None) -> Tensor:
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    x = as_tensor(x)
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs an explicit rng")
    mask = ((rng.random(x.shape) >= rate) / (1.0 - rate)).astype(x.data.dtype)
    return Tensor._from_op(x.data * mask, (x,), lambda g: (g * mask,), "dropout")


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return Tensor._from_op(s, (x,), back, "softmax")


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    s = np.exp(out)

    def back(g):
        return (g - s * g.sum(axis=axis, keepdims=True),)

    return Tensor._from_op(out, (x,), back, "log_softmax")


def bce_loss(probs, targets) -> Tensor:
    """Cross entropy ``-sum(y * log p)`` over the class axis, averaged over the batch."""
    probs = as_tensor(probs)
    y = np.asarray(targets.data if isinstance(targets, Tensor) else targets, dtype=probs.data.dtype)
    if y.shape != probs.shape:
        raise ShapeError(f"targets {y.shape} do not match probabilities {probs.shape}")
    p = np.clip(probs.data, 1e-300, None)
    batch = probs.shape[0]
    loss = -(y * np.log(p)).sum() / batch
    return Tensor._from_op(np.asarray(loss), (probs,), lambda g: (-g * y / (p * batch),), "bce_loss")


def cross_entropy_logits(logits, targets) -> Tensor:
    """Same quantity as ``bce_loss(softmax(logits), targets)``, computed stably."""
    y = np.asarray(targets, dtype=as_tensor(logits).data.dtype)
    lp = log_softmax(logits, axis=-1)
    return mul(sum(mul(lp, y)), -1.0 / y.shape[0])


# -- recurrent ----------------------------------------------------------------

def lstm_cell(x, h, c, w_x, w_h, b):
    """One LSTM step; gates are packed (input, forget, cell, output).

    Returns ``(h_next, c_next)``. ``x`` may be a precomputed input
    projection when ``w_x`` is ``None``.
    """
    z = matmul(h, w_h)
    z = add(z, x if w_x is None else matmul(x, w_x))
    z = add(z, b)
    u = as_tensor(h).shape[-1]
    i = sigmoid(getitem(z, (slice(None), slice(0, u))))
    f = sigmoid(getitem(z, (slice(None), slice(u, 2 * u))))
    g = tanh(getitem(z, (slice(None), slice(2 * u, 3 * u))))
    o = sigmoid(getitem(z, (slice(None), slice(3 * u, 4 * u))))
    c_next = add(mul(f, c), mul(i, g))
    h_next = mul(o, tanh(c_next))
    return h_next, c_next


def lstm(xs, w_x, w_h, b, reverse: bool = False) -> Tensor:
    """Run an LSTM over (N, T, D) input and return the final hidden state."""
    xs = as_tensor(xs)
    if xs.ndim != 3:
        raise ShapeError(f"lstm expects (N, T, D), got {xs.shape}")
    n, t_len, d = xs.shape
    units = as_tensor(w_h).shape[0]
    proj = reshape(matmul(reshape(xs, (n * t_len, d)), w_x), (n, t_len, 4 * units))
    h = Tensor(np.zeros((n, units), dtype=xs.data.dtype))
    c = Tensor(np.zeros((n, units), dtype=xs.data.dtype))
    steps = range(t_len - 1, -1, -1) if reverse else range(t_len)
    for t in steps:
        h, c = lstm_cell(getitem(proj, (slice(None), t)), h, c, None, w_h, b)
    return h


def bidirectional_wrap(xs, forward_params, backward_params) -> Tensor:
    """Concatenate final states of a forward-time and a reversed-time LSTM."""
    h_f = lstm(xs, *forward_params)
    h_b = lstm(xs, *backward_params, reverse=True)
    return concat([h_f, h_b], axis=-1)
