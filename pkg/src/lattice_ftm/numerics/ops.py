"""Differentiable kernels used by the lattice models.

Every function takes tensors or arrays and returns a :class:`Tensor`.
Constant arguments (masks, validity vectors, labels) are plain arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, as_tensor, make_result, unbroadcast

PROB_EPS = 1e-7


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_result(a.data + b.data, (a, b),
                       lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return make_result(a.data * b.data, (a, b),
                       lambda g: (unbroadcast(g * b.data, a.shape),
                                  unbroadcast(g * a.data, b.shape)))


def matmul(a, b) -> Tensor:
    """Batched matrix product with numpy broadcasting of leading dims."""
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return make_result(np.matmul(a.data, b.data), (a, b), backward)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return make_result(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    inverse = np.argsort(axes)
    return make_result(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),))


def total(a) -> Tensor:
    a = as_tensor(a)
    return make_result(np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    on = a.data > 0  # subgradient 0 at 0
    # np.maximum keeps NaN visible to divergence checks
    return make_result(np.maximum(a.data, 0.0), (a,), lambda g: (g * on,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    # split by sign so exp never overflows
    ex = np.exp(-np.abs(x))
    s = np.where(x >= 0, 1.0 / (1.0 + ex), ex / (1.0 + ex))
    return make_result(s, (a,), lambda g: (g * s * (1.0 - s),))


def masked_row_softmax(logits, mask) -> Tensor:
    """Softmax over the last axis restricted to entries where ``mask`` is nonzero.

    Masked-out entries are exactly zero. ``mask`` broadcasts against
    ``logits``; a row with no allowed entry is a contract violation.
    """
    logits = as_tensor(logits)
    allowed = np.broadcast_to(np.asarray(mask) != 0, logits.shape)
    if not allowed.any(axis=-1).all():
        raise ValueError("masked_row_softmax: a mask row has no allowed entry")
    z = np.where(allowed, logits.data, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.where(allowed, np.exp(z), 0.0)
    p = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return make_result(p, (logits,), backward)


def masked_mean_pool(h, valid) -> Tensor:
    """Mean over the arc axis (second to last) of rows with ``valid`` = 1.

    ``h`` is (..., N, C) and ``valid`` is (..., N).
    """
    h = as_tensor(h)
    v = np.asarray(valid, dtype=np.float64)
    counts = v.sum(axis=-1)
    if np.any(counts == 0):
        raise ValueError("masked_mean_pool: no valid rows")
    w = (v / counts[..., None])[..., None]
    return make_result((h.data * w).sum(axis=-2), (h,),
                       lambda g: (np.expand_dims(g, -2) * w,))


def bce_loss(p, y) -> Tensor:
    """Mean binary cross-entropy; probabilities are clamped to [1e-7, 1 - 1e-7]."""
    p = as_tensor(p)
    y = np.asarray(y, dtype=np.float64)
    inside = (p.data >= PROB_EPS) & (p.data <= 1.0 - PROB_EPS)
    q = np.clip(p.data, PROB_EPS, 1.0 - PROB_EPS)
    losses = -(y * np.log(q) + (1.0 - y) * np.log(1.0 - q))
    n = losses.size

    def backward(g):
        return (g * inside * (-(y / q) + (1.0 - y) / (1.0 - q)) / n,)

    return make_result(np.asarray(losses.mean()), (p,), backward)


@dataclass
class BatchNormState:
    """Running statistics of one batch-norm site; scale/shift live in Parameters."""

    channels: int
    momentum: float = 0.1
    epsilon: float = 1e-5
    running_mean: np.ndarray = field(default=None)
    running_var: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.running_mean is None:
            self.running_mean = np.zeros(self.channels)
        if self.running_var is None:
            self.running_var = np.ones(self.channels)


def batch_norm(h, scale, shift, state: BatchNormState, training: bool, valid=None) -> Tensor:
    """Per-channel batch normalization over all valid rows of ``h`` (..., C).

    Padded rows (``valid`` = 0) are excluded from the statistics and come out as
    zero. The variance is the biased 1/M estimator, also for the running value.
    """
    h, scale, shift = as_tensor(h), as_tensor(scale), as_tensor(shift)
    x = h.data
    if valid is None:
        m = np.ones(x.shape[:-1] + (1,))
    else:
        m = np.asarray(valid, dtype=np.float64)[..., None]
    axes = tuple(range(x.ndim - 1))
    count = m.sum()
    if count < 1:
        raise ValueError("batch_norm: no valid rows")

    if training:
        mean = (x * m).sum(axis=axes) / count
        centered = (x - mean) * m
        var = (centered ** 2).sum(axis=axes) / count
        state.running_mean = (1 - state.momentum) * state.running_mean + state.momentum * mean
        state.running_var = (1 - state.momentum) * state.running_var + state.momentum * var
    else:
        mean, var = state.running_mean, state.running_var
        centered = (x - mean) * m
    inv_std = 1.0 / np.sqrt(var + state.epsilon)
    xhat = centered * inv_std
    out = (xhat * scale.data + shift.data) * m

    def backward(g):
        g = g * m
        gscale = (g * xhat).sum(axis=axes)
        gshift = g.sum(axis=axes)
        dxhat = g * scale.data
        if training:
            gx = (inv_std / count) * (count * dxhat - dxhat.sum(axis=axes)
                                      - xhat * (dxhat * xhat).sum(axis=axes)) * m
        else:
            gx = dxhat * inv_std
        return gx, gscale, gshift

    return make_result(out, (h, scale, shift), backward)


def layer_norm(h, scale, shift, epsilon: float = 1e-5) -> Tensor:
    """Normalize each row of ``h`` over its channel axis, then scale and shift."""
    h, scale, shift = as_tensor(h), as_tensor(scale), as_tensor(shift)
    x = h.data
    c = x.shape[-1]
    mean = x.mean(axis=-1, keepdims=True)
    centered = x - mean
    inv_std = 1.0 / np.sqrt((centered ** 2).mean(axis=-1, keepdims=True) + epsilon)
    xhat = centered * inv_std
    axes = tuple(range(x.ndim - 1))

    def backward(g):
        dxhat = g * scale.data
        gx = (inv_std / c) * (c * dxhat - dxhat.sum(axis=-1, keepdims=True)
                              - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True))
        return gx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return make_result(xhat * scale.data + shift.data, (h, scale, shift), backward)
