"""Differentiable primitives.

Each forward returns its output plus whatever the matching ``*_backward``
needs. All arrays are float64; leading axes are treated as batch axes.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit as sigmoid

from ..errors import DegenerateBatch, LayerShapeMismatch

BN_MOMENTUM = 0.99
BN_EPS = 1e-5
LN_EPS = 1e-5


# -- LSTM ----------------------------------------------------------------------
# Gate order along the last axis of the pre-activation: input, forget, cell, output.

def lstm_gates(z, c_prev):
    u = c_prev.shape[-1]
    s = sigmoid(z)
    i, f, o = s[..., :u], s[..., u:2 * u], s[..., 3 * u:]
    g = np.tanh(z[..., 2 * u:3 * u])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    return h, c, (i, f, g, o, c_prev, tc)


def lstm_gates_backward(dh, dc, cache):
    """Returns ``(dz, dc_prev)`` given gradients on ``h`` and ``c``."""
    i, f, g, o, c_prev, tc = cache
    do = dh * tc
    dc = dc + dh * o * (1.0 - tc * tc)
    dz = np.concatenate([
        dc * g * i * (1.0 - i),
        dc * c_prev * f * (1.0 - f),
        dc * i * (1.0 - g * g),
        do * o * (1.0 - o),
    ], axis=-1)
    return dz, dc * f


def lstm_cell(x, h, c, kernel, recurrent, bias):
    """One LSTM step: ``(h', c')`` from input ``x`` and state ``(h, c)``."""
    x, h, c = np.asarray(x, float), np.asarray(h, float), np.asarray(c, float)
    u = recurrent.shape[0]
    if (kernel.shape != (x.shape[-1], 4 * u) or recurrent.shape != (u, 4 * u)
            or bias.shape != (4 * u,) or h.shape[-1] != u or c.shape[-1] != u):
        raise LayerShapeMismatch(
            f"lstm_cell shapes: x {x.shape}, h {h.shape}, c {c.shape}, kernel {kernel.shape}, "
            f"recurrent {recurrent.shape}, bias {bias.shape}")
    z = x @ kernel + h @ recurrent + bias
    h2, c2, gate_cache = lstm_gates(z, c)
    return h2, c2, (x, h, gate_cache)


def lstm_cell_backward(dh, dc, cache, kernel, recurrent):
    """Gradients ``(dx, dh_prev, dc_prev, dkernel, drecurrent, dbias)`` for one step."""
    x, h, gate_cache = cache
    dz, dc_prev = lstm_gates_backward(dh, dc, gate_cache)
    x2 = x.reshape(-1, x.shape[-1])
    h2 = h.reshape(-1, h.shape[-1])
    dz2 = dz.reshape(-1, dz.shape[-1])
    return (dz @ kernel.T, dz @ recurrent.T, dc_prev,
            x2.T @ dz2, h2.T @ dz2, dz2.sum(axis=0))


# -- normalization -------------------------------------------------------------

def batchnorm(x, gamma, beta, moving_mean, moving_var, mode, momentum=BN_MOMENTUM, eps=BN_EPS):
    """Per-channel (last axis) batch normalization over every other axis.

    Returns ``(y, cache, (new_mean, new_var))``; the running statistics are
    returned rather than written so parameters stay immutable.
    """
    c = x.shape[-1]
    flat = x.reshape(-1, c)
    if mode == "train":
        if flat.shape[0] < 2:
            raise DegenerateBatch(f"batch norm needs >= 2 values per channel, got {flat.shape[0]}")
        mean = flat.mean(axis=0)
        var = flat.var(axis=0)
        stats = (momentum * moving_mean + (1 - momentum) * mean,
                 momentum * moving_var + (1 - momentum) * var)
    else:
        mean, var = moving_mean, moving_var
        stats = (moving_mean, moving_var)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * inv
    return gamma * xhat + beta, (xhat, inv, gamma, mode), stats


def batchnorm_backward(dy, cache):
    """Gradients ``(dx, dgamma, dbeta)``."""
    xhat, inv, gamma, mode = cache
    c = dy.shape[-1]
    dyf = dy.reshape(-1, c)
    xf = xhat.reshape(-1, c)
    dgamma = (dyf * xf).sum(axis=0)
    dbeta = dyf.sum(axis=0)
    dxhat = dyf * gamma
    if mode == "train":
        n = dyf.shape[0]
        dx = inv / n * (n * dxhat - dxhat.sum(axis=0) - xf * (dxhat * xf).sum(axis=0))
    else:
        dx = dxhat * inv
    return dx.reshape(dy.shape), dgamma, dbeta


def layernorm(x, gamma, beta, eps=LN_EPS):
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * inv
    return gamma * xhat + beta, (xhat, inv, gamma)


def layernorm_backward(dy, cache):
    xhat, inv, gamma = cache
    d = dy.shape[-1]
    dxhat = dy * gamma
    dx = inv / d * (d * dxhat - dxhat.sum(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True))
    lead = tuple(range(dy.ndim - 1))
    return dx, (dy * xhat).sum(axis=lead), dy.sum(axis=lead)


# -- dropout / dense / loss ----------------------------------------------------

def dropout(x, rate, mode, rng=None):
    """Inverted dropout. Returns ``(y, mask)``; mask is None when inactive."""
    if mode != "train" or rate == 0:
        return x, None
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * mask, mask


def dropout_backward(dy, mask):
    return dy if mask is None else dy * mask


def dense(x, w, b, activation="none"):
    if x.shape[-1] != w.shape[0] or b.shape != (w.shape[1],):
        raise LayerShapeMismatch(f"dense: input {x.shape} vs kernel {w.shape}, bias {b.shape}")
    z = x @ w + b
    y = np.maximum(z, 0.0) if activation == "relu" else z
    return y, (x, z, activation)


def dense_backward(dy, cache, w):
    """Gradients ``(dx, dw, db)``."""
    x, z, activation = cache
    if activation == "relu":
        dy = dy * (z > 0)
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    return dy @ w.T, x2.T @ dy2, dy2.sum(axis=0)


def log_softmax(logits):
    m = logits.max(axis=-1, keepdims=True)
    s = logits - m
    return s - np.log(np.exp(s).sum(axis=-1, keepdims=True))


def softmax(logits):
    return np.exp(log_softmax(logits))


def softmax_crossentropy(logits, target):
    """Mean cross-entropy and its gradient wrt ``logits``.

    ``logits`` may be a single vector with an int target, or (B, C) with a
    length-B target array.
    """
    logits = np.asarray(logits, dtype=np.float64)
    single = logits.ndim == 1
    z = logits[None] if single else logits
    t = np.atleast_1d(np.asarray(target, dtype=np.int64))
    lsm = log_softmax(z)
    n = z.shape[0]
    loss = -lsm[np.arange(n), t].mean()
    grad = np.exp(lsm)
    grad[np.arange(n), t] -= 1.0
    grad /= n
    return float(loss), (grad[0] if single else grad)


# -- attention -----------------------------------------------------------------

def _split_heads(x, heads):
    b, t, d = x.shape
    return x.reshape(b, t, heads, d // heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    b, h, t, dk = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, h * dk)


def multihead_attention(x, wq, bq, wk, wv, bv, wo, bo, heads):
    """Scaled dot-product self-attention over the time axis of (B, T, D).

    Keys carry no bias: it would shift each score row by a constant, which
    the softmax cancels.
    """
    d = x.shape[-1]
    scale = 1.0 / np.sqrt(d // heads)
    q = _split_heads(x @ wq + bq, heads)
    k = _split_heads(x @ wk, heads)
    v = _split_heads(x @ wv + bv, heads)
    a = softmax(q @ k.transpose(0, 1, 3, 2) * scale)
    o = _merge_heads(a @ v)
    return o @ wo + bo, (x, q, k, v, a, o, scale, heads)


def multihead_attention_backward(dy, cache, wq, wk, wv, wo):
    """Gradients ``(dx, dwq, dbq, dwk, dwv, dbv, dwo, dbo)``."""
    x, q, k, v, a, o, scale, heads = cache
    d = x.shape[-1]
    x2 = x.reshape(-1, d)
    dy2 = dy.reshape(-1, dy.shape[-1])
    dwo = o.reshape(-1, d).T @ dy2
    dbo = dy2.sum(axis=0)
    do = _split_heads(dy @ wo.T, heads)
    da = do @ v.transpose(0, 1, 3, 2)
    dv = a.transpose(0, 1, 3, 2) @ do
    ds = a * (da - (da * a).sum(axis=-1, keepdims=True)) * scale
    dq = _merge_heads(ds @ k).reshape(-1, d)
    dk = _merge_heads(ds.transpose(0, 1, 3, 2) @ q).reshape(-1, d)
    dv = _merge_heads(dv).reshape(-1, d)
    dx = (dq @ wq.T + dk @ wk.T + dv @ wv.T).reshape(x.shape)
    return (dx, x2.T @ dq, dq.sum(axis=0), x2.T @ dk,
            x2.T @ dv, dv.sum(axis=0), dwo, dbo)


def sinusoidal_encoding(t, d):
    pos = np.arange(t)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


# -- convolution (channel-last, same padding, stride 1) --------------------------

def im2col(x, k):
    """(B, R, C, Ch) -> (B, R, C, k*k*Ch) patches, zero padded."""
    p = k // 2
    b, r, c, ch = x.shape
    xp = np.zeros((b, r + 2 * p, c + 2 * p, ch))
    xp[:, p:p + r, p:p + c] = x
    cols = np.empty((b, r, c, k, k, ch))
    for di in range(k):
        for dj in range(k):
            cols[:, :, :, di, dj] = xp[:, di:di + r, dj:dj + c]
    return cols.reshape(b, r, c, k * k * ch)


def col2im(dcols, k, ch):
    """Adjoint of :func:`im2col`."""
    p = k // 2
    b, r, c, _ = dcols.shape
    d = dcols.reshape(b, r, c, k, k, ch)
    dxp = np.zeros((b, r + 2 * p, c + 2 * p, ch))
    for di in range(k):
        for dj in range(k):
            dxp[:, di:di + r, dj:dj + c] += d[:, :, :, di, dj]
    return dxp[:, p:p + r, p:p + c]
