"""Layers built on :mod:`ops`.

A layer declares its parameters through :meth:`Layer.specs` and implements
``forward(params, x, ctx) -> (y, cache)`` and
``backward(params, dy, cache, grads) -> dx``. Parameters live in a flat
``{name: ndarray}`` mapping owned by the caller; layers never mutate it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ops
from ..errors import LayerShapeMismatch


@dataclass(frozen=True)
class ParamSpec:
    name: str
    shape: tuple
    init: str  # glorot | orthogonal | zeros | ones | forget_bias
    trainable: bool = True
    regularized: bool = False


@dataclass
class Context:
    """Per-call state: mode, dropout RNG, and updated running statistics."""

    mode: str = "infer"
    rng: np.random.Generator | None = None
    stats: dict = field(default_factory=dict)


def glorot_uniform(shape, rng):
    if len(shape) == 2:
        fan_in, fan_out = shape
    else:
        receptive = int(np.prod(shape[:-2]))
        fan_in, fan_out = receptive * shape[-2], receptive * shape[-1]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def orthogonal(shape, rng):
    """Matrix with orthonormal rows or columns (whichever is fewer)."""
    rows = int(np.prod(shape[:-1]))
    cols = shape[-1]
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return q.reshape(shape)


def initialize(spec: ParamSpec, rng) -> np.ndarray:
    if spec.init == "glorot":
        return glorot_uniform(spec.shape, rng)
    if spec.init == "orthogonal":
        return orthogonal(spec.shape, rng)
    if spec.init == "ones":
        return np.ones(spec.shape)
    if spec.init == "forget_bias":
        u = spec.shape[0] // 4
        b = np.zeros(spec.shape)
        b[u:2 * u] = 1.0
        return b
    return np.zeros(spec.shape)


class Layer:
    name = ""

    def specs(self) -> list:
        return []

    def forward(self, p, x, ctx):
        raise NotImplementedError

    def backward(self, p, dy, cache, g):
        raise NotImplementedError


def _acc(g, name, value):
    if name in g:
        g[name] = g[name] + value
    else:
        g[name] = value


def lstm_unroll(x, w, r, b):
    """Run D independent LSTMs at once.

    ``x`` is (D, B, T, F); ``w``, ``r``, ``b`` are stacked per direction with
    shapes (D, F, 4U), (D, U, 4U), (D, 4U). Returns the (D, B, T, U) hidden
    sequence and the cache for :func:`lstm_unroll_backward`.
    """
    d, bsz, t, _ = x.shape
    u = r.shape[1]
    zx = x @ w[:, None] + b[:, None, None]
    h = np.zeros((d, bsz, u))
    c = np.zeros((d, bsz, u))
    out = np.empty((d, bsz, t, u))
    steps = []
    for s in range(t):
        hp = h
        h, c, gc = ops.lstm_gates(zx[:, :, s] + hp @ r, c)
        out[:, :, s] = h
        steps.append((hp, gc))
    return out, (x, steps)


def lstm_unroll_backward(dout, cache, w, r):
    """Returns ``(dx, dw, dr, db)`` matching :func:`lstm_unroll`."""
    x, steps = cache
    d, bsz, t, f = x.shape
    u = r.shape[1]
    dz_all = np.empty((d, bsz, t, 4 * u))
    dr = np.zeros_like(r)
    dh = np.zeros((d, bsz, u))
    dc = np.zeros((d, bsz, u))
    rt = r.transpose(0, 2, 1)
    for s in range(t - 1, -1, -1):
        hp, gc = steps[s]
        dz, dc = ops.lstm_gates_backward(dout[:, :, s] + dh, dc, gc)
        dz_all[:, :, s] = dz
        dr += hp.transpose(0, 2, 1) @ dz
        dh = dz @ rt
    dz2 = dz_all.reshape(d, -1, 4 * u)
    dw = x.reshape(d, -1, f).transpose(0, 2, 1) @ dz2
    dx = dz_all @ w.transpose(0, 2, 1)[:, None]
    return dx, dw, dr, dz2.sum(axis=1)


class BiLSTM(Layer):
    """Forward and time-reversed LSTMs with independent weights, concatenated.

    With ``return_sequence`` the output is (B, T, 2U); otherwise it is the
    pair of final states ``[h_fwd(T), h_bwd(1)]``.
    """

    DIRECTIONS = ("fwd", "bwd")

    def __init__(self, name, n_in, units, return_sequence):
        self.name, self.n_in, self.units = name, n_in, units
        self.return_sequence = return_sequence

    def specs(self):
        u, out = self.units, []
        for d in self.DIRECTIONS:
            p = f"{self.name}.{d}"
            out += [ParamSpec(f"{p}.kernel", (self.n_in, 4 * u), "glorot", regularized=True),
                    ParamSpec(f"{p}.recurrent", (u, 4 * u), "orthogonal"),
                    ParamSpec(f"{p}.bias", (4 * u,), "forget_bias")]
        return out

    def _stack(self, p, kind):
        return np.stack([p[f"{self.name}.{d}.{kind}"] for d in self.DIRECTIONS])

    def forward(self, p, x, ctx):
        w, r, b = self._stack(p, "kernel"), self._stack(p, "recurrent"), self._stack(p, "bias")
        out, cache = lstm_unroll(np.stack([x, x[:, ::-1]]), w, r, b)
        of, ob = out[0], out[1][:, ::-1]
        if self.return_sequence:
            y = np.concatenate([of, ob], axis=-1)
        else:
            y = np.concatenate([of[:, -1], ob[:, 0]], axis=-1)
        return y, (cache, w, r, x.shape)

    def backward(self, p, dy, cache, g):
        cache, w, r, shape = cache
        u = self.units
        if self.return_sequence:
            dof, dob = dy[..., :u], dy[..., u:]
        else:
            dof = np.zeros(shape[:2] + (u,))
            dob = np.zeros(shape[:2] + (u,))
            dof[:, -1] = dy[:, :u]
            dob[:, 0] = dy[:, u:]
        dx, dw, dr, db = lstm_unroll_backward(np.stack([dof, dob[:, ::-1]]), cache, w, r)
        for i, d in enumerate(self.DIRECTIONS):
            _acc(g, f"{self.name}.{d}.kernel", dw[i])
            _acc(g, f"{self.name}.{d}.recurrent", dr[i])
            _acc(g, f"{self.name}.{d}.bias", db[i])
        return dx[0] + dx[1][:, ::-1]


def bilstm_layer(seq, params, return_sequence=False, name="bilstm"):
    """Single (T, F) sequence through a :class:`BiLSTM` whose weights live in ``params``.

    Keys follow ``{name}.{fwd|bwd}.{kernel,recurrent,bias}``. Returns (T, 2U)
    or (2U,).
    """
    seq = np.asarray(seq, dtype=np.float64)
    kernel = params.get(f"{name}.fwd.kernel")
    if seq.ndim != 2 or seq.shape[0] < 1 or kernel is None or kernel.shape[0] != seq.shape[1]:
        raise LayerShapeMismatch(f"bilstm_layer expects a (T>=1, F) sequence matching {name}.fwd.kernel")
    layer = BiLSTM(name, seq.shape[1], params[f"{name}.fwd.recurrent"].shape[0], return_sequence)
    y, _ = layer.forward(params, seq[None], Context("infer"))
    return y[0]


class BatchNorm(Layer):
    def __init__(self, name, channels):
        self.name, self.channels = name, channels

    def specs(self):
        n, c = self.name, (self.channels,)
        return [ParamSpec(f"{n}.gamma", c, "ones"), ParamSpec(f"{n}.beta", c, "zeros"),
                ParamSpec(f"{n}.moving_mean", c, "zeros", trainable=False),
                ParamSpec(f"{n}.moving_var", c, "ones", trainable=False)]

    def forward(self, p, x, ctx):
        n = self.name
        y, cache, (mm, mv) = ops.batchnorm(x, p[f"{n}.gamma"], p[f"{n}.beta"],
                                           p[f"{n}.moving_mean"], p[f"{n}.moving_var"], ctx.mode)
        if ctx.mode == "train":
            ctx.stats[f"{n}.moving_mean"] = mm
            ctx.stats[f"{n}.moving_var"] = mv
        return y, cache

    def backward(self, p, dy, cache, g):
        dx, dgamma, dbeta = ops.batchnorm_backward(dy, cache)
        _acc(g, f"{self.name}.gamma", dgamma)
        _acc(g, f"{self.name}.beta", dbeta)
        return dx


class Dropout(Layer):
    def __init__(self, rate):
        self.rate = rate

    def forward(self, p, x, ctx):
        return ops.dropout(x, self.rate, ctx.mode, ctx.rng)

    def backward(self, p, dy, mask, g):
        return ops.dropout_backward(dy, mask)


class Dense(Layer):
    def __init__(self, name, n_in, n_out, activation="none", regularized=False):
        self.name, self.n_in, self.n_out = name, n_in, n_out
        self.activation, self.regularized = activation, regularized

    def specs(self):
        return [ParamSpec(f"{self.name}.kernel", (self.n_in, self.n_out), "glorot",
                          regularized=self.regularized),
                ParamSpec(f"{self.name}.bias", (self.n_out,), "zeros")]

    def forward(self, p, x, ctx):
        return ops.dense(x, p[f"{self.name}.kernel"], p[f"{self.name}.bias"], self.activation)

    def backward(self, p, dy, cache, g):
        dx, dw, db = ops.dense_backward(dy, cache, p[f"{self.name}.kernel"])
        _acc(g, f"{self.name}.kernel", dw)
        _acc(g, f"{self.name}.bias", db)
        return dx


class PositionalEncoding(Layer):
    def forward(self, p, x, ctx):
        return x + ops.sinusoidal_encoding(x.shape[1], x.shape[2]), None

    def backward(self, p, dy, cache, g):
        return dy


class MeanPool(Layer):
    """Average over the time axis."""

    def forward(self, p, x, ctx):
        return x.mean(axis=1), x.shape[1]

    def backward(self, p, dy, t, g):
        return np.repeat(dy[:, None, :] / t, t, axis=1)


ATTN_PARAMS = ("wq", "bq", "wk", "wv", "bv", "wo", "bo")


class EncoderBlock(Layer):
    """Pre-norm encoder block: ``x + MHA(LN(x))`` then ``h + FFN(LN(h))``."""

    def __init__(self, name, dim, heads, ff):
        self.name, self.dim, self.heads, self.ff = name, dim, heads, ff

    def specs(self):
        n, d = self.name, self.dim
        out = [ParamSpec(f"{n}.ln1.gamma", (d,), "ones"), ParamSpec(f"{n}.ln1.beta", (d,), "zeros")]
        for proj in ("q", "k", "v", "o"):
            out.append(ParamSpec(f"{n}.attn.w{proj}", (d, d), "glorot", regularized=True))
            if proj != "k":
                out.append(ParamSpec(f"{n}.attn.b{proj}", (d,), "zeros"))
        out += [ParamSpec(f"{n}.ln2.gamma", (d,), "ones"), ParamSpec(f"{n}.ln2.beta", (d,), "zeros"),
                ParamSpec(f"{n}.ff1.kernel", (d, self.ff), "glorot", regularized=True),
                ParamSpec(f"{n}.ff1.bias", (self.ff,), "zeros"),
                ParamSpec(f"{n}.ff2.kernel", (self.ff, d), "glorot", regularized=True),
                ParamSpec(f"{n}.ff2.bias", (d,), "zeros")]
        return out

    def forward(self, p, x, ctx):
        n = self.name
        a, c_ln1 = ops.layernorm(x, p[f"{n}.ln1.gamma"], p[f"{n}.ln1.beta"])
        m, c_attn = ops.multihead_attention(
            a, *(p[f"{n}.attn.{k}"] for k in ATTN_PARAMS),
            heads=self.heads)
        h = x + m
        b, c_ln2 = ops.layernorm(h, p[f"{n}.ln2.gamma"], p[f"{n}.ln2.beta"])
        f1, c_f1 = ops.dense(b, p[f"{n}.ff1.kernel"], p[f"{n}.ff1.bias"], "relu")
        f2, c_f2 = ops.dense(f1, p[f"{n}.ff2.kernel"], p[f"{n}.ff2.bias"])
        return h + f2, (c_ln1, c_attn, c_ln2, c_f1, c_f2)

    def backward(self, p, dy, cache, g):
        n = self.name
        c_ln1, c_attn, c_ln2, c_f1, c_f2 = cache
        df1, dw, db = ops.dense_backward(dy, c_f2, p[f"{n}.ff2.kernel"])
        _acc(g, f"{n}.ff2.kernel", dw)
        _acc(g, f"{n}.ff2.bias", db)
        dbn, dw, db = ops.dense_backward(df1, c_f1, p[f"{n}.ff1.kernel"])
        _acc(g, f"{n}.ff1.kernel", dw)
        _acc(g, f"{n}.ff1.bias", db)
        dh_ln, dgam, dbet = ops.layernorm_backward(dbn, c_ln2)
        _acc(g, f"{n}.ln2.gamma", dgam)
        _acc(g, f"{n}.ln2.beta", dbet)
        dh = dy + dh_ln
        grads = ops.multihead_attention_backward(
            dh, c_attn, p[f"{n}.attn.wq"], p[f"{n}.attn.wk"], p[f"{n}.attn.wv"], p[f"{n}.attn.wo"])
        da = grads[0]
        for key, val in zip(ATTN_PARAMS, grads[1:]):
            _acc(g, f"{n}.attn.{key}", val)
        dx_ln, dgam, dbet = ops.layernorm_backward(da, c_ln1)
        _acc(g, f"{n}.ln1.gamma", dgam)
        _acc(g, f"{n}.ln1.beta", dbet)
        return dh + dx_ln


class ConvLSTM(Layer):
    """ConvLSTM over a (rows x cols) grid per time step; returns the flattened final state.

    Each time step's feature vector is reshaped row-major to ``grid`` with a
    single input channel; gate transforms are same-padded convolutions.
    """

    def __init__(self, name, grid, filters, kernel):
        self.name, self.grid, self.filters, self.kernel = name, tuple(grid), filters, kernel

    def specs(self):
        n, k, f = self.name, self.kernel, self.filters
        return [ParamSpec(f"{n}.kernel", (k, k, 1, 4 * f), "glorot", regularized=True),
                ParamSpec(f"{n}.recurrent", (k, k, f, 4 * f), "orthogonal"),
                ParamSpec(f"{n}.bias", (4 * f,), "forget_bias")]

    def forward(self, p, x, ctx):
        n, k, f = self.name, self.kernel, self.filters
        rows, cols = self.grid
        bsz, t, _ = x.shape
        wx = p[f"{n}.kernel"].reshape(-1, 4 * f)
        wh = p[f"{n}.recurrent"].reshape(-1, 4 * f)
        xcols = ops.im2col(x.reshape(bsz * t, rows, cols, 1), k).reshape(bsz, t, rows, cols, -1)
        zx = xcols @ wx + p[f"{n}.bias"]
        h = np.zeros((bsz, rows, cols, f))
        c = np.zeros_like(h)
        steps = []
        for s in range(t):
            hcols = ops.im2col(h, k)
            h, c, gc = ops.lstm_gates(zx[:, s] + hcols @ wh, c)
            steps.append((hcols, gc))
        return h.reshape(bsz, -1), (xcols, steps)

    def backward(self, p, dy, cache, g):
        n, k, f = self.name, self.kernel, self.filters
        rows, cols = self.grid
        xcols, steps = cache
        bsz, t = xcols.shape[:2]
        wx = p[f"{n}.kernel"].reshape(-1, 4 * f)
        wh = p[f"{n}.recurrent"].reshape(-1, 4 * f)
        dh = dy.reshape(bsz, rows, cols, f)
        dc = np.zeros_like(dh)
        dwh = np.zeros_like(wh)
        dz_all = np.empty(xcols.shape[:-1] + (4 * f,))
        for s in range(t - 1, -1, -1):
            hcols, gc = steps[s]
            dz, dc = ops.lstm_gates_backward(dh, dc, gc)
            dz_all[:, s] = dz
            dwh += hcols.reshape(-1, hcols.shape[-1]).T @ dz.reshape(-1, 4 * f)
            dh = ops.col2im(dz @ wh.T, k, f)
        dz2 = dz_all.reshape(-1, 4 * f)
        _acc(g, f"{n}.kernel", (xcols.reshape(-1, xcols.shape[-1]).T @ dz2).reshape(k, k, 1, 4 * f))
        _acc(g, f"{n}.recurrent", dwh.reshape(k, k, f, 4 * f))
        _acc(g, f"{n}.bias", dz2.sum(axis=0))
        dxc = (dz_all @ wx.T).reshape(bsz * t, rows, cols, -1)
        return ops.col2im(dxc, k, 1).reshape(bsz, t, rows * cols)
