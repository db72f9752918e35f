"""The three sequence classifiers and their loss/gradient entry points."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .. import seeding
from ..errors import InvalidConfig, LayerShapeMismatch
from . import layers as L
from . import ops

ARCHITECTURES = ("bilstm", "transformer", "convlstm")
TRANSFORMER_DEFAULTS = {"blocks": 2, "heads": 4, "model_dim": 64, "ff": 128}
CONVLSTM_DEFAULTS = {"filters": 16, "kernel": 3}


@dataclass(frozen=True)
class ModelConfig:
    architecture: str = "bilstm"
    units1: int = 16
    units2: int = 16
    dropout: float = 0.2
    l2: float = 0.0
    head_hidden: int = 128
    head_dropout: float = 0.3
    classes: int = 3
    input_dim: int = 80
    extra: dict = field(default_factory=dict)

    def option(self, key):
        defaults = TRANSFORMER_DEFAULTS if self.architecture == "transformer" else CONVLSTM_DEFAULTS
        if key == "grid" and key not in self.extra:
            if self.input_dim % 8:
                raise InvalidConfig(f"no default grid for input_dim {self.input_dim}; set extra.grid")
            return (8, self.input_dim // 8)
        return self.extra.get(key, defaults.get(key))

    def validate(self) -> None:
        if self.architecture not in ARCHITECTURES:
            raise InvalidConfig(f"unknown architecture {self.architecture!r}")
        for key in ("units1", "units2", "head_hidden", "input_dim"):
            v = getattr(self, key)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise InvalidConfig(f"{key} must be a positive integer, got {v!r}")
        for key in ("dropout", "head_dropout"):
            if not 0 <= getattr(self, key) < 1:
                raise InvalidConfig(f"{key} must lie in [0, 1), got {getattr(self, key)}")
        if self.l2 < 0:
            raise InvalidConfig(f"l2 must be >= 0, got {self.l2}")
        if self.classes != 3:
            raise InvalidConfig("classes must be 3")
        if self.architecture == "transformer":
            d, h = self.option("model_dim"), self.option("heads")
            if d % h:
                raise InvalidConfig(f"model_dim {d} not divisible by heads {h}")
        if self.architecture == "convlstm":
            r, c = self.option("grid")
            if r * c != self.input_dim:
                raise InvalidConfig(f"grid {r}x{c} does not cover input_dim {self.input_dim}")
            if self.option("kernel") % 2 == 0:
                raise InvalidConfig("convlstm kernel must be odd for same padding")

    def sort_key(self) -> tuple:
        return (self.architecture, self.units1, self.units2, self.dropout, self.l2,
                self.head_hidden, self.head_dropout, sorted(self.extra.items()))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["extra"] = {k: list(v) if isinstance(v, tuple) else v for k, v in self.extra.items()}
        return d

    @classmethod
    def from_dict(cls, d) -> "ModelConfig":
        d = dict(d)
        extra = dict(d.pop("extra", {}) or {})
        if "grid" in extra:
            extra["grid"] = tuple(extra["grid"])
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        return cls(extra=extra, **known)


def build_layers(config: ModelConfig) -> list:
    config.validate()
    head = [L.Dense("head.dense1", None, config.head_hidden, "relu"),
            L.Dropout(config.head_dropout),
            L.Dense("head.dense2", config.head_hidden, config.classes)]
    if config.architecture == "bilstm":
        u1, u2 = config.units1, config.units2
        body = [L.BiLSTM("bilstm1", config.input_dim, u1, return_sequence=True),
                L.BatchNorm("bn1", 2 * u1), L.Dropout(config.dropout),
                L.BiLSTM("bilstm2", 2 * u1, u2, return_sequence=False),
                L.BatchNorm("bn2", 2 * u2), L.Dropout(config.dropout)]
        width = 2 * u2
    elif config.architecture == "transformer":
        d = config.option("model_dim")
        body = [L.Dense("proj", config.input_dim, d, regularized=True), L.PositionalEncoding()]
        body += [L.EncoderBlock(f"block{i}", d, config.option("heads"), config.option("ff"))
                 for i in range(config.option("blocks"))]
        body += [L.MeanPool(), L.Dropout(config.dropout)]
        width = d
    else:
        grid = config.option("grid")
        f = config.option("filters")
        body = [L.ConvLSTM("convlstm", grid, f, config.option("kernel")),
                L.Dropout(config.dropout)]
        width = grid[0] * grid[1] * f
    head[0].n_in = width
    return body + head


def param_specs(config: ModelConfig) -> list:
    return [s for layer in build_layers(config) for s in layer.specs()]


def build_model(config: ModelConfig, seed: int = 0) -> dict:
    """Freshly initialized parameters, deterministic in ``seed``."""
    params = {}
    for spec in param_specs(config):
        params[spec.name] = L.initialize(spec, seeding.rng(seed, "init", spec.name))
    return params


def param_count(params: dict) -> int:
    return int(sum(v.size for v in params.values()))


def trainable_names(config: ModelConfig) -> list:
    return [s.name for s in param_specs(config) if s.trainable]


def regularized_names(config: ModelConfig) -> list:
    return [s.name for s in param_specs(config) if s.regularized]


def l2_penalty(params: dict, config: ModelConfig) -> float:
    return config.l2 * float(sum(np.sum(params[n] ** 2) for n in regularized_names(config)))


def _check_input(x, config):
    if x.ndim != 3 or x.shape[-1] != config.input_dim or x.shape[1] < 1:
        raise LayerShapeMismatch(
            f"expected input (batch, T, {config.input_dim}), got {x.shape}")


def forward_batch(params, config, x, mode="infer", rng=None, ctx=None, tape=None):
    """Logits (B, 3) for inputs (B, T, F)."""
    x = np.asarray(x, dtype=np.float64)
    _check_input(x, config)
    ctx = ctx or L.Context(mode, rng)
    h = x
    for layer in build_layers(config):
        h, cache = layer.forward(params, h, ctx)
        if tape is not None:
            tape.append((layer, cache))
    return h


def forward(params, config, x, mode="infer", rng=None):
    """Logits (3,) for one (T, F) example."""
    return forward_batch(params, config, np.asarray(x, dtype=np.float64)[None], mode, rng)[0]


def loss_and_grads(params, config, x, y, rng=None, mode="train"):
    """Returns ``(loss, cross_entropy, grads, running_stats)`` for one batch."""
    y = np.asarray(y, dtype=np.int64)
    if len(y) == 0:
        raise LayerShapeMismatch("empty batch")
    if len(y) != len(x):
        raise LayerShapeMismatch(f"{len(x)} inputs but {len(y)} labels")
    ctx = L.Context(mode, rng)
    tape = []
    logits = forward_batch(params, config, x, mode, rng, ctx, tape)
    ce, dlogits = ops.softmax_crossentropy(logits, y)
    grads = {}
    d = dlogits
    for layer, cache in reversed(tape):
        d = layer.backward(params, d, cache, grads)
    for name in regularized_names(config):
        grads[name] = grads[name] + 2.0 * config.l2 * params[name]
    loss = ce + l2_penalty(params, config)
    ordered = {n: grads[n] for n in trainable_names(config)}
    return loss, ce, ordered, ctx.stats


def backward(params, config, batch, rng=None):
    """Mean cross-entropy plus L2 on regularized kernels, and exact gradients."""
    x, y = batch
    loss, _, grads, _ = loss_and_grads(params, config, np.asarray(x, dtype=np.float64), y, rng)
    return loss, grads
