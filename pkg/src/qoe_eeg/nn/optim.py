from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict, grads: dict, state: AdamState, lr: float = 1e-3,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8, t: int | None = None):
    """Bias-corrected Adam update of every parameter that has a gradient.

    Returns ``(new_params, new_state)``; inputs are left untouched. Parameters
    without a gradient entry (running statistics) are copied through.
    """
    t = state.t + 1 if t is None else t
    if t < 1:
        raise ValueError("Adam step counter starts at 1")
    new_params = dict(params)
    m, v = dict(state.m), dict(state.v)
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, g in grads.items():
        m[name] = beta1 * m.get(name, 0.0) + (1 - beta1) * g
        v[name] = beta2 * v.get(name, 0.0) + (1 - beta2) * g * g
        mhat = m[name] / c1
        vhat = v[name] / c2
        new_params[name] = params[name] - lr * mhat / (np.sqrt(vhat) + eps)
    return new_params, AdamState(m, v, t)
