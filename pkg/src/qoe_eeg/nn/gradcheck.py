"""Central finite-difference gradient checking."""

from __future__ import annotations

import numpy as np


def numeric_grad(f, params: dict, name: str, step: float = 1e-5, indices=None) -> np.ndarray:
    """Central differences of scalar ``f(params)`` wrt ``params[name]``.

    ``indices`` limits the probe to a subset of flat positions; other
    entries of the result are NaN.
    """
    base = params[name]
    out = np.full(base.size, np.nan)
    probe = range(base.size) if indices is None else indices
    for i in probe:
        plus = base.copy().reshape(-1)
        minus = base.copy().reshape(-1)
        plus[i] += step
        minus[i] -= step
        fp = f({**params, name: plus.reshape(base.shape)})
        fm = f({**params, name: minus.reshape(base.shape)})
        out[i] = (fp - fm) / (2 * step)
    return out.reshape(base.shape)


def relative_error(analytic, numeric, floor: float = 1e-300) -> float:
    """Infinity-norm relative error ``max|a - n| / max(max|a|, max|n|)``.

    Entries where ``numeric`` is NaN (not probed) are skipped.
    """
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = np.asarray(numeric, dtype=np.float64).reshape(-1)
    ok = ~np.isnan(n)
    a, n = a[ok], n[ok]
    if a.size == 0:
        return 0.0
    scale = max(np.max(np.abs(a)), np.max(np.abs(n)), floor)
    return float(np.max(np.abs(a - n)) / scale)


def check_gradients(f, params: dict, grads: dict, step: float = 1e-5, max_probes=None,
                    rng=None, floor: float = 1e-300) -> dict:
    """Relative error per parameter tensor of ``grads`` against finite differences."""
    errors = {}
    for name, g in grads.items():
        idx = None
        if max_probes is not None and g.size > max_probes:
            idx = rng.choice(g.size, size=max_probes, replace=False)
        errors[name] = relative_error(g, numeric_grad(f, params, name, step, idx), floor)
    return errors
