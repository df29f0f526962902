"""Bias-corrected Adam on dictionaries of numpy arrays."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ace.errors import NumericalError


@dataclass(frozen=True)
class AdamState:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One Adam update. Inputs are not mutated; new dictionaries are returned.

    A non-finite gradient rejects the whole step with :class:`NumericalError`.
    """
    for k, g in grads.items():
        if k not in params:
            raise KeyError(f"gradient for unknown parameter {k!r}")
        if g.shape != params[k].shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {params[k].shape} for {k!r}")
        if not np.all(np.isfinite(g)):
            bad = int(np.size(g) - np.count_nonzero(np.isfinite(g)))
            raise NumericalError(f"non-finite gradient for {k!r} ({bad} entries); step rejected")

    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    new_p, new_m, new_v = dict(params), dict(state.m), dict(state.v)
    for k, g in grads.items():
        m = state.m.get(k)
        v = state.v.get(k)
        m = (1.0 - b1) * g if m is None else b1 * m + (1.0 - b1) * g
        v = (1.0 - b2) * (g * g) if v is None else b2 * v + (1.0 - b2) * (g * g)
        new_m[k], new_v[k] = m, v
        new_p[k] = params[k] - state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return new_p, replace(state, step=t, m=new_m, v=new_v)
