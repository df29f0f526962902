"""Shared numerical oracles for the test suite."""

import numpy as np


def rel_err(a, b, floor=1e-8):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), floor))


def fd_param_grads(loss, params: dict, h=1e-5) -> dict:
    """Central finite differences of ``loss(params)`` for every entry of every array."""
    out = {}
    for k, v in params.items():
        g = np.zeros_like(v)
        for i in np.ndindex(v.shape):
            p = {kk: vv.copy() for kk, vv in params.items()}
            p[k][i] = v[i] + h
            up = loss(p)
            p[k][i] = v[i] - h
            g[i] = (up - loss(p)) / (2 * h)
        out[k] = g
    return out
