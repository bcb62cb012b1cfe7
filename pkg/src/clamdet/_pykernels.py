"""Pure numpy/Python versions of the compiled loops in ``_ckernels``."""

from __future__ import annotations

import math

import numpy as np


def triplet_hinge(anchor: np.ndarray, positive: np.ndarray, alpha: float):
    n, e = anchor.shape
    ga = np.zeros((n, e))
    gp = np.zeros((n, e))
    if n <= 1:
        return 0.0, ga, gp
    inv = 1.0 / (n * (n - 1))
    dpos = ((anchor - positive) ** 2).sum(axis=1)
    # dneg[i, j] = |a_i - p_j|^2
    diff = anchor[:, None, :] - positive[None, :, :]
    dneg = (diff * diff).sum(axis=2)
    h = dpos[:, None] - dneg + alpha
    np.fill_diagonal(h, 0.0)
    active = (h > 0.0).astype(np.float64)
    np.fill_diagonal(active, 0.0)
    total = float(h[active > 0].sum())
    cnt = active.sum(axis=1)
    ga += 2.0 * (active @ positive - cnt[:, None] * positive) * inv
    gp -= 2.0 * cnt[:, None] * (anchor - positive) * inv
    gp += 2.0 * (active.T @ anchor - active.sum(axis=0)[:, None] * positive) * inv
    return total * inv, ga, gp


def elo_sequential(a_idx, b_idx, score_a, n_models: int, k_factor: float, initial: float):
    r = [float(initial)] * n_models
    for a, b, s in zip(a_idx.tolist(), b_idx.tolist(), score_a.tolist()):
        ea = 1.0 / (1.0 + math.pow(10.0, (r[b] - r[a]) / 400.0))
        delta = k_factor * (s - ea)
        r[a] += delta
        r[b] -= delta
    return np.array(r, dtype=np.float64)
