"""Pivotal fixed-b limit laws under stationarity.

When the nuisance curves are constant the limit of the t (or F) statistic is
``W(1) / sqrt(G)`` (resp. ``W(1)' G^{-1} W(1) / q``) with ``W`` a standard
q-dimensional Wiener process, ``B(r) = W(r) - r W(1)`` its bridge and ``G``
the kernel functional of ``B``.  This module simulates that law directly,
without reference to any nuisance path, and is kept separate from the
general engine so that the two can be used to check each other.

Seeds follow the block convention of the general engine: block ``j`` of 1000
draws uses ``SeedSequence(seed, spawn_key=(j,))``.
"""
from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

from ..errors import InvalidSpec
from ..kernels import get_lag_kernel, require_psd
from .simulate import BLOCK, GridSpec, LimitDrawSet

__all__ = ["stationary_limit_draws", "stationary_critical_value"]


def _gram(kernel, b, n):
    k = get_lag_kernel(kernel)
    idx = np.arange(n)
    return k((idx[:, None] - idx[None, :]) / (n * b))


def stationary_limit_draws(kernel="bartlett", b: float = 1.0, kind: str = "t", q: int = 1,
                           grid: GridSpec = GridSpec(), seed=0, n_draws: int = 10_000) -> LimitDrawSet:
    """Draws of the pivotal fixed-b t (``q = 1``) or F limit."""
    require_psd(get_lag_kernel(kernel))
    if kind not in ("t", "F"):
        raise InvalidSpec(f"kind must be 't' or 'F', got {kind!r}")
    if kind == "t" and q != 1:
        raise InvalidSpec("t statistics take q = 1")
    n = grid.n
    r = np.arange(1, n + 1) / n
    bartlett_one = get_lag_kernel(kernel).name == "bartlett" and b == 1.0
    gram = None if bartlett_one else _gram(kernel, b, n)
    entropy = seed.entropy if isinstance(seed, np.random.SeedSequence) else seed
    out = []
    for j in range(math.ceil(n_draws / BLOCK)):
        size = min(BLOCK, n_draws - j * BLOCK)
        rng = np.random.default_rng(np.random.SeedSequence(entropy, spawn_key=(j,)))
        dw = rng.standard_normal((size, n, q)) / math.sqrt(n)
        w = np.cumsum(dw, axis=1)
        w1 = w[:, -1, :]
        bridge = w - r[None, :, None] * w1[:, None, :]
        if bartlett_one:
            g = 2.0 * np.einsum("sia,sib->sab", bridge, bridge) / n
        else:
            db = np.diff(np.concatenate([np.zeros((size, 1, q)), bridge], axis=1), axis=1)
            g = np.einsum("sia,ij,sjb->sab", db, gram, db)
        if kind == "t":
            out.append(w1[:, 0] / np.sqrt(g[:, 0, 0]))
        else:
            sol = np.linalg.solve(g, w1[:, :, None])[:, :, 0]
            out.append(np.sum(w1 * sol, axis=1) / q)
    meta = {"kernel": get_lag_kernel(kernel).name, "b": float(b), "source": "stationary", "q": q,
            "grid_n": n, "seed": entropy if isinstance(entropy, (int, str)) else list(entropy),
            "n_draws": int(n_draws)}
    return LimitDrawSet(np.concatenate(out), kind, meta)


@lru_cache(maxsize=64)
def _cached_cv(kernel, b, kind, q, n, seed, n_draws, level):
    from .simulate import critical_values

    ds = stationary_limit_draws(kernel, b, kind, q, GridSpec(n), seed, n_draws)
    return critical_values(ds, [1.0 - level]).lookup(1.0 - level)


def stationary_critical_value(kernel, b, level: float = 0.05, kind: str = "t", q: int = 1, n: int = 1000,
                              seed: int = 20240607, n_draws: int = 50_000) -> tuple[float, float]:
    """``(cv, se)`` of the pivotal law at test level ``level`` (memoised)."""
    return _cached_cv(get_lag_kernel(kernel).name, float(b), kind, int(q), int(n), seed, int(n_draws),
                      float(level))
