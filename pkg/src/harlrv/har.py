"""HAR test statistics and the decision layer.

Statistics are studentised with either a fixed-b or a HAC long-run variance
estimate.  A decision combines a statistic with one of three sources of
critical values:

``standard``
    normal (t) or chi-square(q)/q (F) quantiles;
``stationary``
    the pivotal fixed-b limit, simulated once and memoised;
``plugin``
    the non-pivotal limit with estimated nuisance curves substituted.
"""
from __future__ import annotations

import hashlib
import json
import math
from collections import OrderedDict
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats

from . import estimators as est
from .errors import DegenerateVariance, InvalidSpec, MissingContext, SingularMiddleMatrix
from .limitdist import (
    GridSpec,
    LimitDrawSet,
    critical_values,
    empirical_pvalue,
    plug_in_limit_distribution,
    stationary_limit_draws,
)

__all__ = [
    "HypothesisSpec",
    "TestResult",
    "t_stat_fixed_b",
    "F_stat_fixed_b",
    "t_stat_hac",
    "F_stat_hac",
    "decide",
    "CV_SOURCES",
]

CV_SOURCES = ("standard", "stationary", "plugin")
_COND_LIMIT = 1e12
_DEGENERATE_TOL = 1e-14
_CACHE_SIZE = 32
_drawset_cache: "OrderedDict[str, LimitDrawSet]" = OrderedDict()


@dataclass(frozen=True)
class HypothesisSpec:
    """``H0: R beta = r`` with ``R`` of full row rank ``q``."""

    R: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        r = np.atleast_1d(np.asarray(self.r, dtype=float))
        if r.size != R.shape[0]:
            raise InvalidSpec("r must have one entry per row of R")
        if np.linalg.matrix_rank(R) != R.shape[0]:
            raise InvalidSpec("R must have full row rank")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "r", r)

    @property
    def q(self) -> int:
        return self.R.shape[0]

    @classmethod
    def coefficient(cls, j: int = 0, value: float = 0.0, p: int = 1) -> "HypothesisSpec":
        R = np.zeros((1, p))
        R[0, j] = 1.0
        return cls(R, [value])

    @classmethod
    def from_dict(cls, d: dict) -> "HypothesisSpec":
        try:
            return cls(d["R"], d["r"])
        except KeyError as exc:
            raise InvalidSpec(f"hypothesis needs R and r: missing {exc}") from None


def _middle(fit: est.OlsFit, hyp: HypothesisSpec, omega: np.ndarray):
    if hyp.R.shape[1] != fit.p:
        raise InvalidSpec(f"R has {hyp.R.shape[1]} columns but the model has {fit.p} coefficients")
    qinv_rt = np.linalg.solve(fit.q_hat, hyp.R.T)  # Q^{-1} R'
    mid = qinv_rt.T @ omega @ qinv_rt
    return 0.5 * (mid + mid.T), qinv_rt


def _scale(fit, qinv_rt):
    g0 = fit.scores.T @ fit.scores / fit.T
    return float(np.trace(qinv_rt.T @ g0 @ qinv_rt))


def _t_from(fit, hyp, omega):
    if hyp.q != 1:
        raise InvalidSpec("t statistics need a single restriction")
    mid, qinv_rt = _middle(fit, hyp, omega)
    den = float(mid[0, 0])
    if den <= _DEGENERATE_TOL * max(_scale(fit, qinv_rt), 1e-300):
        raise DegenerateVariance("studentising variance is zero or negative")
    num = float(hyp.R[0] @ fit.beta_hat - hyp.r[0])
    return math.sqrt(fit.T) * num / math.sqrt(den)


def _F_from(fit, hyp, omega):
    mid, _ = _middle(fit, hyp, omega)
    if not np.all(np.isfinite(mid)) or np.linalg.cond(mid) > _COND_LIMIT:
        raise SingularMiddleMatrix("middle matrix is singular or ill-conditioned")
    diff = hyp.R @ fit.beta_hat - hyp.r
    return float(fit.T * diff @ np.linalg.solve(mid, diff) / hyp.q)


def t_stat_fixed_b(fit: est.OlsFit, hyp: HypothesisSpec, kernel="bartlett", b: float = 1.0) -> float:
    """``sqrt(T)(R beta_hat - r) / sqrt(R Q^{-1} Omega_fixed-b Q^{-1} R')``."""
    return _t_from(fit, hyp, est.fixed_b_lrv(fit, kernel, b).value)


def F_stat_fixed_b(fit: est.OlsFit, hyp: HypothesisSpec, kernel="bartlett", b: float = 1.0) -> float:
    """Wald statistic with the fixed-b middle matrix, divided by ``q``."""
    return _F_from(fit, hyp, est.fixed_b_lrv(fit, kernel, b).value)


def t_stat_hac(fit: est.OlsFit, hyp: HypothesisSpec, kernel="bartlett", b_T: float | None = None) -> float:
    """t statistic studentised by the HAC estimate (default ``b_T = T^{-1/2}``)."""
    b_T = fit.T ** -0.5 if b_T is None else b_T
    return _t_from(fit, hyp, est.hac_lrv(fit, kernel, b_T).value)


def F_stat_hac(fit: est.OlsFit, hyp: HypothesisSpec, kernel="bartlett", b_T: float | None = None) -> float:
    b_T = fit.T ** -0.5 if b_T is None else b_T
    return _F_from(fit, hyp, est.hac_lrv(fit, kernel, b_T).value)


@dataclass
class TestResult:
    """Outcome of one test; ``reject`` is ``|stat| > cv`` for t and ``stat > cv`` for F."""

    __test__ = False  # not a pytest class

    stat: float
    kind: str
    cv_source: str
    level: float
    cv: float
    cv_se: float | None
    reject: bool
    pvalue: float

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _standard(kind, level, q):
    if kind.startswith("t"):
        return float(stats.norm.ppf(1.0 - level / 2.0))
    return float(stats.chi2.ppf(1.0 - level, q) / q)


def _standard_pvalue(kind, stat, q):
    if kind.startswith("t"):
        return float(2.0 * stats.norm.sf(abs(stat)))
    return float(stats.chi2.sf(stat * q, q))


def decide(stat: float, kind: str, cv_source: str = "standard", level: float = 0.05,
           context: dict | None = None) -> TestResult:
    """Compare ``stat`` with a critical value from ``cv_source``.

    ``context`` keys
    ----------------
    q : int
        number of restrictions (F statistics; default 1).
    drawset : LimitDrawSet
        pre-simulated limit draws (``stationary`` or ``plugin``).
    kernel, b, grid_n, n_draws, seed :
        used to simulate the pivotal law when ``cv_source='stationary'`` and
        no draw set is given.
    curve, fit, hypothesis, reps :
        used to build the plug-in law when ``cv_source='plugin'`` and no
        draw set is given (``curve`` is a :class:`LocalLrvCurve`; if absent it
        is estimated from ``fit`` with default bandwidths).
    """
    if kind not in ("t_fixed_b", "F_fixed_b", "t_HAC", "F_HAC"):
        raise InvalidSpec(f"unknown statistic kind {kind!r}")
    if cv_source not in CV_SOURCES:
        raise InvalidSpec(f"unknown critical-value source {cv_source!r}")
    if not 0.0 < level <= 1.0:
        raise InvalidSpec("level must lie in (0, 1]")
    ctx = dict(context or {})
    q = int(ctx.get("q", 1))
    is_t = kind.startswith("t")
    mag = abs(stat) if is_t else stat
    if level >= 1.0:
        return TestResult(float(stat), kind, cv_source, level, 0.0, None, True, 1.0)
    if cv_source == "standard":
        cv = _standard(kind, level, q)
        return TestResult(float(stat), kind, cv_source, level, cv, None, bool(mag > cv),
                          _standard_pvalue(kind, stat, q))
    drawset = ctx.get("drawset")
    if drawset is None:
        drawset = _build_drawset(cv_source, is_t, q, ctx)
    table = critical_values(drawset, [1.0 - level])
    cv, se = table.lookup(1.0 - level)
    return TestResult(float(stat), kind, cv_source, level, cv, se, bool(mag > cv),
                      empirical_pvalue(drawset, stat))


def _seed_key(seed):
    if isinstance(seed, np.random.SeedSequence):
        seed = seed.entropy
    return seed if isinstance(seed, (int, str)) else np.atleast_1d(seed).tolist()


def _array_hash(a) -> str:
    if a is None:
        return ""
    return hashlib.sha256(np.ascontiguousarray(a, dtype=float).tobytes()).hexdigest()[:16]


def _cached(key_parts: dict, build) -> LimitDrawSet:
    key = json.dumps(key_parts, sort_keys=True, default=str)
    hit = _drawset_cache.get(key)
    if hit is not None:
        _drawset_cache.move_to_end(key)
        return hit
    ds = build()
    _drawset_cache[key] = ds
    if len(_drawset_cache) > _CACHE_SIZE:
        _drawset_cache.popitem(last=False)
    return ds


def _build_drawset(cv_source, is_t, q, ctx) -> LimitDrawSet:
    grid = GridSpec(int(ctx.get("grid_n", 1000)))
    seed = ctx.get("seed", 0)
    kind = "t" if is_t else "F"
    if cv_source == "stationary":
        if "kernel" not in ctx or "b" not in ctx:
            raise MissingContext("stationary critical values need 'kernel' and 'b' in the context")
        n_draws = int(ctx.get("n_draws", 10_000))
        key = {"src": "stationary", "kernel": str(ctx["kernel"]), "b": float(ctx["b"]), "kind": kind, "q": q,
               "grid_n": grid.n, "seed": _seed_key(seed), "n": n_draws}
        return _cached(key, lambda: stationary_limit_draws(ctx["kernel"], ctx["b"], kind, q, grid, seed,
                                                           n_draws))
    curve = ctx.get("curve")
    if curve is None:
        fit = ctx.get("fit")
        if fit is None:
            raise MissingContext("plug-in critical values need a 'drawset', 'curve' or 'fit' in the context")
        curve = est.local_lrv_curve(fit, np.arange(grid.n) / grid.n, ctx.get("h1"), ctx.get("h2"),
                                    ctx.get("K1", "bartlett"), ctx.get("K2", "uniform"), with_q=fit.p > 1)
    if "kernel" not in ctx or "b" not in ctx:
        raise MissingContext("plug-in critical values need 'kernel' and 'b' in the context")
    hyp = ctx.get("hypothesis")
    R = None if hyp is None else hyp.R
    reps = int(ctx.get("reps", 10_000))
    key = {"src": "plugin", "kernel": str(ctx["kernel"]), "b": float(ctx["b"]), "kind": kind,
           "grid_n": grid.n, "seed": _seed_key(seed), "n": reps, "R": _array_hash(R),
           "u": _array_hash(curve.grid), "omega": _array_hash(curve.omega), "q_hat": _array_hash(curve.q_hat)}
    return _cached(key, lambda: plug_in_limit_distribution(curve, ctx["kernel"], ctx["b"], grid, reps, seed,
                                                           kind, R))
