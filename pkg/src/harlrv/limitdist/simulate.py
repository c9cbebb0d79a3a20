"""Monte Carlo simulation of the fixed-b limiting functionals and test laws.

Paths are simulated on an ``n``-cell grid of ``[0, 1]`` with left-endpoint
increments: ``X(r_i) = sum_{j <= i} Sigma(u_{j-1}) dW_j`` with
``dW_j ~ N(0, I/n)``.  Draws are produced in blocks of ``BLOCK`` paths; block
``j`` uses the generator seeded by ``SeedSequence(seed, spawn_key=(j,))``, so
a draw depends only on ``(seed, draw index)`` and not on how blocks are
scheduled.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from ..dgp import RegressorMomentPath, VariancePath
from ..errors import DataError, DegenerateCurve, InvalidSpec, TooFewDraws
from ..kernels import BandwidthedKernel, LagKernel, get_lag_kernel, require_psd

__all__ = [
    "BLOCK",
    "GridSpec",
    "WeightedWienerPath",
    "LimitDrawSet",
    "CriticalValueTable",
    "simulate_weighted_wiener",
    "bridge_functional",
    "simulate_G_general",
    "simulate_G_bartlett",
    "simulate_G_b",
    "limit_t_draws",
    "limit_F_draws",
    "plug_in_limit_distribution",
    "critical_values",
    "empirical_pvalue",
    "read_drawset_csv",
]

BLOCK = 1000
MIN_DRAWS = 1000


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid of ``n`` cells on ``[0, 1]`` (left-endpoint Riemann rule)."""

    n: int = 1000

    def __post_init__(self):
        if int(self.n) < 100:
            raise InvalidSpec(f"grid needs n >= 100 cells, got {self.n}")

    @property
    def left(self) -> np.ndarray:
        return np.arange(self.n) / self.n

    @property
    def points(self) -> np.ndarray:
        """``r_0 = 0, r_1, ..., r_n = 1``."""
        return np.arange(self.n + 1) / self.n


def _as_bandwidthed(kernel, b=None) -> BandwidthedKernel:
    if isinstance(kernel, BandwidthedKernel):
        return kernel
    return BandwidthedKernel(get_lag_kernel(kernel), 1.0 if b is None else float(b))


def _block_rng(seed, j: int) -> np.random.Generator:
    entropy = seed.entropy if isinstance(seed, np.random.SeedSequence) else seed
    return np.random.default_rng(np.random.SeedSequence(entropy, spawn_key=(int(j),)))


def _blocks(n_draws: int):
    for j in range(math.ceil(n_draws / BLOCK)):
        yield j, min(BLOCK, n_draws - j * BLOCK)


# --------------------------------------------------------------------------
# paths and bridges


@dataclass
class WeightedWienerPath:
    """``X(r_i)`` for ``i = 0..n``; ``values`` has shape ``(n_paths, n+1, p)``."""

    values: np.ndarray
    grid: GridSpec

    @property
    def endpoint(self) -> np.ndarray:
        return self.values[:, -1, :]


class _Engine:
    """Precomputed per-(Sigma path, Q path, grid) quantities."""

    def __init__(self, path: VariancePath, q_path: RegressorMomentPath | None, grid: GridSpec):
        self.grid = grid
        self.p = path.p
        self.sig = path.sigma(grid.left)  # (n, p, p) at left endpoints
        self.sig_is_identity_scalar = self.p == 1
        if q_path is None:
            q_path = RegressorMomentPath.constant(np.eye(self.p))
        if q_path.p != self.p:
            raise InvalidSpec("Sigma and Q paths have different dimensions")
        cum = q_path.cumulative(grid.points)  # (n+1, p, p)
        self.qbar = cum[-1]
        self.qbar_inv = np.linalg.inv(self.qbar)
        self.bridge_w = cum @ self.qbar_inv  # (n+1, p, p); last entry is I

    def paths(self, rng: np.random.Generator, size: int) -> np.ndarray:
        n, p = self.grid.n, self.p
        dw = rng.standard_normal((size, n, p)) / math.sqrt(n)
        if p == 1:
            inc = dw * self.sig[None, :, 0, :]
        else:
            inc = np.einsum("jab,sjb->sja", self.sig, dw)
        x = np.zeros((size, n + 1, p))
        np.cumsum(inc, axis=1, out=x[:, 1:, :])
        return x

    def bridge(self, x: np.ndarray) -> np.ndarray:
        x1 = x[:, -1, :]
        if self.p == 1:
            h = x - self.bridge_w[None, :, :, 0] * x1[:, None, :]
        else:
            h = x - np.einsum("iab,sb->sia", self.bridge_w, x1)
        h[:, 0, :] = 0.0
        h[:, -1, :] = 0.0
        return h


def simulate_weighted_wiener(path: VariancePath, grid: GridSpec = GridSpec(), seed=0,
                             n_paths: int = 1) -> WeightedWienerPath:
    """Simulate ``X(r) = int_0^r Sigma(u) dW(u)`` where ``Sigma Sigma' = path``."""
    eng = _Engine(path, None, grid)
    vals = np.concatenate([eng.paths(_block_rng(seed, j), size) for j, size in _blocks(n_paths)])
    return WeightedWienerPath(vals, grid)


def bridge_functional(wiener: WeightedWienerPath, q_path: RegressorMomentPath | None = None) -> np.ndarray:
    """``H(r) = X(r) - (int_0^r Q) Qbar^{-1} X(1)`` on the grid; ``H(1) = 0`` exactly."""
    p = wiener.values.shape[-1]
    eng = _Engine.__new__(_Engine)
    eng.p = p
    q_path = q_path or RegressorMomentPath.constant(np.eye(p))
    cum = q_path.cumulative(wiener.grid.points)
    eng.bridge_w = cum @ np.linalg.inv(cum[-1])
    return eng.bridge(wiener.values)


# --------------------------------------------------------------------------
# functionals of the bridge


def _toeplitz_apply(kvec: np.ndarray, y: np.ndarray) -> np.ndarray:
    """``z_i = sum_j k(i - j) y_j`` along axis 1, with ``kvec[d + n - 1] = k(d)``."""
    n = y.shape[1]
    full = signal.fftconvolve(y, kvec[None, :, None], mode="full", axes=1)
    return full[:, n - 1: 2 * n - 1, :]


def _quad_form(y: np.ndarray, z: np.ndarray) -> np.ndarray:
    if y.shape[-1] == 1:
        return np.sum(y[:, :, 0] * z[:, :, 0], axis=1)[:, None, None]
    return np.einsum("sia,sib->sab", y, z)


def _g_bartlett(h: np.ndarray) -> np.ndarray:
    n = h.shape[1] - 1
    hh = h[:, 1:, :]
    g = 2.0 * _quad_form(hh, hh) / n
    return g


def _g_b(h: np.ndarray, kb: BandwidthedKernel) -> np.ndarray:
    n = h.shape[1] - 1
    dh = np.diff(h, axis=1)
    kvec = kb(np.arange(-(n - 1), n) / n)
    g = _quad_form(dh, _toeplitz_apply(kvec, dh))
    return 0.5 * (g + np.swapaxes(g, 1, 2))


def _g_general(h: np.ndarray, kb: BandwidthedKernel) -> np.ndarray:
    n = h.shape[1] - 1
    hh = h[:, 1:, :]
    kvec = kb.dd(np.arange(-(n - 1), n) / n)
    g = -_quad_form(hh, _toeplitz_apply(kvec, hh)) / n**2
    return 0.5 * (g + np.swapaxes(g, 1, 2))


def _functional(method: str, kb: BandwidthedKernel | None):
    if method == "bartlett":
        return _g_bartlett
    if method == "increments":
        return lambda h: _g_b(h, kb)
    if method == "general":
        return lambda h: _g_general(h, kb)
    raise InvalidSpec(f"unknown functional {method!r}")


def _auto_method(kb: BandwidthedKernel) -> str:
    if kb.base.name == "bartlett" and kb.b == 1.0:
        return "bartlett"
    return "increments"


def _simulate_G(method, kb, path, q_path, grid, seed, n_draws):
    eng = _Engine(path, q_path, grid)
    fn = _functional(method, kb)
    out = [fn(eng.bridge(eng.paths(_block_rng(seed, j), size))) for j, size in _blocks(n_draws)]
    g = np.concatenate(out)
    return g


def simulate_G_general(kernel, path: VariancePath, q_path=None, grid: GridSpec = GridSpec(), seed=0,
                       n_draws: int = 1, b: float = 1.0) -> np.ndarray:
    """Draws of ``-int int K_b''(r - s) H(r) H(s)' dr ds``; shape ``(n_draws, p, p)``.

    Requires a kernel with a second derivative (Parzen, QS, Tukey-Hanning);
    for Bartlett use :func:`simulate_G_bartlett`.
    """
    kb = _as_bandwidthed(kernel, b)
    kb.dd(np.zeros(1))  # raises UnsupportedKernel early
    return _simulate_G("general", kb, path, q_path, grid, seed, n_draws)


def simulate_G_bartlett(path: VariancePath, q_path=None, grid: GridSpec = GridSpec(), seed=0,
                        n_draws: int = 1) -> np.ndarray:
    """Draws of ``2 int_0^1 H(r) H(r)' dr``; shape ``(n_draws, p, p)``."""
    return _simulate_G("bartlett", None, path, q_path, grid, seed, n_draws)


def simulate_G_b(kernel, path: VariancePath, q_path=None, grid: GridSpec = GridSpec(), seed=0,
                 n_draws: int = 1, b: float | None = None) -> np.ndarray:
    """Draws of ``int int K_b(r - s) dH(r) dH(s)'`` from grid increments of the bridge."""
    kb = _as_bandwidthed(kernel, b)
    require_psd(kb.base)
    return _simulate_G("increments", kb, path, q_path, grid, seed, n_draws)


# --------------------------------------------------------------------------
# limit laws of the test statistics


def _restriction(R, p):
    R = np.atleast_2d(np.asarray(R if R is not None else np.eye(p)[:1], dtype=float))
    if R.shape[1] != p:
        raise InvalidSpec(f"R must have {p} columns")
    if np.linalg.matrix_rank(R) != R.shape[0]:
        raise InvalidSpec("R must have full row rank")
    return R


def _stat_draws(kind, kernel, b, path, q_path, R, grid, seed, n_draws, method):
    kb = _as_bandwidthed(kernel, b)
    require_psd(kb.base)
    eng = _Engine(path, q_path, grid)
    R = _restriction(R, eng.p)
    if kind == "t" and R.shape[0] != 1:
        raise InvalidSpec("t statistics need a single restriction")
    RQ = R @ eng.qbar_inv
    fn = _functional(method or _auto_method(kb), kb)
    out = []
    for j, size in _blocks(n_draws):
        x = eng.paths(_block_rng(seed, j), size)
        g = fn(eng.bridge(x))
        num = x[:, -1, :] @ RQ.T  # (size, q)
        mid = RQ @ g @ RQ.T  # (size, q, q)
        if kind == "t":
            out.append(num[:, 0] / np.sqrt(mid[:, 0, 0]))
        else:
            sol = np.linalg.solve(mid, num[:, :, None])[:, :, 0]
            out.append(np.sum(num * sol, axis=1) / R.shape[0])
    return np.concatenate(out), R


def _path_hash(path: VariancePath, grid: GridSpec) -> str:
    vals = np.ascontiguousarray(path.omega(grid.left))
    return hashlib.sha256(vals.tobytes()).hexdigest()[:16]


def _seed_repr(seed):
    if isinstance(seed, np.random.SeedSequence):
        seed = seed.entropy
    return seed if isinstance(seed, (int, str)) else list(np.atleast_1d(seed).tolist())


def limit_t_draws(kernel, b, path: VariancePath, q_path=None, R=None, grid: GridSpec = GridSpec(), seed=0,
                  n_draws: int = 10_000, method: str | None = None, source: str = "oracle") -> "LimitDrawSet":
    """Draws of the limiting fixed-b t statistic under the given nuisance curves.

    Numerator ``R Qbar^{-1} X(1)`` and denominator
    ``R Qbar^{-1} G Qbar^{-1} R'`` come from the same simulated path.
    """
    draws, R = _stat_draws("t", kernel, b, path, q_path, R, grid, seed, n_draws, method)
    kb = _as_bandwidthed(kernel, b)
    return LimitDrawSet(draws, "t", _metadata(kb, path, q_path, R, grid, seed, source, n_draws))


def limit_F_draws(kernel, b, path: VariancePath, q_path=None, R=None, grid: GridSpec = GridSpec(), seed=0,
                  n_draws: int = 10_000, method: str | None = None, source: str = "oracle") -> "LimitDrawSet":
    """Draws of the limiting fixed-b F statistic (see :func:`limit_t_draws`)."""
    draws, R = _stat_draws("F", kernel, b, path, q_path, R, grid, seed, n_draws, method)
    kb = _as_bandwidthed(kernel, b)
    return LimitDrawSet(draws, "F", _metadata(kb, path, q_path, R, grid, seed, source, n_draws))


def _metadata(kb, path, q_path, R, grid, seed, source, n_draws):
    return {
        "kernel": kb.base.name,
        "b": kb.b,
        "source": source,
        "q_source": "identity" if q_path is None else "path",
        "grid_n": grid.n,
        "seed": _seed_repr(seed),
        "n_draws": int(n_draws),
        "R": np.asarray(R).tolist(),
        "sigma_hash": _path_hash(path, grid),
        "q_hash": "" if q_path is None else _path_hash(q_path, grid),
    }


def plug_in_limit_distribution(curve, kernel, b, grid: GridSpec = GridSpec(), reps: int = 10_000, seed=0,
                               kind: str = "t", R=None, use_q: bool = True) -> "LimitDrawSet":
    """Feasible limit law: the oracle machinery with ``Sigma_hat``, ``Q_hat`` step curves.

    Raises
    ------
    DegenerateCurve
        If the estimated long-run variance curve is zero everywhere.
    """
    omega = np.asarray(curve.omega)
    scale = np.max(np.abs(omega)) if omega.size else 0.0
    if not np.isfinite(scale) or scale <= 1e-300:
        raise DegenerateCurve("estimated local long-run variance is identically zero")
    path = curve.variance_path()
    q_path = curve.regressor_moment_path() if (use_q and curve.q_hat is not None) else None
    fn = limit_t_draws if kind == "t" else limit_F_draws
    return fn(kernel, b, path, q_path, R, grid, seed, reps, source="plug-in")


# --------------------------------------------------------------------------
# draw sets and critical values


@dataclass
class LimitDrawSet:
    """Scalar draws of a limit statistic with provenance metadata.

    ``kind`` is ``"t"`` (critical values use ``|t|``), ``"F"`` or
    ``"generic"`` (raw values).
    """

    draws: np.ndarray
    kind: str = "generic"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.draws = np.asarray(self.draws, dtype=float).ravel()

    def __len__(self):
        return self.draws.size

    @property
    def magnitudes(self) -> np.ndarray:
        return np.abs(self.draws) if self.kind == "t" else self.draws

    @property
    def key(self) -> str:
        """Hash of the metadata, used to cache critical values."""
        blob = json.dumps({"kind": self.kind, **self.metadata}, sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["draw_index", "value"])
            for i, v in enumerate(self.draws):
                w.writerow([i, repr(float(v))])
        with open(str(path) + ".json", "w") as fh:
            json.dump({"kind": self.kind, "key": self.key, **self.metadata}, fh, indent=2, sort_keys=True)


def read_drawset_csv(path) -> LimitDrawSet:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    if not rows or rows[0] != ["draw_index", "value"]:
        raise DataError(f"{path}: expected header draw_index,value")
    draws = np.array([float(r[1]) for r in rows[1:] if r])
    meta = {}
    try:
        with open(str(path) + ".json") as fh:
            meta = json.load(fh)
    except OSError:
        pass
    kind = meta.pop("kind", "generic")
    meta.pop("key", None)
    return LimitDrawSet(draws, kind, meta)


@dataclass
class CriticalValueTable:
    """Quantiles of a draw set at probability levels, with Monte Carlo s.e."""

    levels: np.ndarray
    quantiles: np.ndarray
    se: np.ndarray
    n_draws: int

    def lookup(self, level: float) -> tuple[float, float]:
        i = int(np.argmin(np.abs(self.levels - level)))
        if abs(self.levels[i] - level) > 1e-12:
            raise KeyError(level)
        return float(self.quantiles[i]), float(self.se[i])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["level", "quantile", "se", "n_draws"])
            for lv, q, s in zip(self.levels, self.quantiles, self.se):
                w.writerow([repr(float(lv)), repr(float(q)), repr(float(s)), self.n_draws])


def critical_values(drawset: LimitDrawSet, levels) -> CriticalValueTable:
    """Type-7 empirical quantiles at probabilities ``levels``.

    The standard error is half the distance between the order statistics at
    ranks ``N p +/- sqrt(N p (1 - p))`` (binomial interval for the quantile).
    For ``t`` draw sets the quantiles are of ``|t|``.
    """
    n = len(drawset)
    if n < MIN_DRAWS:
        raise TooFewDraws(f"need at least {MIN_DRAWS} draws, got {n}")
    levels = np.atleast_1d(np.asarray(levels, dtype=float))
    if np.any((levels <= 0.0) | (levels >= 1.0)):
        raise InvalidSpec("levels must lie strictly between 0 and 1")
    x = np.sort(drawset.magnitudes)
    q = np.quantile(x, levels)
    half = np.sqrt(n * levels * (1.0 - levels))
    hi = np.clip(np.ceil(n * levels + half).astype(int) - 1, 0, n - 1)
    lo = np.clip(np.floor(n * levels - half).astype(int) - 1, 0, n - 1)
    se = 0.5 * (x[hi] - x[lo])
    return CriticalValueTable(levels, q, se, n)


def empirical_pvalue(drawset: LimitDrawSet, stat: float) -> float:
    """``(#{draws >= stat} + 1) / (N + 1)``, on ``|.|`` for t draw sets."""
    mags = drawset.magnitudes
    s = abs(stat) if drawset.kind == "t" else stat
    return float((np.count_nonzero(mags >= s) + 1) / (mags.size + 1))
