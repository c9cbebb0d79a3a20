"""Nonstationary Gaussian data-generating processes with known nuisance curves.

The error process is a time-varying AR(1),

    V_t = rho(t/T) V_{t-1} + sigma(t/T) eps_t,

whose parameter paths are piecewise constant or piecewise linear over
rescaled time.  For such processes the local long-run variance
``Omega(u) = sigma^2(u) / (1 - rho(u))^2`` and the regressor moment curve
``Q(u)`` are available in closed form, which makes the module usable as an
oracle for the estimators and the limit-distribution simulators.

Paths are right-continuous: a point exactly at a break belongs to the segment
that starts there.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, signal

from .errors import BreakPoint, DataError, InvalidSpec, TooLarge

__all__ = [
    "Segment",
    "ArPath",
    "DgpSpec",
    "SamplePath",
    "VariancePath",
    "RegressorMomentPath",
    "simulate",
    "true_local_lrv",
    "true_integrated_lrv",
    "exact_scaled_sum_variance",
    "autocov_matrix",
    "variance_path",
    "regressor_moment_path",
    "read_sample_csv",
]

EXACT_T_CAP = 5000
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)


# --------------------------------------------------------------------------
# matrix-valued curves on [0, 1]


class VariancePath:
    """Piecewise curve ``u -> Omega(u)`` of p x p PSD matrices on ``[0, 1]``.

    ``edges`` are the segment boundaries ``0 = e_0 < ... < e_m = 1``.  Each
    piece is either a constant p x p array or a callable mapping an array of
    ``u`` values to an array of shape ``(len(u), p, p)``.
    """

    def __init__(self, edges: Sequence[float], pieces: Sequence, p: int | None = None):
        edges = np.asarray(edges, dtype=float)
        if edges[0] != 0.0 or edges[-1] != 1.0 or np.any(np.diff(edges) <= 0):
            raise InvalidSpec("segment edges must increase strictly from 0 to 1")
        if len(pieces) != len(edges) - 1:
            raise InvalidSpec("need one piece per segment")
        fixed = []
        for piece in pieces:
            if callable(piece):
                fixed.append(piece)
            else:
                arr = np.atleast_2d(np.asarray(piece, dtype=float))
                fixed.append(arr)
        if p is None:
            sample = fixed[0] if not callable(fixed[0]) else fixed[0](np.array([edges[0]]))[0]
            p = np.atleast_2d(sample).shape[-1]
        self.edges = edges
        self.pieces = fixed
        self.p = int(p)

    # constructors -------------------------------------------------------
    @classmethod
    def constant(cls, value):
        return cls([0.0, 1.0], [value])

    @classmethod
    def piecewise_constant(cls, breaks: Sequence[float], values: Sequence):
        return cls([0.0, *breaks, 1.0], list(values))

    @classmethod
    def step(cls, grid: Sequence[float], values):
        """Left-step interpolation of values observed on ``grid`` (which must
        start at 0).  Each value holds from its grid point to the next one."""
        grid = np.asarray(grid, dtype=float)
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None, None]
        if grid[0] != 0.0:
            raise InvalidSpec("step grid must start at 0")
        keep = grid < 1.0
        edges = np.append(grid[keep], 1.0)
        return cls(edges, list(values[keep]))

    # evaluation ---------------------------------------------------------
    @property
    def breakpoints(self) -> np.ndarray:
        return self.edges[1:-1]

    @property
    def is_piecewise_constant(self) -> bool:
        return all(not callable(pc) for pc in self.pieces)

    def _segment_index(self, u):
        idx = np.searchsorted(self.edges, u, side="right") - 1
        return np.clip(idx, 0, len(self.pieces) - 1)

    def omega(self, u):
        """Evaluate at ``u``; returns ``(p, p)`` for a scalar, ``(m, p, p)`` otherwise."""
        scalar = np.ndim(u) == 0
        u = np.atleast_1d(np.asarray(u, dtype=float))
        out = np.empty((u.size, self.p, self.p))
        idx = self._segment_index(u)
        for j in np.unique(idx):
            mask = idx == j
            piece = self.pieces[j]
            out[mask] = piece(u[mask]) if callable(piece) else piece
        return out[0] if scalar else out

    __call__ = omega

    def sigma(self, u):
        """Lower Cholesky factor of ``Omega(u)`` (nonnegative root when p=1).

        Singular matrices fall back to the symmetric PSD square root.
        """
        om = self.omega(u)
        return _matrix_root(om)

    def integrated(self) -> np.ndarray:
        """``int_0^1 Omega(u) du``."""
        return self.cumulative(np.array([1.0]))[0]

    def cumulative(self, r) -> np.ndarray:
        """``int_0^r Omega(u) du`` for a sorted array ``r``; shape ``(len(r), p, p)``.

        Constant pieces are integrated exactly; smooth pieces with an 8-point
        Gauss-Legendre rule on every sub-cell between consecutive ``r`` and
        segment edges.
        """
        r = np.asarray(r, dtype=float)
        knots = np.union1d(np.union1d(r, self.edges), [0.0])
        knots = knots[(knots >= 0.0) & (knots <= 1.0)]
        lo, hi = knots[:-1], knots[1:]
        mid = 0.5 * (lo + hi)
        seg = self._segment_index(mid)
        cell = np.zeros((lo.size, self.p, self.p))
        for j in np.unique(seg):
            mask = seg == j
            piece = self.pieces[j]
            width = hi[mask] - lo[mask]
            if callable(piece):
                nodes = (0.5 * width[:, None] * (_GL_NODES[None, :] + 1.0) + lo[mask][:, None]).ravel()
                vals = piece(nodes).reshape(width.size, _GL_NODES.size, self.p, self.p)
                cell[mask] = 0.5 * width[:, None, None] * np.einsum("k,ikab->iab", _GL_WEIGHTS, vals)
            else:
                cell[mask] = width[:, None, None] * piece[None]
        cum = np.concatenate([np.zeros((1, self.p, self.p)), np.cumsum(cell, axis=0)])
        pos = np.searchsorted(knots, r)
        return cum[pos]

    def sup_norm(self) -> float:
        """``sup_u ||Omega(u)||`` (spectral norm), scanned on a fine grid."""
        u = np.union1d(np.linspace(0.0, 1.0, 2001), self.edges)
        u = np.union1d(u, np.maximum(self.edges[1:] - 1e-12, 0.0))
        om = self.omega(u)
        return float(np.max(np.linalg.norm(om, ord=2, axis=(1, 2))))

    def scaled(self, c: float) -> "VariancePath":
        pieces = [
            (lambda u, f=pc: c * f(u)) if callable(pc) else c * pc for pc in self.pieces
        ]
        return type(self)(self.edges, pieces, self.p)

    def __repr__(self):
        return f"{type(self).__name__}(p={self.p}, segments={len(self.pieces)})"


class RegressorMomentPath(VariancePath):
    """Second-moment curve ``Q(u)`` of the regressors; positive definite."""

    def __init__(self, edges, pieces, p=None):
        super().__init__(edges, pieces, p)
        qbar = self.integrated()
        if np.linalg.eigvalsh(qbar).min() <= 0.0:
            raise InvalidSpec("integrated regressor moment matrix is not positive definite")

    @property
    def qbar(self) -> np.ndarray:
        return self.integrated()


def _matrix_root(om: np.ndarray) -> np.ndarray:
    om = np.asarray(om, dtype=float)
    if om.shape[-1] == 1:
        return np.sqrt(np.maximum(om, 0.0))
    try:
        return np.linalg.cholesky(om)
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(om)
        return (v * np.sqrt(np.maximum(w, 0.0))[..., None, :]) @ np.swapaxes(v, -1, -2)


# --------------------------------------------------------------------------
# DGP specification


def _as_ramp(value):
    if isinstance(value, (list, tuple)):
        if len(value) != 2:
            raise InvalidSpec("ramps are given as [start, end]")
        return (float(value[0]), float(value[1]))
    return float(value)


@dataclass(frozen=True)
class Segment:
    """One piece of a tv-AR(1) parameter path.

    ``rho`` and ``sigma2`` are constants or ``(start, end)`` pairs that are
    linearly interpolated across the segment.
    """

    u_start: float
    u_end: float
    rho: float | tuple = 0.0
    sigma2: float | tuple = 1.0

    def _interp(self, value, u):
        if isinstance(value, tuple):
            w = (u - self.u_start) / (self.u_end - self.u_start)
            return value[0] + w * (value[1] - value[0])
        return np.full_like(u, value, dtype=float)

    def rho_at(self, u):
        return self._interp(self.rho, np.asarray(u, dtype=float))

    def sigma2_at(self, u):
        return self._interp(self.sigma2, np.asarray(u, dtype=float))

    @property
    def constant(self) -> bool:
        return not isinstance(self.rho, tuple) and not isinstance(self.sigma2, tuple)

    @property
    def rho_bound(self) -> float:
        vals = self.rho if isinstance(self.rho, tuple) else (self.rho,)
        return max(abs(v) for v in vals)

    def to_dict(self) -> dict:
        conv = lambda v: list(v) if isinstance(v, tuple) else v
        return {"u_start": self.u_start, "u_end": self.u_end, "rho": conv(self.rho), "sigma2": conv(self.sigma2)}


@dataclass(frozen=True)
class ArPath:
    """Piecewise tv-AR(1) parameter path covering ``[0, 1]``."""

    segments: tuple

    def __post_init__(self):
        segs = self.segments
        if not segs:
            raise InvalidSpec("at least one segment is required")
        if segs[0].u_start != 0.0 or segs[-1].u_end != 1.0:
            raise InvalidSpec("segments must cover [0, 1]")
        for a, b in zip(segs[:-1], segs[1:]):
            if a.u_end != b.u_start:
                raise InvalidSpec("segments must be contiguous")
        for s in segs:
            if s.u_end <= s.u_start:
                raise InvalidSpec("empty segment")
            if s.rho_bound >= 1.0:
                raise InvalidSpec(f"|rho| must stay below 1, got {s.rho}")
            s2 = s.sigma2 if isinstance(s.sigma2, tuple) else (s.sigma2,)
            if min(s2) <= 0.0:
                raise InvalidSpec("sigma2 must be positive")

    @classmethod
    def constant(cls, rho: float = 0.0, sigma2: float = 1.0) -> "ArPath":
        return cls((Segment(0.0, 1.0, rho, sigma2),))

    @classmethod
    def breaks(cls, breaks: Sequence[float], rhos: Sequence, sigma2s: Sequence) -> "ArPath":
        edges = [0.0, *breaks, 1.0]
        return cls(tuple(Segment(edges[i], edges[i + 1], _as_ramp(rhos[i]), _as_ramp(sigma2s[i]))
                         for i in range(len(edges) - 1)))

    @classmethod
    def from_dict(cls, d) -> "ArPath":
        segs = d["segments"] if isinstance(d, dict) else d
        try:
            return cls(tuple(
                Segment(float(s["u_start"]), float(s["u_end"]), _as_ramp(s.get("rho", 0.0)),
                        _as_ramp(s.get("sigma2", 1.0)))
                for s in segs
            ))
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidSpec(f"malformed segment list: {exc}") from None

    def to_dict(self) -> dict:
        return {"segments": [s.to_dict() for s in self.segments]}

    @property
    def edges(self) -> np.ndarray:
        return np.array([0.0] + [s.u_end for s in self.segments])

    @property
    def rho_max(self) -> float:
        return max(s.rho_bound for s in self.segments)

    def _index(self, u):
        return np.clip(np.searchsorted(self.edges, u, side="right") - 1, 0, len(self.segments) - 1)

    def _eval(self, attr, u):
        u = np.atleast_1d(np.asarray(u, dtype=float))
        out = np.empty_like(u)
        idx = self._index(u)
        for j in np.unique(idx):
            m = idx == j
            out[m] = getattr(self.segments[j], attr)(u[m])
        return out

    def rho(self, u):
        return self._eval("rho_at", u)

    def sigma2(self, u):
        return self._eval("sigma2_at", u)

    def local_lrv(self, u):
        """``sigma^2(u) / (1 - rho(u))^2``."""
        return self.sigma2(u) / (1.0 - self.rho(u)) ** 2

    def local_variance(self, u):
        """Stationary variance ``sigma^2(u) / (1 - rho(u)^2)`` of the local AR(1)."""
        return self.sigma2(u) / (1.0 - self.rho(u) ** 2)

    def pieces(self, fn: Callable) -> list:
        """Per-segment pieces of ``u -> fn(self, u)`` for :class:`VariancePath`."""
        out = []
        for s in self.segments:
            if s.constant:
                out.append(np.atleast_2d(fn(self, np.array([s.u_start]))[0]))
            else:
                out.append(lambda u, f=fn: np.asarray(f(self, u))[:, None, None])
        return out

    # simulation ---------------------------------------------------------
    def simulate(self, T: int, rng: np.random.Generator) -> np.ndarray:
        rho0 = float(self.segments[0].rho_at(np.array([0.0]))[0])
        s20 = float(self.segments[0].sigma2_at(np.array([0.0]))[0])
        n_burn = 5 * math.ceil(1.0 / (1.0 - self.rho_max))
        eps = rng.standard_normal(1 + n_burn + T)
        v = eps[0] * math.sqrt(s20 / (1.0 - rho0**2))
        if n_burn:
            burn = signal.lfilter([1.0], [1.0, -rho0], math.sqrt(s20) * eps[1:1 + n_burn], zi=[rho0 * v])[0]
            v = burn[-1]
        u = np.arange(1, T + 1) / T
        rho = self.rho(u)
        innov = np.sqrt(self.sigma2(u)) * eps[1 + n_burn:]
        out = np.empty(T)
        idx = self._index(u)
        for j in np.unique(idx):
            where = np.flatnonzero(idx == j)
            start, stop = where[0], where[-1] + 1
            seg = self.segments[j]
            if isinstance(seg.rho, tuple):
                for t in range(start, stop):
                    v = rho[t] * v + innov[t]
                    out[t] = v
            else:
                r = float(seg.rho)
                out[start:stop] = signal.lfilter([1.0], [1.0, -r], innov[start:stop], zi=[r * v])[0]
                v = out[stop - 1]
        return out

    def autocov(self, T: int) -> np.ndarray:
        """Exact T x T covariance matrix of ``(V_1, ..., V_T)``."""
        rho0 = float(self.segments[0].rho_at(np.array([0.0]))[0])
        s20 = float(self.segments[0].sigma2_at(np.array([0.0]))[0])
        u = np.arange(1, T + 1) / T
        rho = self.rho(u)
        s2 = self.sigma2(u)
        ups = np.zeros((T, T))
        var = s20 / (1.0 - rho0**2)
        prev = np.zeros(0)
        for t in range(T):
            var = rho[t] ** 2 * var + s2[t]
            row = ups[t]
            row[:t] = rho[t] * prev
            row[t] = var
            prev = row[: t + 1]
        return np.tril(ups) + np.tril(ups, -1).T


@dataclass(frozen=True)
class DgpSpec:
    """Location or linear-regression model with tv-AR(1) errors.

    Regressors (regression model only) are independent tv-AR(1) processes
    with mean zero; an all-ones column is always the first regressor.  The
    data are generated under ``beta = beta0 + d / sqrt(T)``.
    """

    errors: ArPath
    model: str = "location"
    regressors: tuple = ()
    beta0: tuple = (0.0,)
    d: tuple = ()

    def __post_init__(self):
        if self.model not in ("location", "regression"):
            raise InvalidSpec(f"unknown model {self.model!r}")
        if self.model == "location" and self.regressors:
            raise InvalidSpec("the location model takes no regressors")
        if len(self.beta0) != self.p:
            raise InvalidSpec(f"beta0 must have {self.p} entries")
        if self.d and len(self.d) != self.p:
            raise InvalidSpec(f"d must have {self.p} entries")

    @property
    def p(self) -> int:
        return 1 + len(self.regressors)

    @property
    def rho_max(self) -> float:
        return max([self.errors.rho_max] + [r.rho_max for r in self.regressors])

    @property
    def breakpoints(self) -> np.ndarray:
        pts = [self.errors.edges[1:-1]] + [r.edges[1:-1] for r in self.regressors]
        return np.unique(np.concatenate(pts))

    def with_offset(self, d) -> "DgpSpec":
        d = tuple(float(v) for v in np.atleast_1d(d))
        if len(d) == 1 and self.p > 1:
            d = d * self.p
        return DgpSpec(self.errors, self.model, self.regressors, self.beta0, d)

    @classmethod
    def from_dict(cls, d: dict) -> "DgpSpec":
        if "errors" not in d:
            raise InvalidSpec("DGP spec needs an 'errors' entry")
        model = d.get("model", "location")
        regs = tuple(ArPath.from_dict(r) for r in d.get("regressors", []))
        p = 1 + len(regs)
        beta0 = tuple(float(v) for v in np.atleast_1d(d.get("beta0", [0.0] * p)))
        off = d.get("d", ())
        off = tuple(float(v) for v in np.atleast_1d(off)) if off != () else ()
        return cls(ArPath.from_dict(d["errors"]), model, regs, beta0, off)

    @classmethod
    def from_json(cls, path) -> "DgpSpec":
        try:
            with open(path) as fh:
                return cls.from_dict(json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read DGP spec {path}: {exc}") from None

    def to_dict(self) -> dict:
        out = {"model": self.model, "errors": self.errors.to_dict(), "beta0": list(self.beta0)}
        if self.regressors:
            out["regressors"] = [r.to_dict() for r in self.regressors]
        if self.d:
            out["d"] = list(self.d)
        return out

    # convenience constructors used by tests and shipped specs
    @classmethod
    def iid(cls, sigma2: float = 1.0, beta0: float = 0.0) -> "DgpSpec":
        return cls(ArPath.constant(0.0, sigma2), beta0=(beta0,))

    @classmethod
    def ar1(cls, rho: float, sigma2: float = 1.0, beta0: float = 0.0) -> "DgpSpec":
        return cls(ArPath.constant(rho, sigma2), beta0=(beta0,))

    @classmethod
    def variance_break(cls, before: float = 1.0, after: float = 4.0, at: float = 0.5, rho: float = 0.0,
                       beta0: float = 0.0) -> "DgpSpec":
        return cls(ArPath.breaks([at], [rho, rho], [before, after]), beta0=(beta0,))


@dataclass
class SamplePath:
    """Observed (or simulated) data ``y_t = x_t' beta + e_t``."""

    y: np.ndarray
    x: np.ndarray
    seed: str = ""
    e: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float).ravel()
        x = np.asarray(self.x, dtype=float)
        self.x = x.reshape(-1, 1) if x.ndim == 1 else x
        if self.x.shape[0] != self.y.size:
            raise DataError("y and x have different lengths")
        if not (np.all(np.isfinite(self.y)) and np.all(np.isfinite(self.x))):
            raise DataError("sample contains non-finite values")
        if self.T < self.p + 2:
            raise DataError(f"need T >= p + 2, got T={self.T}, p={self.p}")

    @property
    def T(self) -> int:
        return self.y.size

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @classmethod
    def location(cls, y) -> "SamplePath":
        y = np.asarray(y, dtype=float)
        return cls(y, np.ones((y.size, 1)))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "y"] + [f"x{j + 1}" for j in range(self.p)])
            for t in range(self.T):
                w.writerow([t + 1, repr(float(self.y[t]))] + [repr(float(v)) for v in self.x[t]])


def read_sample_csv(path) -> SamplePath:
    """Read a sample written by :meth:`SamplePath.to_csv` (header ``t,y,x1..xp``).

    A file with only ``t,y`` columns is read as a location model.
    """
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    if not rows or rows[0][:2] != ["t", "y"]:
        raise DataError(f"{path}: expected header t,y,x1..xp")
    try:
        data = np.array([[float(v) for v in row] for row in rows[1:] if row], dtype=float)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    if data.ndim != 2 or data.shape[0] == 0:
        raise DataError(f"{path}: no observations")
    y = data[:, 1]
    x = data[:, 2:] if data.shape[1] > 2 else np.ones((y.size, 1))
    return SamplePath(y, x, seed=f"file:{path}")


# --------------------------------------------------------------------------
# operations


def simulate(spec: DgpSpec, T: int, seed) -> SamplePath:
    """Draw one sample of length ``T``.  Pure in ``(spec, T, seed)``."""
    if T < 10:
        raise InvalidSpec("T must be at least 10")
    rng = np.random.default_rng(seed)
    e = spec.errors.simulate(T, rng)
    cols = [np.ones(T)] + [r.simulate(T, rng) for r in spec.regressors]
    x = np.column_stack(cols)
    beta = np.asarray(spec.beta0, dtype=float)
    if spec.d:
        beta = beta + np.asarray(spec.d) / math.sqrt(T)
    y = x @ beta + e
    return SamplePath(y, x, seed=repr(seed), e=e)


def _check_continuity(spec: DgpSpec, u: float) -> None:
    if not 0.0 <= u <= 1.0:
        raise BreakPoint(f"u={u} lies outside [0, 1]")
    if np.any(np.isclose(spec.breakpoints, u, rtol=0.0, atol=1e-14)):
        raise BreakPoint(f"u={u} is a discontinuity point of the DGP")


def _local_lrv_matrix(spec: DgpSpec, u) -> np.ndarray:
    u = np.atleast_1d(np.asarray(u, dtype=float))
    p = spec.p
    out = np.zeros((u.size, p, p))
    out[:, 0, 0] = spec.errors.local_lrv(u)
    if p > 1:
        ve = spec.errors.local_variance(u)
        re = spec.errors.rho(u)
        for j, reg in enumerate(spec.regressors, start=1):
            rx = reg.rho(u)
            out[:, j, j] = reg.local_variance(u) * ve * (1.0 + rx * re) / (1.0 - rx * re)
    return out


def true_local_lrv(spec: DgpSpec, u: float) -> np.ndarray:
    """Local long-run variance ``Omega(u)`` (p x p) at a continuity point."""
    _check_continuity(spec, float(u))
    return _local_lrv_matrix(spec, float(u))[0]


def _edges(spec: DgpSpec) -> np.ndarray:
    return np.concatenate([[0.0], spec.breakpoints, [1.0]])


def variance_path(spec: DgpSpec) -> VariancePath:
    """``Omega(u)`` as a :class:`VariancePath`."""
    edges = _edges(spec)
    paths = [spec.errors, *spec.regressors]
    pieces = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        mid = 0.5 * (lo + hi)
        const = all(path.segments[path._index(np.array([mid]))[0]].constant for path in paths)
        if const:
            pieces.append(_local_lrv_matrix(spec, mid)[0])
        else:
            pieces.append(lambda u: _local_lrv_matrix(spec, u))
    return VariancePath(edges, pieces, spec.p)


def regressor_moment_path(spec: DgpSpec) -> RegressorMomentPath:
    """``Q(u) = E[x_t x_t']`` at rescaled time ``u``."""
    edges = _edges(spec)
    p = spec.p

    def q_of(u):
        u = np.atleast_1d(np.asarray(u, dtype=float))
        out = np.zeros((u.size, p, p))
        out[:, 0, 0] = 1.0
        for j, reg in enumerate(spec.regressors, start=1):
            out[:, j, j] = reg.local_variance(u)
        return out

    pieces = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        mid = 0.5 * (lo + hi)
        const = all(r.segments[r._index(np.array([mid]))[0]].constant for r in spec.regressors)
        pieces.append(q_of(mid)[0] if const else q_of)
    return RegressorMomentPath(edges, pieces, p)


def true_integrated_lrv(spec: DgpSpec) -> np.ndarray:
    """``Omega = int_0^1 Omega(u) du``: exact on constant pieces, Gauss-Legendre
    on smooth ones (error far below 1e-10 for the shipped ramps)."""
    path = variance_path(spec)
    if path.is_piecewise_constant:
        return path.integrated()
    out = np.zeros((spec.p, spec.p))
    for lo, hi, piece in zip(path.edges[:-1], path.edges[1:], path.pieces):
        if callable(piece):
            val, _ = integrate.quad_vec(lambda u: piece(np.array([u]))[0], lo, hi, epsabs=1e-12, epsrel=1e-12)
            out += val
        else:
            out += (hi - lo) * piece
    return out


def autocov_matrix(path: ArPath, T: int) -> np.ndarray:
    """Exact covariance matrix of one tv-AR(1) path; dense, capped at T <= 5000."""
    if T > EXACT_T_CAP:
        raise TooLarge(f"dense T x T computation capped at T={EXACT_T_CAP}")
    return path.autocov(T)


def exact_scaled_sum_variance(spec: DgpSpec, T: int) -> np.ndarray:
    """``Var(T^{-1/2} S_T)`` computed from the exact covariance matrices."""
    if T > EXACT_T_CAP:
        raise TooLarge(f"dense T x T computation capped at T={EXACT_T_CAP}")
    ups_e = autocov_matrix(spec.errors, T)
    out = np.zeros((spec.p, spec.p))
    out[0, 0] = ups_e.sum() / T
    for j, reg in enumerate(spec.regressors, start=1):
        out[j, j] = np.sum(autocov_matrix(reg, T) * ups_e) / T
    return out
