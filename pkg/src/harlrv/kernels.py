"""Lag kernels, time-smoothing kernels and the demeaned kernel ``K_b*``.

Lag kernels map a (scaled) lag to a weight in ``[-1, 1]`` and are used by the
HAC, fixed-b and local long-run variance estimators.  Time kernels live on
``[0, 1]``, are symmetric about 1/2 and integrate to one; they smooth the
local autocovariances over rescaled time.

All evaluators are vectorised over numpy arrays.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy import integrate, special

from .errors import NonPsdKernel, OutOfRange, UnsupportedKernel

__all__ = [
    "LagKernel",
    "TimeKernel",
    "BandwidthedKernel",
    "BARTLETT",
    "PARZEN",
    "QS",
    "TUKEY_HANNING",
    "TRUNCATED",
    "UNIFORM",
    "TRIANGULAR",
    "QUARTIC",
    "get_lag_kernel",
    "get_time_kernel",
    "eval_lag_kernel",
    "eval_lag_kernel_dd",
    "discrete_second_difference",
    "demeaned_kernel",
    "parzen_exponent",
    "kernel_abs_integral",
]

_QS_C = 6.0 * math.pi / 5.0
_QS_SERIES_CUT = 0.5


# --------------------------------------------------------------------------
# closed forms


def _bartlett(x):
    ax = np.abs(x)
    return np.where(ax <= 1.0, 1.0 - ax, 0.0)


def _truncated(x):
    return np.where(np.abs(x) < 1.0, 1.0, 0.0)


def _parzen(x):
    ax = np.abs(x)
    inner = 1.0 - 6.0 * ax**2 + 6.0 * ax**3
    outer = 2.0 * (1.0 - ax) ** 3
    return np.where(ax <= 0.5, inner, np.where(ax <= 1.0, outer, 0.0))


def _tukey_hanning(x):
    ax = np.abs(x)
    return np.where(ax <= 1.0, 0.5 * (1.0 + np.cos(np.pi * ax)), 0.0)


def _qs(x):
    z = _QS_C * np.abs(np.asarray(x, dtype=float))
    small = z < _QS_SERIES_CUT
    zs = np.where(small, 1.0, z)
    closed = 3.0 * (np.sin(zs) - zs * np.cos(zs)) / zs**3
    z2 = z * z
    series = 1.0 - z2 / 10.0 + z2**2 / 280.0 - z2**3 / 15120.0 + z2**4 / 1330560.0
    return np.where(small, series, closed)


def _parzen_dd(x):
    ax = np.abs(x)
    return np.where(ax <= 0.5, -12.0 + 36.0 * ax, np.where(ax <= 1.0, 12.0 * (1.0 - ax), 0.0))


def _tukey_hanning_dd(x):
    # |x| = 1 takes the one-sided limit from inside the support
    ax = np.abs(x)
    return np.where(ax <= 1.0, -0.5 * np.pi**2 * np.cos(np.pi * ax), 0.0)


def _qs_dd(x):
    z = _QS_C * np.abs(np.asarray(x, dtype=float))
    small = z < _QS_SERIES_CUT
    zs = np.where(small, 1.0, z)
    s, c = np.sin(zs), np.cos(zs)
    closed = 3.0 * (zs**2 * (zs * c - 5.0 * s) - 12.0 * zs * c + 12.0 * s) / zs**5
    z2 = z * z
    series = -0.2 + 3.0 * z2 / 70.0 - z2**2 / 504.0 + z2**3 / 23760.0 - z2**4 / 1921920.0
    return _QS_C**2 * np.where(small, series, closed)


def _bartlett_anti(y):
    ay = np.minimum(np.abs(y), 1.0)
    return np.sign(y) * (ay - 0.5 * ay**2)


def _truncated_anti(y):
    return np.clip(y, -1.0, 1.0)


def _parzen_anti(y):
    ay = np.minimum(np.abs(y), 1.0)
    inner = ay - 2.0 * ay**3 + 1.5 * ay**4
    outer = 0.375 - 0.5 * (1.0 - ay) ** 4
    return np.sign(y) * np.where(ay <= 0.5, inner, outer)


def _tukey_hanning_anti(y):
    ay = np.minimum(np.abs(y), 1.0)
    return np.sign(y) * (0.5 * ay + np.sin(np.pi * ay) / (2.0 * np.pi))


def _qs_anti(y):
    y = np.asarray(y, dtype=float)
    z = _QS_C * np.abs(y)
    small = z < _QS_SERIES_CUT
    zs = np.where(small, 1.0, z)
    rest = (zs * np.cos(zs) - np.sin(zs)) / zs**2
    rest_series = -z / 3.0 + z**3 / 30.0 - z**5 / 840.0 + z**7 / 45360.0 - z**9 / 3991680.0
    si = special.sici(z)[0]
    return np.sign(y) * 1.5 * (si + np.where(small, rest_series, rest)) / _QS_C


# --------------------------------------------------------------------------
# kernel objects


@dataclass(frozen=True)
class LagKernel:
    """A lag kernel of the class used by HAC and fixed-b estimators.

    ``q0`` is the Parzen characteristic exponent (``None`` for the truncated
    kernel, whose exponent is unbounded).  ``support`` is the half-width of
    the support, ``inf`` for the quadratic spectral kernel.
    """

    name: str
    q0: int | None
    psd: bool
    twice_differentiable: bool
    support: float
    _fn: Callable = None
    _dd: Callable | None = None
    _anti: Callable = None

    def __call__(self, x):
        return eval_lag_kernel(self, x)

    def __repr__(self):
        return f"LagKernel({self.name!r})"


@dataclass(frozen=True)
class TimeKernel:
    """A smoothing kernel on ``[0, 1]``, symmetric about 1/2, unit mass."""

    name: str
    _fn: Callable = None

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        inside = (x >= 0.0) & (x <= 1.0)
        return np.where(inside, self._fn(np.clip(x, 0.0, 1.0)), 0.0)

    def __repr__(self):
        return f"TimeKernel({self.name!r})"


@dataclass(frozen=True)
class BandwidthedKernel:
    """``K_b(x) = K(x / b)`` for a fixed fraction ``b`` in ``(0, 1]``."""

    base: LagKernel
    b: float

    def __post_init__(self):
        if not 0.0 < self.b <= 1.0:
            raise OutOfRange(f"b must lie in (0, 1], got {self.b}")

    def __call__(self, x):
        return self.base(np.asarray(x, dtype=float) / self.b)

    def dd(self, x):
        return eval_lag_kernel_dd(self.base, np.asarray(x, dtype=float) / self.b) / self.b**2

    def antiderivative(self, y):
        """``int_0^y K_b(x) dx``."""
        return self.b * self.base._anti(np.asarray(y, dtype=float) / self.b)

    def inner_integral(self, r):
        """``int_0^1 K_b(r - t) dt`` in closed form."""
        r = np.asarray(r, dtype=float)
        return self.antiderivative(r) - self.antiderivative(r - 1.0)

    def double_integral(self):
        """``int_0^1 int_0^1 K_b(t - s) dt ds``, cached per (kernel, b)."""
        return _double_integral(self.base.name, float(self.b))


BARTLETT = LagKernel("bartlett", 1, True, False, 1.0, _bartlett, None, _bartlett_anti)
PARZEN = LagKernel("parzen", 2, True, True, 1.0, _parzen, _parzen_dd, _parzen_anti)
QS = LagKernel("qs", 2, True, True, math.inf, _qs, _qs_dd, _qs_anti)
TUKEY_HANNING = LagKernel(
    "tukey-hanning", 2, False, True, 1.0, _tukey_hanning, _tukey_hanning_dd, _tukey_hanning_anti
)
TRUNCATED = LagKernel("truncated", None, False, False, 1.0, _truncated, None, _truncated_anti)

_LAG_KERNELS = {k.name: k for k in (BARTLETT, PARZEN, QS, TUKEY_HANNING, TRUNCATED)}
_LAG_ALIASES = {
    "quadratic-spectral": "qs",
    "quadraticspectral": "qs",
    "quadratic_spectral": "qs",
    "tukeyhanning": "tukey-hanning",
    "tukey_hanning": "tukey-hanning",
    "th": "tukey-hanning",
    "newey-west": "bartlett",
}

UNIFORM = TimeKernel("uniform", lambda x: np.ones_like(x))
TRIANGULAR = TimeKernel("triangular", lambda x: 2.0 - 4.0 * np.abs(x - 0.5))
QUARTIC = TimeKernel("quartic", lambda x: 1.875 * (1.0 - (2.0 * x - 1.0) ** 2) ** 2)

_TIME_KERNELS = {k.name: k for k in (UNIFORM, TRIANGULAR, QUARTIC)}


def get_lag_kernel(name) -> LagKernel:
    """Look up a lag kernel by case-insensitive name (instances pass through)."""
    if isinstance(name, LagKernel):
        return name
    key = str(name).strip().lower()
    key = _LAG_ALIASES.get(key, key)
    try:
        return _LAG_KERNELS[key]
    except KeyError:
        raise UnsupportedKernel(f"unknown lag kernel {name!r}") from None


def get_time_kernel(name) -> TimeKernel:
    if isinstance(name, TimeKernel):
        return name
    key = str(name).strip().lower()
    try:
        return _TIME_KERNELS[key]
    except KeyError:
        raise UnsupportedKernel(f"unknown time kernel {name!r}") from None


def require_psd(kernel: LagKernel) -> LagKernel:
    kernel = get_lag_kernel(kernel)
    if not kernel.psd:
        raise NonPsdKernel(f"{kernel.name} kernel is not positive semidefinite; not usable for fixed-b")
    return kernel


# --------------------------------------------------------------------------
# operations


def eval_lag_kernel(k: LagKernel, x):
    k = get_lag_kernel(k)
    out = k._fn(np.asarray(x, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


def eval_lag_kernel_dd(k: LagKernel, x):
    """Analytic second derivative ``K''(x)``.

    Bartlett and truncated kernels have no second derivative at the origin
    (resp. at the support edges) and raise :class:`UnsupportedKernel`.
    """
    k = get_lag_kernel(k)
    if not k.twice_differentiable:
        raise UnsupportedKernel(f"{k.name} kernel has no continuous second derivative")
    out = k._dd(np.asarray(x, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


def discrete_second_difference(k: LagKernel, T: int, r):
    """``D_T(r)``, the scaled second difference of ``K`` on the 1/T lattice."""
    k = get_lag_kernel(k)
    if not k.twice_differentiable:
        raise UnsupportedKernel(f"{k.name} kernel has no continuous second derivative")
    if T < 3:
        raise OutOfRange("T must be at least 3")
    # evaluated on |r| so that the floor does not break the symmetry of D_T
    j = np.floor(T * np.abs(np.asarray(r, dtype=float)))
    out = T**2 * ((k._fn((j + 1) / T) - k._fn(j / T)) - (k._fn(j / T) - k._fn((j - 1) / T)))
    return float(out) if np.ndim(out) == 0 else out


@lru_cache(maxsize=256)
def _double_integral(name: str, b: float) -> float:
    k = _LAG_KERNELS[name]
    if name == "bartlett":
        return b - b * b / 3.0
    val, _ = integrate.quad(
        lambda x: (1.0 - x) * k._fn(x / b), 0.0, 1.0, epsabs=1e-12, epsrel=1e-12, limit=400,
        points=[min(0.5 * b, 1.0), min(b, 1.0)],
    )
    return 2.0 * val


def demeaned_kernel(k: BandwidthedKernel, r, s):
    """Doubly demeaned kernel ``K_b*(r, s)`` on ``[0, 1]^2``.

    Broadcasts over ``r`` and ``s``.  The row/column means are closed-form
    antiderivative differences; the grand mean is a cached quadrature.
    """
    r = np.asarray(r, dtype=float)
    s = np.asarray(s, dtype=float)
    out = k(r - s) - k.inner_integral(r) - k.inner_integral(s) + k.double_integral()
    return float(out) if np.ndim(out) == 0 else out


def parzen_exponent(k: LagKernel):
    """Parzen characteristic exponent; ``None`` for the truncated kernel."""
    return get_lag_kernel(k).q0


@lru_cache(maxsize=16)
def kernel_abs_integral(name: str) -> float:
    """``int |K(x)| dx`` over the real line."""
    k = get_lag_kernel(name)
    if k.name == "qs":
        # |K| ~ 3|cos z| / z^2; integrate to z_max then add the averaged tail
        z_max = 4000.0 * math.pi
        edges = np.arange(0.0, z_max + math.pi, math.pi)
        total = 0.0
        for lo, hi in zip(edges[:-1], edges[1:]):
            val, _ = integrate.quad(lambda z: abs(float(_qs(z / _QS_C))), lo, hi, epsabs=1e-13, limit=100)
            total += val
        total += 3.0 * (2.0 / math.pi) / z_max
        return 2.0 * total / _QS_C
    return 2.0 * float(k._anti(k.support))
