"""Analytic moments and cumulants of the fixed-b limit and a chi-square expansion.

For a scalar nuisance path ``Omega(u)`` the normalised limit
``zeta_b = G_b / Omega`` (``Omega = int Omega(u) du``) is a Gaussian
quadratic form with kernel ``K_b*(r, s)``.  Its mean and cumulants are

    mu_b    = int K_b*(s, s) Omega(s) ds,
    kappa_m = 2^{m-1} (m-1)! Omega^{-m} int...int prod_j Omega(tau_j) K_b*(tau_j, tau_{j+1}) dtau

with the cyclic convention ``tau_{m+1} = tau_1``.  The m-fold cyclic integral
is evaluated with the midpoint rule on an N-point grid; because the index
pattern is a cycle, the N^m-term tensor sum equals ``trace(M^m)`` with
``M = N^{-1} D^{1/2} K* D^{1/2}`` and ``D = diag(Omega(tau_i))``, which is
computed from the eigenvalues of ``M``.

Finite-sample counterparts replace the integral operator by the T x T
matrices of the exact data covariance ``Upsilon_T``, the demeaning projector
``A_T`` and the kernel weights ``W_b``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import integrate, special, stats

from ..dgp import DgpSpec, VariancePath, autocov_matrix
from ..errors import BandwidthTooLarge, InvalidSpec, TooLarge
from ..kernels import BandwidthedKernel, demeaned_kernel, get_lag_kernel, kernel_abs_integral

__all__ = [
    "MomentReport",
    "mean_G_b",
    "cumulants_asymptotic",
    "cumulant_grid_check",
    "lemma1_bound",
    "finite_T_moments",
    "cumulants_finite_T",
    "central_moments_from_cumulants",
    "chi2_cdf_derivative",
    "expansion_rejection_approx",
    "moment_report",
]

DEFAULT_CUMULANT_GRID = 400
FINITE_T_CAP = 2000


def _kb(kernel, b=None) -> BandwidthedKernel:
    if isinstance(kernel, BandwidthedKernel):
        return kernel
    return BandwidthedKernel(get_lag_kernel(kernel), 1.0 if b is None else float(b))


def _scalar_path(path) -> VariancePath:
    if not isinstance(path, VariancePath):
        path = VariancePath.constant(float(path))
    if path.p != 1:
        raise InvalidSpec("moment calculations are for scalar paths (p = 1)")
    return path


def _omega_fn(path: VariancePath):
    return lambda u: path.omega(np.atleast_1d(u))[:, 0, 0]


def mean_G_b(kernel, path, b: float | None = None) -> float:
    """``mu_b = int_0^1 K_b*(s, s) Omega(s) ds`` by adaptive quadrature."""
    kb = _kb(kernel, b)
    path = _scalar_path(path)
    om = _omega_fn(path)
    pts = sorted({float(x) for x in np.concatenate([path.breakpoints, [kb.b, 1.0 - kb.b]]) if 0.0 < x < 1.0})
    val, _ = integrate.quad(
        lambda s: float(demeaned_kernel(kb, s, s)) * float(om(s)[0]), 0.0, 1.0,
        points=pts or None, epsabs=1e-11, epsrel=1e-11, limit=500,
    )
    return float(val)


def _operator_eigs(kb: BandwidthedKernel, path: VariancePath, n_grid: int) -> np.ndarray:
    tau = (np.arange(n_grid) + 0.5) / n_grid
    d = np.sqrt(_omega_fn(path)(tau))
    kstar = demeaned_kernel(kb, tau[:, None], tau[None, :])
    m = (d[:, None] * kstar * d[None, :]) / n_grid
    return np.linalg.eigvalsh(0.5 * (m + m.T))


def cumulants_asymptotic(kernel, path, m: int, b: float | None = None,
                         n_grid: int = DEFAULT_CUMULANT_GRID) -> float:
    """``kappa_m`` (m = 2, 3, 4) of ``G_b / Omega`` by midpoint quadrature on ``n_grid`` points."""
    if m not in (2, 3, 4):
        raise InvalidSpec("asymptotic cumulants are implemented for m = 2, 3, 4")
    kb = _kb(kernel, b)
    path = _scalar_path(path)
    omega = float(path.integrated()[0, 0])
    lam = _operator_eigs(kb, path, n_grid)
    return float(2 ** (m - 1) * math.factorial(m - 1) * np.sum(lam**m) / omega**m)


def cumulant_grid_check(kernel, path, m: int, b: float | None = None,
                        n_grid: int = DEFAULT_CUMULANT_GRID) -> tuple[float, float]:
    """``(kappa_m on n_grid, |change| when the grid is doubled)``."""
    a = cumulants_asymptotic(kernel, path, m, b, n_grid)
    c = cumulants_asymptotic(kernel, path, m, b, 2 * n_grid)
    return a, abs(c - a)


def lemma1_bound(kernel, path, m: int, b: float | None = None) -> float:
    """``2^m (m-1)! Omega^{-m} C_Omega^m (C1 b)^{m-1}`` with ``C1 = 4 int |K|``."""
    kb = _kb(kernel, b)
    path = _scalar_path(path)
    omega = float(path.integrated()[0, 0])
    c_omega = path.sup_norm()
    c1 = 4.0 * kernel_abs_integral(kb.base.name)
    return float(2**m * math.factorial(m - 1) * (c_omega / omega) ** m * (c1 * kb.b) ** (m - 1))


def finite_T_moments(spec: DgpSpec, T: int, kernel, b: float, ms=(2, 3, 4)) -> dict:
    """``mu_{b,T}`` and ``kappa_{m,T}`` from the exact T x T matrices.

    Uses ``Tr((Upsilon A W A)^m) = sum lambda^m`` with ``lambda`` the
    eigenvalues of the symmetric ``L' A W A L``, ``Upsilon = L L'``.
    """
    if T > FINITE_T_CAP:
        raise TooLarge(f"finite-T cumulants are capped at T={FINITE_T_CAP}")
    if spec.p != 1:
        raise InvalidSpec("finite-T cumulants are implemented for the location model")
    kern = get_lag_kernel(kernel)
    ups = autocov_matrix(spec.errors, T)
    omega_T = ups.sum() / T
    idx = np.arange(T)
    w = kern((idx[:, None] - idx[None, :]) / (T * b))
    # A W A: double demeaning of rows and columns
    awa = w - w.mean(axis=0, keepdims=True)
    awa = awa - awa.mean(axis=1, keepdims=True)
    chol = np.linalg.cholesky(ups)
    sym = chol.T @ awa @ chol
    lam = np.linalg.eigvalsh(0.5 * (sym + sym.T))
    out = {"omega_T": float(omega_T), "mu": float(lam.sum() / (T * omega_T)), "kappa": {1: 0.0}}
    for m in ms:
        out["kappa"][m] = float(
            2 ** (m - 1) * math.factorial(m - 1) * np.sum((lam / (T * omega_T)) ** m)
        )
    return out


def cumulants_finite_T(spec: DgpSpec, T: int, kernel, b: float, m: int) -> float:
    """``kappa_{m,T}``; ``m = 1`` returns 0 (centred cumulant)."""
    if m == 1:
        return 0.0
    return finite_T_moments(spec, T, kernel, b, ms=(m,))["kappa"][m]


def central_moments_from_cumulants(kappa: dict) -> dict:
    """``Xi_0..Xi_4`` from cumulants: ``Xi_2 = k2, Xi_3 = k3, Xi_4 = k4 + 3 k2^2``."""
    k2, k3, k4 = kappa.get(2, 0.0), kappa.get(3, 0.0), kappa.get(4, 0.0)
    return {0: 1.0, 1: 0.0, 2: k2, 3: k3, 4: k4 + 3.0 * k2**2}


def chi2_cdf_derivative(x: float, order: int) -> float:
    """``d^order/dx^order`` of the chi-square(1) cdf at ``x > 0``."""
    if order == 0:
        return float(stats.chi2.cdf(x, 1))
    j = order - 1  # derivative order of the density c x^{-1/2} e^{-x/2}
    c = 1.0 / math.sqrt(2.0 * math.pi)
    total = 0.0
    for i in range(j + 1):
        # d^i x^{-1/2} = (-1/2)(-3/2)...(-1/2 - i + 1) x^{-1/2 - i}
        coef = float(special.poch(-0.5 - i + 1, i)) if i else 1.0
        total += special.comb(j, i) * coef * x ** (-0.5 - i) * (-0.5) ** (j - i)
    return float(c * math.exp(-x / 2.0) * total)


def expansion_rejection_approx(kernel, path, z: float, b: float | None = None, m_max: int = 3,
                               enforce_bound: bool = True, n_grid: int = DEFAULT_CUMULANT_GRID) -> float:
    """Approximate ``P(|t| <= z)`` by ``sum_{m <= m_max} F^{(m)}(mu z^2) Xi_m z^{2m} / m!``.

    ``mu = mu_b / Omega`` and ``Xi_m`` are the central moments of
    ``G_b / Omega``.  With ``enforce_bound`` the bandwidth must satisfy
    ``b < 1 / (16 max(C_Omega, 1) int |K|)``.
    """
    kb = _kb(kernel, b)
    path = _scalar_path(path)
    if not 0 <= m_max <= 4:
        raise InvalidSpec("m_max must lie in 0..4")
    if enforce_bound:
        limit = 1.0 / (16.0 * max(path.sup_norm(), 1.0) * kernel_abs_integral(kb.base.name))
        if kb.b >= limit:
            raise BandwidthTooLarge(f"b={kb.b} must be below {limit:.6g} for the expansion")
    z = abs(float(z))
    if z == 0.0:
        return 0.0
    omega = float(path.integrated()[0, 0])
    mu = mean_G_b(kb, path) / omega
    kappa = {m: cumulants_asymptotic(kb, path, m, n_grid=n_grid) for m in range(2, max(m_max, 1) + 1) if m >= 2}
    xi = central_moments_from_cumulants(kappa)
    x = mu * z * z
    total = 0.0
    for m in range(m_max + 1):
        total += chi2_cdf_derivative(x, m) * xi[m] * z ** (2 * m) / math.factorial(m)
    return float(total)


@dataclass
class MomentReport:
    """Mean, cumulants and Lemma-1 bounds of the normalised fixed-b limit."""

    kernel: str
    b: float
    mu_b: float
    omega: float
    kappa: dict
    bounds: dict
    grid_change: dict = field(default_factory=dict)
    finite_T: dict | None = None

    def within_bounds(self) -> bool:
        return all(abs(self.kappa[m]) <= self.bounds[m] for m in self.kappa)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["kappa"] = {str(k): v for k, v in self.kappa.items()}
        out["bounds"] = {str(k): v for k, v in self.bounds.items()}
        out["grid_change"] = {str(k): v for k, v in self.grid_change.items()}
        return out


def moment_report(kernel, path, b: float | None = None, ms=(2, 3, 4), spec: DgpSpec | None = None,
                  T: int | None = None) -> MomentReport:
    kb = _kb(kernel, b)
    path = _scalar_path(path)
    kappa, change = {}, {}
    for m in ms:
        kappa[m], change[m] = cumulant_grid_check(kb, path, m)
    report = MomentReport(
        kernel=kb.base.name, b=kb.b, mu_b=mean_G_b(kb, path), omega=float(path.integrated()[0, 0]),
        kappa=kappa, bounds={m: lemma1_bound(kb, path, m) for m in ms}, grid_change=change,
    )
    if spec is not None and T is not None:
        report.finite_T = finite_T_moments(spec, T, kb.base, kb.b, ms)
    return report
