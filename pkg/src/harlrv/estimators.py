"""OLS, sample autocovariances and long-run-variance estimators.

Three families of estimator are provided:

* kernel HAC estimators with a bandwidth ``b_T`` that shrinks with ``T``;
* fixed-b estimators, where the bandwidth is a fixed fraction ``b`` of the
  sample (``b_T = 1 / (T b)``);
* the two-bandwidth local estimator ``Omega_hat(u)``, which smooths over lags
  with a lag kernel ``K1`` (bandwidth ``h1``) and over rescaled time with a
  time kernel ``K2`` (bandwidth ``h2``).

Local windows are centred at ``u``: the time kernel, which lives on
``[0, 1]``, is evaluated at ``x / h2 + 1/2`` where ``x`` is the rescaled
distance between ``u`` and the (half-lag-centred) observation.  Within each
window the time-kernel weights are renormalised to sum to one, which removes
the edge bias near ``u = 0`` and ``u = 1``.
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .dgp import RegressorMomentPath, SamplePath, VariancePath
from .errors import DataError, DegenerateBandwidth, OutOfRange, RankDeficient
from .kernels import LagKernel, TimeKernel, get_lag_kernel, get_time_kernel, require_psd

__all__ = [
    "OlsFit",
    "LrvEstimate",
    "LocalLrvCurve",
    "ols_fit",
    "sample_autocov",
    "hac_lrv",
    "fixed_b_lrv",
    "fixed_b_lrv_bartlett_partial_sums",
    "local_autocov",
    "local_lrv_curve",
    "local_regressor_moment",
    "local_regressor_moment_curve",
    "default_bandwidths",
    "read_curve_csv",
]

MIN_WINDOW_OBS = 8
_FFT_LAG_THRESHOLD = 64


@dataclass
class OlsFit:
    """Least-squares fit of ``y`` on ``x`` with the derived score quantities.

    Attributes
    ----------
    beta_hat : ndarray, shape (p,)
    residuals : ndarray, shape (T,)
    scores : ndarray, shape (T, p)
        ``V_hat_t = x_t e_hat_t``.
    q_hat : ndarray, shape (p, p)
        ``T^{-1} sum x_t x_t'``.
    partial_sums : ndarray, shape (T, p)
        ``S_hat_t = sum_{j <= t} V_hat_j``; the last row vanishes by the
        normal equations.
    """

    beta_hat: np.ndarray
    residuals: np.ndarray
    scores: np.ndarray
    q_hat: np.ndarray
    partial_sums: np.ndarray
    x: np.ndarray = field(repr=False)

    @property
    def T(self) -> int:
        return self.scores.shape[0]

    @property
    def p(self) -> int:
        return self.scores.shape[1]


def ols_fit(sample: SamplePath) -> OlsFit:
    """OLS of ``sample.y`` on ``sample.x``.

    Raises
    ------
    RankDeficient
        If the smallest singular value of ``x`` is below ``1e-10`` times the
        largest.
    """
    x, y = sample.x, sample.y
    sv = np.linalg.svd(x, compute_uv=False)
    if sv[-1] <= 1e-10 * max(sv[0], 1e-300):
        raise RankDeficient("regressor matrix is not of full column rank")
    beta, *_ = np.linalg.lstsq(x, y, rcond=None)
    resid = y - x @ beta
    scores = x * resid[:, None]
    partial = np.cumsum(scores, axis=0)
    return OlsFit(
        beta_hat=beta,
        residuals=resid,
        scores=scores,
        q_hat=x.T @ x / x.shape[0],
        partial_sums=partial,
        x=x,
    )


def sample_autocov(fit: OlsFit, k: int) -> np.ndarray:
    """``Gamma_hat(k) = T^{-1} sum_{t=k+1}^T V_t V_{t-k}'``; ``Gamma_hat(-k) = Gamma_hat(k)'``."""
    T = fit.T
    k = int(k)
    if abs(k) > T - 1:
        raise OutOfRange(f"|k| must be at most T-1={T - 1}, got {k}")
    v = fit.scores
    m = abs(k)
    g = v[m:].T @ v[: T - m] / T
    return g.T if k < 0 else g


def _autocovs(v: np.ndarray, n_lags: int) -> np.ndarray:
    """``Gamma_hat(k)`` for ``k = 0..n_lags`` as an array ``(n_lags+1, p, p)``."""
    T, p = v.shape
    if n_lags <= _FFT_LAG_THRESHOLD:
        return np.stack([v[k:].T @ v[: T - k] / T for k in range(n_lags + 1)])
    nfft = 1 << int(math.ceil(math.log2(2 * T)))
    f = np.fft.rfft(v, n=nfft, axis=0)
    cross = np.fft.irfft(f[:, :, None] * np.conj(f[:, None, :]), n=nfft, axis=0)
    return cross[: n_lags + 1] / T


def _lag_weighted_sum(v: np.ndarray, kernel: LagKernel, scale: float) -> np.ndarray:
    """``sum_k K(scale * k) Gamma_hat(k)`` over ``|k| <= T-1``."""
    T, p = v.shape
    n_lags = T - 1
    if math.isfinite(kernel.support):
        # K(scale * k) = 0 once scale * k reaches the support edge
        n_lags = min(n_lags, int(math.ceil(kernel.support / scale)))
        while n_lags > 0 and kernel(scale * n_lags) == 0.0:
            n_lags -= 1
    gam = _autocovs(v, n_lags)
    w = kernel(scale * np.arange(1, n_lags + 1))
    out = gam[0] + np.einsum("k,kab->ab", w, gam[1:] + np.swapaxes(gam[1:], 1, 2))
    return 0.5 * (out + out.T)


@dataclass(frozen=True)
class LrvEstimate:
    """A long-run variance estimate with its kernel/bandwidth metadata."""

    value: np.ndarray
    kind: str
    kernel: str
    bandwidth: float

    def to_dict(self) -> dict:
        return {"kind": self.kind, "kernel": self.kernel, "bandwidth": self.bandwidth,
                "value": np.asarray(self.value).tolist()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def hac_lrv(fit: OlsFit, kernel, b_T: float) -> LrvEstimate:
    """``sum_{|k| < T} K(b_T k) Gamma_hat(k)``."""
    kernel = get_lag_kernel(kernel)
    if not b_T > 0:
        raise OutOfRange(f"b_T must be positive, got {b_T}")
    return LrvEstimate(_lag_weighted_sum(fit.scores, kernel, float(b_T)), "HAC", kernel.name, float(b_T))


def fixed_b_lrv(fit: OlsFit, kernel, b: float) -> LrvEstimate:
    """``sum_k K(k / (T b)) Gamma_hat(k)`` for a PSD kernel and ``0 < b <= 1``."""
    kernel = require_psd(get_lag_kernel(kernel))
    if not 0.0 < b <= 1.0:
        raise OutOfRange(f"b must lie in (0, 1], got {b}")
    value = _lag_weighted_sum(fit.scores, kernel, 1.0 / (fit.T * b))
    return LrvEstimate(value, "fixed-b", kernel.name, float(b))


def fixed_b_lrv_bartlett_partial_sums(fit: OlsFit) -> LrvEstimate:
    """Bartlett fixed-b estimate with ``b = 1`` via ``2 T^{-2} sum S_i S_i'``."""
    s = fit.partial_sums
    value = 2.0 * (s.T @ s) / fit.T**2
    return LrvEstimate(0.5 * (value + value.T), "fixed-b", "bartlett", 1.0)


# --------------------------------------------------------------------------
# local (time-varying) estimators


def default_bandwidths(T: int) -> tuple[float, float]:
    """Default ``(h1, h2) = (1.5 T^{-1/5}, T^{-1/6})``, capped at 1."""
    return min(1.0, 1.5 * T ** (-0.2)), min(1.0, T ** (-1.0 / 6.0))


def _check_h(name, h):
    if not 0.0 < h <= 1.0:
        raise OutOfRange(f"{name} must lie in (0, 1], got {h}")


def _time_weights(T: int, u: np.ndarray, k: int, h2: float, K2: TimeKernel) -> np.ndarray:
    """Window weights ``K2(x / h2 + 1/2)`` for ``s = |k|+1..T``; shape ``(len(u), T-|k|)``.

    ``x = (floor(T u) - s + |k|/2) / T`` is the rescaled distance between
    ``u`` and the midpoint of the pair ``(s, s-|k|)``.
    """
    m = abs(k)
    s = np.arange(m + 1, T + 1, dtype=float)
    centre = np.floor(T * np.asarray(u, dtype=float))
    x = (centre[:, None] - s[None, :] + 0.5 * m) / T
    return K2(x / h2 + 0.5)


def _normalise(w: np.ndarray) -> np.ndarray:
    n_eff = np.count_nonzero(w > 0.0, axis=1)
    if np.any(n_eff < MIN_WINDOW_OBS):
        raise DegenerateBandwidth(
            f"time window holds fewer than {MIN_WINDOW_OBS} observations; increase h2"
        )
    return w / w.sum(axis=1, keepdims=True)


def _window_mass(T: int, u: np.ndarray, h2: float, K2: TimeKernel) -> np.ndarray:
    """Total lag-0 window weight at each ``u``; every lag is divided by it.

    Sharing one normaliser across lags keeps the usual ``1/T`` convention of
    sample autocovariances: with a window covering the whole sample each
    ``c_hat(u, k)`` is exactly ``Gamma_hat(k)``, and lag-``k`` windows that
    run off the sample simply lose terms instead of being inflated.
    """
    w0 = _time_weights(T, u, 0, h2, K2)
    n_eff = np.count_nonzero(w0 > 0.0, axis=1)
    if np.any(n_eff < MIN_WINDOW_OBS):
        raise DegenerateBandwidth(
            f"time window holds fewer than {MIN_WINDOW_OBS} observations; increase h2"
        )
    return w0.sum(axis=1)


def local_autocov(fit: OlsFit, u: float, k: int, h2: float, K2="uniform") -> np.ndarray:
    """Kernel-weighted local autocovariance ``c_hat(u, k)``.

    Weights are divided by the lag-0 window mass at ``u`` (renormalising the
    window where it is cut by the sample boundary).
    """
    K2 = get_time_kernel(K2)
    _check_h("h2", h2)
    if not 0.0 <= u <= 1.0:
        raise OutOfRange(f"u must lie in [0, 1], got {u}")
    T = fit.T
    if abs(k) >= T:
        raise OutOfRange(f"|k| must be below T={T}, got {k}")
    m = abs(int(k))
    uu = np.array([u], dtype=float)
    w = _time_weights(T, uu, m, h2, K2)[0] / _window_mass(T, uu, h2, K2)[0]
    v = fit.scores
    c = (v[m:] * w[:, None]).T @ v[: T - m]
    return c.T if k < 0 else c


def _psd_root(om: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Clip negative eigenvalues to zero; return the projection and its symmetric root."""
    om = 0.5 * (om + np.swapaxes(om, -1, -2))
    if om.shape[-1] == 1:
        proj = np.maximum(om, 0.0)
        return proj, np.sqrt(proj)
    w, vec = np.linalg.eigh(om)
    w = np.maximum(w, 0.0)
    proj = (vec * w[..., None, :]) @ np.swapaxes(vec, -1, -2)
    root = (vec * np.sqrt(w)[..., None, :]) @ np.swapaxes(vec, -1, -2)
    return proj, root


@dataclass
class LocalLrvCurve:
    """Local long-run variance ``Omega_hat(u_i)`` on a grid, PSD-projected.

    ``sigma`` holds the symmetric PSD square roots, so
    ``sigma[i] @ sigma[i].T == omega[i]`` up to rounding.  ``q_hat`` is the
    optional local regressor moment on the same grid.
    """

    grid: np.ndarray
    omega: np.ndarray
    sigma: np.ndarray
    h1: float
    h2: float
    K1: str
    K2: str
    q_hat: np.ndarray | None = None

    @property
    def p(self) -> int:
        return self.omega.shape[-1]

    def variance_path(self) -> VariancePath:
        """Step interpolation of ``Omega_hat`` onto ``[0, 1]``."""
        return VariancePath.step(self.grid, self.omega)

    def regressor_moment_path(self) -> RegressorMomentPath:
        if self.q_hat is None:
            return RegressorMomentPath.constant(np.eye(self.p))
        return RegressorMomentPath.step(self.grid, self.q_hat)

    def to_csv(self, path) -> None:
        p = self.p
        if p == 1:
            cols = ["u", "omega_hat", "sigma_hat"] + (["q_hat"] if self.q_hat is not None else [])
        else:
            idx = [f"{a + 1}{b + 1}" for a in range(p) for b in range(p)]
            cols = (["u"] + [f"omega_hat_{i}" for i in idx] + [f"sigma_hat_{i}" for i in idx]
                    + ([f"q_hat_{i}" for i in idx] if self.q_hat is not None else []))
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for i, u in enumerate(self.grid):
                row = [repr(float(u))] + [repr(float(v)) for v in self.omega[i].ravel()]
                row += [repr(float(v)) for v in self.sigma[i].ravel()]
                if self.q_hat is not None:
                    row += [repr(float(v)) for v in self.q_hat[i].ravel()]
                w.writerow(row)
        meta = {"h1": self.h1, "h2": self.h2, "K1": self.K1, "K2": self.K2}
        with open(str(path) + ".json", "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)


def read_curve_csv(path) -> LocalLrvCurve:
    """Read a curve written by :meth:`LocalLrvCurve.to_csv`.

    The JSON sidecar with bandwidth metadata is optional.
    """
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    if not rows or rows[0][0] != "u" or len(rows) < 2:
        raise DataError(f"{path}: expected a header starting with 'u' and at least one row")
    header = rows[0]
    data = np.array([[float(v) for v in r] for r in rows[1:] if r])
    n_omega = sum(c.startswith("omega_hat") for c in header)
    p = int(round(math.sqrt(n_omega)))
    if p * p != n_omega or n_omega == 0:
        raise DataError(f"{path}: malformed omega_hat columns")
    n = data.shape[0]
    omega = data[:, 1:1 + n_omega].reshape(n, p, p)
    sigma = data[:, 1 + n_omega:1 + 2 * n_omega].reshape(n, p, p)
    q_hat = None
    if any(c.startswith("q_hat") for c in header):
        q_hat = data[:, 1 + 2 * n_omega:1 + 3 * n_omega].reshape(n, p, p)
    meta = {"h1": float("nan"), "h2": float("nan"), "K1": "", "K2": ""}
    try:
        with open(str(path) + ".json") as fh:
            meta.update(json.load(fh))
    except OSError:
        pass
    return LocalLrvCurve(data[:, 0], omega, sigma, meta["h1"], meta["h2"], meta["K1"], meta["K2"], q_hat)


def default_grid(n: int = 200) -> np.ndarray:
    """Left endpoints ``i/n``, ``i = 0..n-1``: the cells the plug-in simulator uses."""
    return np.arange(n) / n


def local_lrv_curve(fit: OlsFit, grid=None, h1: float | None = None, h2: float | None = None,
                    K1="bartlett", K2="uniform", with_q: bool = False) -> LocalLrvCurve:
    """``Omega_hat(u) = sum_k K1(h1 k) c_hat(u, k)`` on ``grid``.

    Negative eigenvalues are clipped to zero.  Lags are truncated where
    ``K1(h1 k)`` vanishes for compact kernels and at ``T - 1`` otherwise.
    A warning is issued when ``T h1 h2 < 20``.
    """
    K1 = get_lag_kernel(K1)
    K2 = get_time_kernel(K2)
    T = fit.T
    d1, d2 = default_bandwidths(T)
    h1 = d1 if h1 is None else float(h1)
    h2 = d2 if h2 is None else float(h2)
    _check_h("h1", h1)
    _check_h("h2", h2)
    if T * h1 * h2 < 20:
        warnings.warn(f"T*h1*h2 = {T * h1 * h2:.1f} < 20; local LRV estimate is very noisy", stacklevel=2)
    grid = default_grid() if grid is None else np.asarray(grid, dtype=float)
    if np.any((grid < 0.0) | (grid > 1.0)):
        raise OutOfRange("grid points must lie in [0, 1]")
    v = fit.scores
    p = fit.p
    n_lags = T - 1
    if math.isfinite(K1.support):
        n_lags = min(n_lags, int(math.ceil(K1.support / h1)))
        while n_lags > 0 and K1(h1 * n_lags) == 0.0:
            n_lags -= 1
    mass = _window_mass(T, grid, h2, K2)[:, None]
    omega = np.zeros((grid.size, p, p))
    for k in range(n_lags + 1):
        wk = 1.0 if k == 0 else float(K1(h1 * k))
        if wk == 0.0:
            continue
        w = _time_weights(T, grid, k, h2, K2) / mass
        prod = np.einsum("sa,sb->sab", v[k:], v[: T - k])
        c = np.einsum("is,sab->iab", w, prod)
        omega += wk * (c if k == 0 else c + np.swapaxes(c, 1, 2))
    proj, root = _psd_root(omega)
    q_hat = local_regressor_moment_curve(fit.x, grid, h2, K2) if with_q else None
    return LocalLrvCurve(grid, proj, root, h1, h2, K1.name, K2.name, q_hat)


def local_regressor_moment_curve(x: np.ndarray, grid, h2: float, K2="uniform") -> np.ndarray:
    """``Q_hat(u_i)``: window-weighted second moments of the regressors."""
    K2 = get_time_kernel(K2)
    _check_h("h2", h2)
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    w = _normalise(_time_weights(x.shape[0], np.asarray(grid, dtype=float), 0, h2, K2))
    return np.einsum("is,sa,sb->iab", w, x, x)


def local_regressor_moment(sample: SamplePath, u: float, h2: float, K2="uniform") -> np.ndarray:
    """``Q_hat(u)`` for one ``u``; equals ``c^2`` for a constant regressor ``c``."""
    if not 0.0 <= u <= 1.0:
        raise OutOfRange(f"u must lie in [0, 1], got {u}")
    return local_regressor_moment_curve(sample.x, np.array([u]), h2, K2)[0]
