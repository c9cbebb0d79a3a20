import math

import numpy as np
import pytest
from scipy import stats

from harlrv import dgp
from harlrv import estimators as E
from harlrv.dgp import RegressorMomentPath, VariancePath
from harlrv.errors import (
    BandwidthTooLarge,
    DegenerateCurve,
    InvalidSpec,
    NonPsdKernel,
    TooFewDraws,
    TooLarge,
    UnsupportedKernel,
)
from harlrv.kernels import BandwidthedKernel, get_lag_kernel
from harlrv.limitdist import (
    GridSpec,
    LimitDrawSet,
    bridge_functional,
    central_moments_from_cumulants,
    chi2_cdf_derivative,
    critical_values,
    cumulant_grid_check,
    cumulants_asymptotic,
    cumulants_finite_T,
    empirical_pvalue,
    expansion_rejection_approx,
    finite_T_moments,
    lemma1_bound,
    limit_F_draws,
    limit_t_draws,
    mean_G_b,
    moment_report,
    plug_in_limit_distribution,
    read_drawset_csv,
    simulate_G_b,
    simulate_G_bartlett,
    simulate_G_general,
    simulate_weighted_wiener,
    stationary_limit_draws,
)

ONE = VariancePath.constant(1.0)
BREAK14 = VariancePath.piecewise_constant([0.5], [1.0, 4.0])
ZERO = VariancePath.constant(0.0)
G500 = GridSpec(500)


def _mean_se(x):
    x = np.asarray(x).ravel()
    return x.mean(), x.std(ddof=1) / math.sqrt(x.size)


# --------------------------------------------------------------------------
# Wiener paths and the bridge


def test_grid_spec():
    g = GridSpec(200)
    assert g.left[0] == 0.0 and g.left.size == 200
    assert g.points[-1] == 1.0 and g.points.size == 201
    with pytest.raises(InvalidSpec):
        GridSpec(50)


def test_wiener_variance_standard():
    w = simulate_weighted_wiener(ONE, G500, seed=1, n_paths=50_000)
    assert np.all(w.values[:, 0, :] == 0.0)
    x1 = w.endpoint[:, 0]
    se = math.sqrt(2 / x1.size)  # sd of a sample variance of N(0, 1)
    assert abs(x1.var() - 1.0) < 3 * se


def test_wiener_variance_isometry_break():
    w = simulate_weighted_wiener(BREAK14, G500, seed=2, n_paths=50_000)
    x1 = w.endpoint[:, 0]
    se = 2.5 * math.sqrt(2 / x1.size)
    assert abs(x1.var() - 2.5) < 3 * se


def test_wiener_blocks_are_prefix_stable():
    a = simulate_weighted_wiener(ONE, G500, seed=3, n_paths=2500).values
    b = simulate_weighted_wiener(ONE, G500, seed=3, n_paths=1200).values
    np.testing.assert_array_equal(a[:1200], b)


def test_bridge_pinned_and_variance():
    w = simulate_weighted_wiener(ONE, G500, seed=4, n_paths=50_000)
    h = bridge_functional(w)
    assert np.all(h[:, -1, :] == 0.0)
    mid = h[:, 250, 0]
    se = 0.25 * math.sqrt(2 / mid.size)
    assert abs(mid.var() - 0.25) < 3 * se


def test_bridge_q_scale_invariance():
    w = simulate_weighted_wiener(BREAK14, G500, seed=5, n_paths=50)
    h1 = bridge_functional(w)
    hc = bridge_functional(w, RegressorMomentPath.constant(7.5))
    np.testing.assert_allclose(hc, h1, rtol=0, atol=1e-13)


def test_bridge_nonconstant_q_pins_at_one():
    q = RegressorMomentPath.piecewise_constant([0.3], [1.0, 5.0])
    h = bridge_functional(simulate_weighted_wiener(ONE, G500, seed=6, n_paths=10), q)
    assert np.all(h[:, -1, :] == 0.0)


# --------------------------------------------------------------------------
# the G functionals


def test_G_bartlett_mean_one_third():
    g = simulate_G_bartlett(ONE, None, GridSpec(1000), seed=7, n_draws=50_000)[:, 0, 0]
    m, se = _mean_se(g)
    assert abs(m - 1 / 3) < 3 * se


def test_G_bartlett_zero_and_scaling():
    assert np.all(simulate_G_bartlett(ZERO, None, G500, 1, 1000) == 0.0)
    g1 = simulate_G_bartlett(ONE, None, G500, 8, 1000)
    g4 = simulate_G_bartlett(VariancePath.constant(4.0), None, G500, 8, 1000)
    np.testing.assert_allclose(g4, 4.0 * g1, rtol=1e-12)


def test_G_general_qs_mean_matches_quadrature():
    g = simulate_G_general("qs", ONE, None, G500, seed=9, n_draws=20_000, b=1.0)[:, 0, 0]
    m, se = _mean_se(g)
    assert abs(m - mean_G_b("qs", ONE, 1.0)) < 3 * se


def test_G_general_scaling_and_q_invariance():
    g1 = simulate_G_general("parzen", ONE, None, G500, 10, 1000, b=0.5)
    g4 = simulate_G_general("parzen", VariancePath.constant(4.0), None, G500, 10, 1000, b=0.5)
    gq = simulate_G_general("parzen", ONE, RegressorMomentPath.constant(3.0), G500, 10, 1000, b=0.5)
    np.testing.assert_allclose(g4, 4.0 * g1, rtol=1e-12)
    np.testing.assert_allclose(gq, g1, rtol=1e-10)


def test_G_general_rejects_bartlett():
    with pytest.raises(UnsupportedKernel):
        simulate_G_general("bartlett", ONE, None, G500, 0, 1000)


def test_G_b_bartlett_matches_G_bartlett_in_distribution():
    a = simulate_G_b("bartlett", ONE, None, G500, seed=11, n_draws=20_000, b=1.0)[:, 0, 0]
    c = simulate_G_bartlett(ONE, None, G500, seed=12, n_draws=20_000)[:, 0, 0]
    assert stats.ks_2samp(a, c).statistic <= 0.02


def test_G_b_bartlett_draw_by_draw_identity():
    # summation by parts: on the grid the increment form equals 2/n sum H^2 plus O(1/n)
    a = simulate_G_b("bartlett", ONE, None, G500, seed=13, n_draws=1000, b=1.0)[:, 0, 0]
    c = simulate_G_bartlett(ONE, None, G500, seed=13, n_draws=1000)[:, 0, 0]
    assert np.max(np.abs(a - c)) < 0.02


def test_G_b_mean_parzen_break():
    g = simulate_G_b("parzen", BREAK14, None, G500, seed=14, n_draws=20_000, b=0.3)[:, 0, 0]
    m, se = _mean_se(g)
    assert abs(m - mean_G_b("parzen", BREAK14, 0.3)) < 3 * se


def test_G_b_zero_and_nonpsd():
    assert np.all(simulate_G_b("parzen", ZERO, None, G500, 1, 1000, b=0.5) == 0.0)
    with pytest.raises(NonPsdKernel):
        simulate_G_b("truncated", ONE, None, G500, 1, 1000, b=0.5)


@pytest.mark.parametrize("kernel,b,path", [
    ("bartlett", 1.0, ONE),
    ("bartlett", 0.3, BREAK14),
    ("parzen", 0.5, ONE),
    ("parzen", 0.2, BREAK14),
    ("qs", 0.4, ONE),
    ("qs", 1.0, BREAK14),
])
def test_G_b_mean_matches_quadrature_six_cases(kernel, b, path):
    g = simulate_G_b(kernel, path, None, G500, seed=15, n_draws=10_000, b=b)[:, 0, 0]
    m, se = _mean_se(g)
    assert abs(m - mean_G_b(kernel, path, b)) < 3 * se


# --------------------------------------------------------------------------
# limit laws of t and F


def test_limit_t_stationary_reduction():
    ds = limit_t_draws("bartlett", 1.0, ONE, seed=16, n_draws=100_000)
    ref = stationary_limit_draws("bartlett", 1.0, "t", 1, GridSpec(1000), seed=17, n_draws=100_000)
    q = critical_values(ds, [0.975]).quantiles[0]
    qr = critical_values(ref, [0.975]).quantiles[0]
    assert abs(q / qr - 1.0) < 0.02


def test_limit_t_symmetric():
    d = limit_t_draws("bartlett", 1.0, BREAK14, grid=G500, seed=18, n_draws=100_000).draws
    m, se = _mean_se(d)
    assert abs(m) < 3 * se


def test_limit_t_pivotal_under_stationarity():
    base = limit_t_draws("bartlett", 1.0, ONE, grid=G500, seed=19, n_draws=2000).draws
    for om, q in ((4.0, 1.0), (0.3, 2.5), (9.0, 0.1)):
        other = limit_t_draws("bartlett", 1.0, VariancePath.constant(om), RegressorMomentPath.constant(q),
                              grid=G500, seed=19, n_draws=2000).draws
        np.testing.assert_allclose(other, base, rtol=1e-10)


def test_limit_t_q_invariance_nonstationary():
    a = limit_t_draws("parzen", 0.5, BREAK14, grid=G500, seed=20, n_draws=1000).draws
    b = limit_t_draws("parzen", 0.5, BREAK14, RegressorMomentPath.constant(4.0), grid=G500, seed=20,
                      n_draws=1000).draws
    np.testing.assert_allclose(a, b, rtol=1e-10)


def test_limit_t_not_pivotal_under_break():
    a = critical_values(limit_t_draws("bartlett", 1.0, BREAK14, grid=G500, seed=21, n_draws=100_000),
                        [0.975])
    s = critical_values(limit_t_draws("bartlett", 1.0, ONE, grid=G500, seed=22, n_draws=100_000), [0.975])
    joint = math.hypot(a.se[0], s.se[0])
    assert abs(a.quantiles[0] - s.quantiles[0]) > 5 * joint


def test_limit_F_single_restriction_is_t_squared():
    t = limit_t_draws("bartlett", 1.0, BREAK14, grid=G500, seed=23, n_draws=1000).draws
    f = limit_F_draws("bartlett", 1.0, BREAK14, grid=G500, seed=23, n_draws=1000).draws
    np.testing.assert_allclose(f, t**2, rtol=1e-10)


def test_limit_F_bivariate_stationary_matches_independent_simulator():
    path = VariancePath.constant(np.eye(2))
    ds = limit_F_draws("bartlett", 1.0, path, R=np.eye(2), grid=G500, seed=24, n_draws=50_000)
    ref = stationary_limit_draws("bartlett", 1.0, "F", 2, G500, seed=25, n_draws=50_000)
    a, r = critical_values(ds, [0.95]), critical_values(ref, [0.95])
    assert abs(a.quantiles[0] - r.quantiles[0]) < 3 * math.hypot(a.se[0], r.se[0])


def test_limit_draw_errors():
    with pytest.raises(InvalidSpec):
        limit_t_draws("bartlett", 1.0, VariancePath.constant(np.eye(2)), R=np.eye(2), grid=G500,
                      n_draws=1000)
    with pytest.raises(InvalidSpec):
        limit_F_draws("bartlett", 1.0, VariancePath.constant(np.eye(2)), R=[[1.0, 1.0], [2.0, 2.0]],
                      grid=G500, n_draws=1000)
    with pytest.raises(NonPsdKernel):
        limit_t_draws("tukey-hanning", 0.5, ONE, grid=G500, n_draws=1000)


def test_limit_draws_deterministic_and_metadata():
    a = limit_t_draws("qs", 0.5, BREAK14, grid=G500, seed=[3, 4], n_draws=1500)
    b = limit_t_draws("qs", 0.5, BREAK14, grid=G500, seed=[3, 4], n_draws=1500)
    np.testing.assert_array_equal(a.draws, b.draws)
    assert a.key == b.key
    assert a.metadata["kernel"] == "qs" and a.metadata["grid_n"] == 500 and a.metadata["seed"] == [3, 4]
    c = limit_t_draws("qs", 0.5, ONE, grid=G500, seed=[3, 4], n_draws=1500)
    assert c.key != a.key


def test_grid_refinement_stationary_bartlett():
    a = critical_values(stationary_limit_draws("bartlett", 1.0, grid=GridSpec(500), seed=26, n_draws=100_000),
                        [0.95])
    b = critical_values(stationary_limit_draws("bartlett", 1.0, grid=GridSpec(2000), seed=26,
                                               n_draws=100_000), [0.95])
    assert abs(a.quantiles[0] / b.quantiles[0] - 1.0) < 0.01


def test_stationary_bartlett_frozen_quantile():
    # 95% quantile of |t| (two-sided 5% test); frozen at seed 1, 100,000 draws.
    # The published fixed-b value is about 4.77.
    ds = stationary_limit_draws("bartlett", 1.0, grid=GridSpec(1000), seed=1, n_draws=100_000)
    q, se = critical_values(ds, [0.95]).lookup(0.95)
    assert q == pytest.approx(4.781, abs=5e-3)
    assert abs(q - 4.771) < 3 * se


def test_stationary_general_kernel_path():
    ds = stationary_limit_draws("parzen", 0.5, "t", 1, G500, 27, 2000)
    assert len(ds) == 2000 and ds.kind == "t"
    with pytest.raises(InvalidSpec):
        stationary_limit_draws("parzen", 0.5, "t", 2, G500, 27, 1000)


# --------------------------------------------------------------------------
# critical values, p-values, persistence


def test_critical_values_uniform():
    u = np.random.default_rng(28).uniform(size=200_000)
    t = critical_values(LimitDrawSet(u), [0.95])
    q, se = t.lookup(0.95)
    assert abs(q - 0.95) < 3 * se
    # the se spans ~195 uniform spacings, so it carries ~7% relative noise itself
    assert se == pytest.approx(math.sqrt(0.95 * 0.05 / 200_000), rel=0.25)


def test_critical_values_permutation_invariant():
    u = np.random.default_rng(29).normal(size=5000)
    a = critical_values(LimitDrawSet(u, "t"), [0.9, 0.95])
    b = critical_values(LimitDrawSet(np.random.default_rng(30).permutation(u), "t"), [0.9, 0.95])
    np.testing.assert_array_equal(a.quantiles, b.quantiles)
    np.testing.assert_array_equal(a.se, b.se)


def test_critical_values_seed_agreement():
    a = critical_values(limit_t_draws("bartlett", 1.0, BREAK14, grid=G500, seed=31, n_draws=20_000), [0.95])
    b = critical_values(limit_t_draws("bartlett", 1.0, BREAK14, grid=G500, seed=32, n_draws=20_000), [0.95])
    assert abs(a.quantiles[0] - b.quantiles[0]) < 3 * math.hypot(a.se[0], b.se[0])


def test_critical_values_errors():
    with pytest.raises(TooFewDraws):
        critical_values(LimitDrawSet(np.zeros(999)), [0.95])
    with pytest.raises(InvalidSpec):
        critical_values(LimitDrawSet(np.zeros(1000)), [1.0])


def test_t_quantiles_use_magnitudes():
    x = np.random.default_rng(33).normal(size=50_000)
    q = critical_values(LimitDrawSet(x, "t"), [0.95]).quantiles[0]
    assert q == pytest.approx(1.96, abs=0.03)


def test_empirical_pvalue():
    ds = LimitDrawSet(np.arange(1.0, 1000.0), "generic")
    assert empirical_pvalue(ds, 1000.0) == pytest.approx(1 / 1000)
    assert empirical_pvalue(ds, 0.0) == 1.0
    t = LimitDrawSet(np.array([-3.0, 1.0, 2.0]), "t")
    assert empirical_pvalue(t, -2.5) == pytest.approx(2 / 4)


def test_drawset_csv_roundtrip(tmp_path):
    ds = limit_t_draws("bartlett", 1.0, BREAK14, grid=G500, seed=34, n_draws=1000)
    ds.to_csv(tmp_path / "d.csv")
    back = read_drawset_csv(tmp_path / "d.csv")
    np.testing.assert_array_equal(back.draws, ds.draws)
    assert back.kind == "t" and back.key == ds.key


def test_critical_value_table_csv(tmp_path):
    t = critical_values(LimitDrawSet(np.linspace(0, 1, 1001)), [0.5, 0.9])
    t.to_csv(tmp_path / "q.csv")
    lines = (tmp_path / "q.csv").read_text().splitlines()
    assert lines[0] == "level,quantile,se,n_draws"
    assert lines[1].startswith("0.5,0.5,")


# --------------------------------------------------------------------------
# plug-in


def _curve(values, h1=0.2, h2=0.2):
    grid = GridSpec(250).left
    om = np.asarray(values, dtype=float).reshape(-1, 1, 1) * np.ones((grid.size, 1, 1))
    return E.LocalLrvCurve(grid, om, np.sqrt(om), h1, h2, "bartlett", "uniform")


def test_plug_in_unit_curve_equals_oracle():
    ds = plug_in_limit_distribution(_curve(1.0), "bartlett", 1.0, G500, 2000, seed=35)
    ref = limit_t_draws("bartlett", 1.0, ONE, grid=G500, seed=35, n_draws=2000)
    np.testing.assert_allclose(ds.draws, ref.draws, rtol=1e-12)
    assert ds.metadata["source"] == "plug-in"


def test_plug_in_zero_curve():
    with pytest.raises(DegenerateCurve):
        plug_in_limit_distribution(_curve(0.0), "bartlett", 1.0, G500, 1000)


@pytest.mark.slow
def test_plug_in_iid_sample_close_to_oracle():
    fit = E.ols_fit(dgp.simulate(dgp.DgpSpec.iid(), 4000, 36))
    curve = E.local_lrv_curve(fit, GridSpec(250).left)
    ds = plug_in_limit_distribution(curve, "bartlett", 1.0, GridSpec(1000), 100_000, seed=37)
    ref = limit_t_draws("bartlett", 1.0, ONE, grid=GridSpec(1000), seed=37, n_draws=100_000)
    a, r = critical_values(ds, [0.9, 0.95, 0.975]), critical_values(ref, [0.9, 0.95, 0.975])
    np.testing.assert_allclose(a.quantiles, r.quantiles, rtol=0.05)


# --------------------------------------------------------------------------
# moments


def test_mean_G_b_bartlett_one_third_and_linearity():
    assert mean_G_b("bartlett", ONE, 1.0) == pytest.approx(1 / 3, abs=1e-8)
    assert mean_G_b("parzen", VariancePath.constant(2.5), 0.4) == pytest.approx(
        2.5 * mean_G_b("parzen", ONE, 0.4), rel=1e-9)


def test_mean_G_b_matches_closed_form_bartlett_small_b():
    # for Omega = 1: mu_b = 1 - int int K_b = 1 - (b - b^2/3)
    for b in (0.1, 0.3, 0.7):
        assert mean_G_b("bartlett", ONE, b) == pytest.approx(1 - (b - b * b / 3), abs=1e-8)


def test_kappa2_bartlett_b1_exact():
    # kappa_2 = 2 int int K*(r,s)^2 = 2 * 4/90 for the Brownian-bridge covariance-type kernel
    k2, change = cumulant_grid_check("bartlett", ONE, 2, 1.0)
    assert k2 == pytest.approx(8 / 90, rel=1e-4)
    assert change < 1e-5


def test_kappa2_nonnegative_and_m_validation():
    assert cumulants_asymptotic("qs", BREAK14, 2, 0.3) >= 0.0
    with pytest.raises(InvalidSpec):
        cumulants_asymptotic("qs", ONE, 5, 0.3)


def test_cumulants_match_direct_tensor_quadrature():
    # kappa_3 by explicit cyclic triple sum on a small grid against the trace form
    n = 60
    kb = BandwidthedKernel(get_lag_kernel("parzen"), 0.4)
    from harlrv.kernels import demeaned_kernel

    tau = (np.arange(n) + 0.5) / n
    om = BREAK14.omega(tau)[:, 0, 0]
    ks = demeaned_kernel(kb, tau[:, None], tau[None, :])
    direct = np.einsum("i,ij,j,jk,k,ki->", om, ks, om, ks, om, ks) / n**3
    omega = 2.5
    ref = 4 * 2 * direct / omega**3
    assert cumulants_asymptotic(kb, BREAK14, 3, n_grid=n) == pytest.approx(ref, rel=1e-10)


@pytest.mark.parametrize("kernel,b,path", [
    ("bartlett", 0.5, ONE),
    ("bartlett", 0.2, BREAK14),
    ("parzen", 0.5, ONE),
    ("parzen", 0.3, BREAK14),
    ("qs", 0.2, ONE),
    ("qs", 0.5, BREAK14),
])
def test_lemma1_bounds_hold(kernel, b, path):
    rep = moment_report(kernel, path, b, ms=(2, 3))
    assert rep.within_bounds()
    for m in (2, 3):
        assert abs(rep.kappa[m]) <= lemma1_bound(kernel, path, m, b)
        assert rep.grid_change[m] < 1e-3 * max(abs(rep.kappa[m]), 1e-12) + 1e-8


def test_kappa2_matches_monte_carlo_variance():
    g = simulate_G_b("parzen", BREAK14, None, G500, seed=38, n_draws=20_000, b=0.5)[:, 0, 0] / 2.5
    v = g.var(ddof=1)
    # se of a sample variance from the fourth central moment
    c = g - g.mean()
    se = math.sqrt((np.mean(c**4) - v**2) / g.size)
    assert abs(cumulants_asymptotic("parzen", BREAK14, 2, 0.5) - v) < 3 * se


def test_finite_T_mu_iid():
    mom = finite_T_moments(dgp.DgpSpec.iid(), 500, "bartlett", 1.0)
    assert abs(mom["mu"] - 1 / 3) < 0.02
    assert mom["kappa"][1] == 0.0
    assert cumulants_finite_T(dgp.DgpSpec.iid(), 200, "bartlett", 1.0, 1) == 0.0


def test_finite_T_cumulants_converge():
    spec = dgp.DgpSpec.iid()
    for m in (2, 3):
        target = cumulants_asymptotic("bartlett", ONE, m, 0.5, n_grid=800)
        gaps = [abs(cumulants_finite_T(spec, T, "bartlett", 0.5, m) - target) for T in (250, 500, 1000)]
        assert gaps[0] > gaps[1] > gaps[2]


def test_finite_T_cap():
    with pytest.raises(TooLarge):
        finite_T_moments(dgp.DgpSpec.iid(), 2001, "bartlett", 1.0)


def test_moment_cumulant_relation():
    xi = central_moments_from_cumulants({2: 0.3, 3: 0.1, 4: 0.05})
    assert xi[2] == 0.3 and xi[3] == 0.1 and xi[4] == pytest.approx(0.05 + 3 * 0.09)
    assert xi[0] == 1.0 and xi[1] == 0.0


def test_chi2_derivatives_match_finite_differences():
    x, h = 0.8, 1e-3
    assert chi2_cdf_derivative(x, 1) == pytest.approx(stats.chi2.pdf(x, 1), rel=1e-12)
    for order in (2, 3, 4):
        f = [chi2_cdf_derivative(x + j * h, order - 1) for j in (-1, 1)]
        assert chi2_cdf_derivative(x, order) == pytest.approx((f[1] - f[0]) / (2 * h), rel=1e-5)


def test_expansion_limits_and_bound():
    assert expansion_rejection_approx("bartlett", ONE, 0.0, 0.05) == 0.0
    assert expansion_rejection_approx("bartlett", ONE, 20.0, 0.05) == pytest.approx(1.0, abs=1e-4)
    with pytest.raises(BandwidthTooLarge):
        expansion_rejection_approx("bartlett", ONE, 1.96, 0.1)
    # the bound scales with sup Omega: 1 / (16 * 4 * 1) for the 1 -> 4 profile
    with pytest.raises(BandwidthTooLarge):
        expansion_rejection_approx("bartlett", BREAK14, 1.96, 0.02)


def test_expansion_matches_monte_carlo_small_b():
    b = 0.05
    approx = expansion_rejection_approx("bartlett", ONE, 1.96, b)
    d = limit_t_draws("bartlett", b, ONE, grid=GridSpec(1000), seed=39, n_draws=50_000).draws
    mc = np.mean(np.abs(d) <= 1.96)
    assert abs(approx - mc) < 0.02
