import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from harlrv import dgp
from harlrv import estimators as E
from harlrv import har
from harlrv.errors import DegenerateVariance, InvalidSpec, MissingContext, SingularMiddleMatrix
from harlrv.limitdist import GridSpec, LimitDrawSet, critical_values, plug_in_limit_distribution


def _alt_fit(shift=0.0):
    return E.ols_fit(dgp.SamplePath.location(np.array([1.0, -1.0, 1.0, -1.0]) + shift))


def _reg_fit(seed, T=120, p=3):
    rng = np.random.default_rng(seed)
    x = np.column_stack([np.ones(T), rng.normal(size=(T, p - 1))])
    y = x @ rng.normal(size=p) + rng.standard_t(5, size=T)
    return E.ols_fit(dgp.SamplePath(y, x))


def test_hypothesis_spec():
    h = har.HypothesisSpec.coefficient(1, 2.0, 3)
    np.testing.assert_array_equal(h.R, [[0.0, 1.0, 0.0]])
    assert h.q == 1 and h.r[0] == 2.0
    with pytest.raises(InvalidSpec):
        har.HypothesisSpec([[1.0, 2.0], [2.0, 4.0]], [0.0, 0.0])
    with pytest.raises(InvalidSpec):
        har.HypothesisSpec([[1.0, 0.0]], [0.0, 1.0])
    with pytest.raises(InvalidSpec):
        har.HypothesisSpec.from_dict({"R": [[1.0]]})


def test_t_zero_when_null_holds_exactly():
    fit = _alt_fit()
    hyp = har.HypothesisSpec.coefficient(0, 0.0)
    assert har.t_stat_fixed_b(fit, hyp) == 0.0
    assert har.t_stat_hac(fit, hyp, "bartlett", 1 / 3) == 0.0
    assert har.F_stat_fixed_b(fit, hyp) == 0.0


def test_t_hand_computed_T4():
    # y = (1,-1,1,-1): beta_hat = 0, Q = 1; Omega_fixed-b(Bartlett, b=1) = 1/4, Omega_HAC(b_T=1/3) = 1/3.
    # Testing beta = -1/2: t = sqrt(4) * (1/2) / sqrt(Omega)
    fit = _alt_fit()
    hyp = har.HypothesisSpec.coefficient(0, -0.5)
    assert har.t_stat_fixed_b(fit, hyp, "bartlett", 1.0) == pytest.approx(2.0)
    assert har.t_stat_hac(fit, hyp, "bartlett", 1 / 3) == pytest.approx(math.sqrt(3.0))


def test_t_scale_equivariance():
    y = dgp.simulate(dgp.DgpSpec.ar1(0.3, beta0=0.4), 200, 1).y
    hyp = har.HypothesisSpec.coefficient(0, 0.0)
    f1 = E.ols_fit(dgp.SamplePath.location(y))
    f2 = E.ols_fit(dgp.SamplePath.location(2 * y))
    assert har.t_stat_fixed_b(f2, hyp) == pytest.approx(har.t_stat_fixed_b(f1, hyp), rel=1e-12)
    assert har.t_stat_hac(f2, hyp) == pytest.approx(har.t_stat_hac(f1, hyp), rel=1e-12)


def test_degenerate_variance():
    fit = E.ols_fit(dgp.SamplePath.location(np.zeros(20)))
    with pytest.raises(DegenerateVariance):
        har.t_stat_fixed_b(fit, har.HypothesisSpec.coefficient(0, 1.0))
    with pytest.raises(DegenerateVariance):
        har.t_stat_hac(fit, har.HypothesisSpec.coefficient(0, 1.0), "bartlett", 0.2)


def test_singular_middle_matrix():
    fit = E.ols_fit(dgp.SamplePath(np.zeros(30), np.column_stack([np.ones(30), np.arange(30.0)])))
    with pytest.raises(SingularMiddleMatrix):
        har.F_stat_fixed_b(fit, har.HypothesisSpec(np.eye(2), [1.0, 1.0]))


def test_t_requires_single_restriction():
    with pytest.raises(InvalidSpec):
        har.t_stat_fixed_b(_reg_fit(1), har.HypothesisSpec(np.eye(3)[:2], [0.0, 0.0]))
    with pytest.raises(InvalidSpec):
        har.t_stat_fixed_b(_reg_fit(1), har.HypothesisSpec.coefficient(0, 0.0, 2))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["bartlett", "parzen", "qs"]), st.floats(0.1, 1.0))
def test_F_equals_t_squared(seed, kernel, b):
    fit = _reg_fit(seed)
    rng = np.random.default_rng(seed + 1)
    hyp = har.HypothesisSpec(rng.normal(size=(1, 3)), [rng.normal()])
    t = har.t_stat_fixed_b(fit, hyp, kernel, b)
    assert har.F_stat_fixed_b(fit, hyp, kernel, b) == pytest.approx(t * t, rel=1e-12)
    th = har.t_stat_hac(fit, hyp, kernel, 0.1)
    assert har.F_stat_hac(fit, hyp, kernel, 0.1) == pytest.approx(th * th, rel=1e-12)


def test_F_matches_dense_recomputation():
    fit = _reg_fit(7, T=150, p=3)
    R = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    r = np.array([0.1, -0.2])
    got = har.F_stat_fixed_b(fit, har.HypothesisSpec(R, r), "parzen", 0.5)
    # independent route: explicit inverses, brute-force kernel double sum
    x, T = fit.x, fit.T
    qinv = np.linalg.inv(x.T @ x / T)
    i = np.arange(T)
    w = E.get_lag_kernel("parzen")((i[:, None] - i[None, :]) / (0.5 * T))
    v = fit.scores
    omega = v.T @ w @ v / T
    mid = R @ qinv @ omega @ qinv @ R.T
    d = R @ fit.beta_hat - r
    ref = T * d @ np.linalg.inv(mid) @ d / 2
    assert got == pytest.approx(ref, rel=1e-10)


def test_regressor_scaling_invariance():
    fit = _reg_fit(11, T=200, p=2)
    # x -> x / c multiplies the slope by c, so R -> R / c states the same hypothesis
    c = 3.7
    x2 = fit.x.copy()
    x2[:, 1] /= c
    y = fit.x @ fit.beta_hat + fit.residuals
    fit2 = E.ols_fit(dgp.SamplePath(y, x2))
    h1 = har.HypothesisSpec([[0.0, 1.0]], [0.25])
    h2 = har.HypothesisSpec([[0.0, 1.0 / c]], [0.25])
    assert har.t_stat_fixed_b(fit2, h2) == pytest.approx(har.t_stat_fixed_b(fit, h1), rel=1e-10)


# --------------------------------------------------------------------------
# decisions


def test_standard_critical_values():
    r = har.decide(2.0, "t_fixed_b", "standard", 0.05)
    assert r.cv == pytest.approx(1.959963984540054, rel=1e-12)
    assert r.reject and r.cv_se is None
    assert r.pvalue == pytest.approx(0.0455, abs=1e-4)
    f = har.decide(3.0, "F_fixed_b", "standard", 0.05, {"q": 2})
    assert f.cv == pytest.approx(5.991464547107979 / 2, rel=1e-12)
    assert f.reject


def test_zero_t_never_rejects():
    ds = LimitDrawSet(np.random.default_rng(0).normal(size=2000), "t")
    for level in (0.01, 0.05, 0.5, 0.99):
        assert not har.decide(0.0, "t_fixed_b", "standard", level).reject
        assert not har.decide(0.0, "t_fixed_b", "stationary", level, {"drawset": ds}).reject


def test_level_one_always_rejects():
    r = har.decide(0.0, "t_HAC", "standard", 1.0)
    assert r.reject and r.cv == 0.0 and r.pvalue == 1.0


def test_reject_rule_t_uses_magnitude_F_does_not():
    assert har.decide(-2.5, "t_fixed_b", "standard", 0.05).reject
    ds = LimitDrawSet(np.abs(np.random.default_rng(1).normal(size=2000)) ** 2, "F")
    assert not har.decide(-10.0, "F_fixed_b", "stationary", 0.05, {"drawset": ds}).reject


def test_stationary_source_builds_and_caches():
    ctx = {"kernel": "bartlett", "b": 1.0, "grid_n": 200, "n_draws": 2000, "seed": 5}
    a = har.decide(4.0, "t_fixed_b", "stationary", 0.05, ctx)
    b = har.decide(4.0, "t_fixed_b", "stationary", 0.05, dict(ctx))
    assert a.cv == b.cv and a.cv_se > 0.0
    assert 3.5 < a.cv < 6.0


def test_plugin_source_matches_manual_pipeline():
    fit = E.ols_fit(dgp.simulate(dgp.DgpSpec.variance_break(1.0, 4.0, 0.5), 400, 3))
    stat = har.t_stat_fixed_b(fit, har.HypothesisSpec.coefficient(0, 0.0))
    curve = E.local_lrv_curve(fit, GridSpec(200).left)
    ctx = {"kernel": "bartlett", "b": 1.0, "grid_n": 200, "reps": 2000, "seed": [1, 2], "curve": curve}
    res = har.decide(stat, "t_fixed_b", "plugin", 0.05, ctx)
    ds = plug_in_limit_distribution(curve, "bartlett", 1.0, GridSpec(200), 2000, [1, 2])
    cv, se = critical_values(ds, [0.95]).lookup(0.95)
    assert res.cv == cv and res.cv_se == se and res.reject == (abs(stat) > cv)
    # building the curve from the fit gives the same law
    res2 = har.decide(stat, "t_fixed_b", "plugin", 0.05, {**ctx, "curve": None, "fit": fit})
    assert res2.cv == pytest.approx(cv, rel=1e-12)


def test_missing_context():
    with pytest.raises(MissingContext):
        har.decide(1.0, "t_fixed_b", "stationary", 0.05, {})
    with pytest.raises(MissingContext):
        har.decide(1.0, "t_fixed_b", "plugin", 0.05, {"kernel": "bartlett", "b": 1.0})


def test_decide_validation():
    with pytest.raises(InvalidSpec):
        har.decide(1.0, "z", "standard", 0.05)
    with pytest.raises(InvalidSpec):
        har.decide(1.0, "t_HAC", "bootstrap", 0.05)
    with pytest.raises(InvalidSpec):
        har.decide(1.0, "t_HAC", "standard", 0.0)


def test_result_json():
    r = har.decide(1.0, "t_HAC", "standard", 0.1)
    d = json.loads(r.to_json())
    assert set(d) == {"stat", "kind", "cv_source", "level", "cv", "cv_se", "reject", "pvalue"}
    assert d["reject"] is False


@pytest.mark.slow
def test_hac_size_iid_normal():
    T, reps = 2000, 10_000
    hyp = har.HypothesisSpec.coefficient(0, 0.0)
    cv = har.decide(0.0, "t_HAC", "standard", 0.05).cv
    rng = np.random.default_rng(20240607)
    rej = 0
    for _ in range(reps):
        fit = E.ols_fit(dgp.SamplePath.location(rng.standard_normal(T)))
        rej += abs(har.t_stat_hac(fit, hyp)) > cv
    assert 0.035 <= rej / reps <= 0.065
