import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from freezerid import ekf
from freezerid import estimate as est
from freezerid.model import DEFAULT_TRUTH, LOG_PARAMS, PARAM_NAMES, ValidationError
from freezerid.simulate import SimConfig, simulate_sde
from oracles import quadratic, random_spd

FAST = est.OptimizerSettings(restarts=1, max_iters=1500)


class _Quad:
    """Objective protocol (callable with ``names``) around a plain function."""

    def __init__(self, f, n):
        self.f = f
        self.names = tuple(f"x{i}" for i in range(n))
        self.n_evals = 0

    def __call__(self, z):
        self.n_evals += 1
        return self.f(z)


# --- objective ---------------------------------------------------------------

def test_neg_log_lik_delegates_to_filter(short_sim):
    d = short_sim.dataset
    assert est.neg_log_lik(DEFAULT_TRUTH, d) == ekf.filter_pass(DEFAULT_TRUTH, d).neg_log_lik


def test_neg_log_lik_penalty_on_unstable_filter(short_sim):
    assert est.neg_log_lik(DEFAULT_TRUTH.replace(sigma_e=1e200), short_sim.dataset) == est.PENALTY


def test_objective_penalises_invalid_transformed_points(short_sim):
    obj = est.Objective(short_sim.dataset, DEFAULT_TRUTH, ("C_c",))
    assert obj(np.array([1e6])) == est.PENALTY  # exp overflow
    assert obj.n_evals == 1


def test_truth_beats_random_perturbations():
    quiet = DEFAULT_TRUTH.replace(nu=1e-4)
    d = simulate_sde(quiet, SimConfig(duration=2880, seed=21)).dataset
    f_true = est.neg_log_lik(quiet, d)
    rng = np.random.default_rng(0)
    wins = 0
    for _ in range(10):
        factors = 1.0 + 0.2 * rng.choice([-1.0, 1.0], len(PARAM_NAMES))
        p = quiet.from_array(quiet.to_array() * factors)
        wins += f_true <= est.neg_log_lik(p, d)
    assert wins >= 8


# --- transforms --------------------------------------------------------------

@given(st.lists(st.floats(1e-6, 1e6), min_size=len(PARAM_NAMES), max_size=len(PARAM_NAMES)))
def test_encode_decode_round_trip(values):
    p = DEFAULT_TRUTH.from_array(values)
    back = est.decode(est.encode(p, PARAM_NAMES), DEFAULT_TRUTH, PARAM_NAMES)
    assert np.allclose(back.to_array(), p.to_array(), rtol=1e-12, atol=0)


def test_internal_bounds_log_scale():
    b = est.internal_bounds(est.DEFAULT_BOUNDS, ("C_c", "a"))
    assert b[0] == pytest.approx((math.log(1e-8), math.log(1e8)))
    assert b[1] == (0.0, 5.0)


# --- specs -------------------------------------------------------------------

def test_fit_spec_validation():
    with pytest.raises(ValidationError, match="at least one"):
        est.FitSpec(init=DEFAULT_TRUTH, free_mask=(False,) * len(PARAM_NAMES))
    with pytest.raises(ValidationError, match="outside bounds"):
        est.FitSpec.with_free(DEFAULT_TRUTH, ["a"], bounds={"a": (0.5, 1.0)})
    with pytest.raises(ValidationError, match="unknown"):
        est.FitSpec.with_free(DEFAULT_TRUTH, ["zeta"])
    with pytest.raises(ValidationError):
        est.OptimizerSettings(method="bfgs")


def test_perturbed_scales_by_factor():
    q = est.perturbed(DEFAULT_TRUTH, 2.0, seed=3)
    ratio = q.to_array() / DEFAULT_TRUTH.to_array()
    ok = np.isclose(ratio, 2.0) | np.isclose(ratio, 0.5)
    assert np.all(ok[DEFAULT_TRUTH.to_array() != 0])


# --- optimiser ---------------------------------------------------------------

@given(st.integers(0, 10_000))
def test_optimizer_never_worse_than_start(seed):
    rng = np.random.default_rng(seed)
    n = 3
    Q = random_spd(rng, n, 20.0)
    theta0 = rng.normal(size=n)
    obj = _Quad(lambda z: quadratic(theta0, Q)(z) + 0.1 * math.sin(5 * z[0]), n)
    z0 = rng.normal(size=n) * 3
    z, f, _, _, _ = est.optimize_free(obj, z0, [(-50, 50)] * n, est.OptimizerSettings(restarts=2, max_iters=300))
    assert f <= obj(z0) + 1e-12
    assert f == obj(z)


@pytest.mark.parametrize("method", ["nelder-mead", "lbfgs"])
def test_minimize_recovers_quadratic_optimum(method):
    rng = np.random.default_rng(1)
    Q = random_spd(rng, 4, 10.0)
    theta0 = np.array([0.5, -1.0, 2.0, 0.1])
    obj = _Quad(quadratic(theta0, Q), 4)
    z, f, conv, _, diag = est.optimize_free(
        obj, np.zeros(4), [(-10, 10)] * 4,
        est.OptimizerSettings(method=method, restarts=2, tolerance=1e-10, max_iters=5000),
    )
    assert conv
    assert np.allclose(z, theta0, atol=1e-4)
    assert len(diag) == 2


def test_fit_requires_enough_samples(short_sim):
    with pytest.raises(ValidationError, match="100"):
        est.fit(est.FitSpec(init=DEFAULT_TRUTH), short_sim.dataset.segment(0, 50))


def test_fit_reports_failure_when_every_restart_fails(short_sim):
    bad = DEFAULT_TRUTH.replace(C_e=1e-7, beta=-100.0)
    spec = est.FitSpec.with_free(bad, ["C_e"], optimizer=est.OptimizerSettings(restarts=2, max_iters=50), substeps=1)
    with pytest.raises(est.EstimationFailedError) as info:
        est.fit(spec, short_sim.dataset)
    assert len(info.value.diagnostics) == 2


@pytest.fixture(scope="module")
def warm_fit(day_sim):
    spec = est.FitSpec(init=DEFAULT_TRUTH, optimizer=est.OptimizerSettings(restarts=2, max_iters=3000))
    return est.fit(spec, day_sim.dataset)


def test_fit_from_truth_reaches_local_optimum(warm_fit, day_sim):
    assert warm_fit.neg_log_lik <= est.neg_log_lik(DEFAULT_TRUTH, day_sim.dataset) + 1e-6
    assert warm_fit.neg_log_lik == pytest.approx(est.neg_log_lik(warm_fit.estimates, day_sim.dataset), abs=1e-9)


def test_fit_report_invariants(warm_fit):
    r = warm_fit
    assert r.hessian_pd
    c = r.correlation
    assert np.allclose(c, c.T) and np.all(np.diag(c) == 1.0)
    assert np.max(np.abs(c)) <= 1 + 1e-9
    for n, (lo, hi) in r.wald_ci95.items():
        assert lo <= getattr(r.estimates, n) <= hi
    assert set(r.std_errors) == set(r.free_names) == set(PARAM_NAMES)
    assert all(math.isfinite(z) for z in r.z_values.values())


def test_synthetic_fit_shows_strong_correlation(warm_fit):
    c = np.abs(warm_fit.correlation.copy())
    np.fill_diagonal(c, 0.0)
    assert c.max() > 0.9


def test_free_mask_only_changes_free_values(short_sim):
    init = est.perturbed(DEFAULT_TRUTH, 1.3, seed=4)
    spec = est.FitSpec.with_free(init, est.RETUNE_SET, optimizer=FAST)
    r = est.fit(spec, short_sim.dataset)
    for n in PARAM_NAMES:
        if n in est.RETUNE_SET:
            assert getattr(r.estimates, n) != getattr(init, n)
        else:
            assert getattr(r.estimates, n) == getattr(init, n)
    assert r.free_names == tuple(n for n in PARAM_NAMES if n in est.RETUNE_SET)


def test_fit_is_deterministic(short_sim):
    spec = est.FitSpec.with_free(est.perturbed(DEFAULT_TRUTH, 1.3, seed=4), ["C_c", "R_ce", "nu"],
                                 optimizer=est.OptimizerSettings(restarts=3, max_iters=300, seed=7))
    a, b = est.fit(spec, short_sim.dataset), est.fit(spec, short_sim.dataset)
    assert a.estimates == b.estimates
    assert np.array_equal(a.hessian, b.hessian)
    assert a.restarts == b.restarts


def test_threaded_hessian_matches_serial(short_sim):
    obj = est.Objective(short_sim.dataset, DEFAULT_TRUTH, ("C_c", "R_ce", "a"))
    z = est.encode(DEFAULT_TRUTH, obj.names)
    H1, _ = est.finite_difference_hessian(obj, z, threads=1)
    H2, _ = est.finite_difference_hessian(obj, z, threads=3)
    assert np.array_equal(H1, H2)


# --- retune ------------------------------------------------------------------

@pytest.fixture(scope="module")
def subset_baseline(short_sim):
    spec = est.FitSpec.with_free(est.perturbed(DEFAULT_TRUTH, 1.2, seed=2), est.RETUNE_SET,
                                 optimizer=est.OptimizerSettings(restarts=2, tolerance=1e-9))
    return est.fit(spec, short_sim.dataset)


def test_retune_on_same_data_is_idempotent(subset_baseline, short_sim):
    r = est.retune(subset_baseline, short_sim.dataset)
    assert set(r.relative_changes) == set(est.RETUNE_SET)
    assert all(abs(v) < 0.01 for v in r.relative_changes.values())
    for n in PARAM_NAMES:
        if n not in est.RETUNE_SET:
            assert getattr(r.estimates, n) == getattr(subset_baseline.estimates, n)


def test_retune_requires_converged_baseline(subset_baseline, short_sim):
    from dataclasses import replace
    with pytest.raises(ValidationError, match="converge"):
        est.retune(replace(subset_baseline, converged=False), short_sim.dataset)


# --- Hessian / Wald ----------------------------------------------------------

def test_hessian_of_quadratic(rng):
    Q = random_spd(rng, 5, 100.0)
    theta0 = rng.normal(size=5)
    hr = est.hessian_covariance(quadratic(theta0, Q), theta0, step=1e-3)
    assert np.allclose(hr.hessian, Q, rtol=1e-4, atol=1e-6 * np.max(np.abs(Q)))
    Sigma = np.linalg.inv(Q)
    assert np.allclose(hr.std_errors, np.sqrt(np.diag(Sigma)), rtol=1e-4)
    ref_corr = Sigma / np.outer(np.sqrt(np.diag(Sigma)), np.sqrt(np.diag(Sigma)))
    assert np.allclose(hr.correlation, ref_corr, atol=1e-4)
    assert np.array_equal(hr.hessian, hr.hessian.T)
    assert hr.max_asymmetry >= 0.0


def test_non_positive_definite_hessian_is_flagged():
    saddle = lambda z: z[0] ** 2 - z[1] ** 2  # noqa: E731
    hr = est.hessian_covariance(saddle, np.zeros(2))
    assert not hr.positive_definite
    assert hr.correlation is None and hr.covariance is None


def test_report_warns_on_non_pd_hessian():
    obj = _Quad(lambda z: (z[0] - 1.0) ** 2 - 0.1 * z[1] ** 2, 2)
    obj.names = ("beta", "a")
    obj.params = lambda z: DEFAULT_TRUTH.replace(beta=float(z[0]), a=float(z[1]))
    r = est._report(obj, np.array([1.0, 0.5]), 0.0, True, 1, (), 1e-4, 1)
    assert not r.hessian_pd and r.correlation is None
    assert any("profile likelihood" in w for w in r.warnings)
    assert all(math.isnan(v) for v in r.std_errors.values())


def test_wald_ci_examples():
    lo, hi = est.wald_ci(4.96, 0.2578)
    assert lo == pytest.approx(4.455, abs=5e-4) and hi == pytest.approx(5.465, abs=5e-4)
    assert est.wald_ci(3.0, 0.0) == (3.0, 3.0)
    lo, hi = est.wald_ci(37.0, 0.4, "log")
    assert hi / 37.0 == pytest.approx(37.0 / lo, rel=1e-9)
    with pytest.raises(ValueError):
        est.wald_ci(1.0, -0.1)


@given(st.floats(1e-3, 1e3), st.floats(0.0, 3.0))
def test_wald_ci_contains_estimate(value, se):
    for transform in ("identity", "log"):
        lo, hi = est.wald_ci(value, se, transform)
        assert lo <= value * (1 + 1e-12) and value <= hi * (1 + 1e-12)


def test_std_errors_raw_uses_delta_method(warm_fit):
    for n, se in warm_fit.std_errors_raw.items():
        v = getattr(warm_fit.estimates, n)
        expected = v * warm_fit.std_errors[n] if n in LOG_PARAMS else warm_fit.std_errors[n]
        assert se == pytest.approx(expected)
