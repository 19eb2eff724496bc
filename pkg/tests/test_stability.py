import math

import numpy as np
import pytest

from pirhc.errors import NoTransientError, RiccatiSolveError
from pirhc.models import Trajectory
from pirhc.rhc import ErrorInjector, RhcConfig, run_rhc_batch
from pirhc.stability import (auto_windows, estimate_level_set,
                             estimate_moments, first_is_max, fit_decay_rate,
                             level_set_statistics, robustness_sweep,
                             solve_riccati, trend_non_decreasing,
                             trend_non_increasing)


def _closed_form_P(q, q_T, r_c, T, s):
    root = math.sqrt(q * r_c)
    return root * math.tanh(math.sqrt(q / r_c) * (T - s)
                            + math.atanh(q_T / root))


def test_riccati_matches_scalar_closed_form():
    q, q_T, r_c, T = 1.0, 0.5, 1.0, 1.0
    oracle = solve_riccati([[0.0]], [[1.0]], [[1.0]], [[q]], [[q_T]],
                           [[r_c]], T)
    for s in np.linspace(0.0, T, 41):
        assert abs(oracle.P_of_s(s)[0, 0]
                   - _closed_form_P(q, q_T, r_c, T, s)) <= 1e-6


def test_riccati_fixed_point_is_constant():
    # q_T = sqrt(q * r_c) sits at the equilibrium of the scalar Riccati ODE
    q, r_c = 2.0, 0.5
    q_T = math.sqrt(q * r_c)
    oracle = solve_riccati([[0.0]], [[1.0]], [[1.0]], [[q]], [[q_T]],
                           [[r_c]], 1.0)
    vals = [oracle.P_of_s(s)[0, 0] for s in np.linspace(0, 1, 11)]
    assert max(vals) - min(vals) <= 1e-9


def test_riccati_zero_cost_gives_zero_control():
    oracle = solve_riccati([[0.0]], [[1.0]], [[1.0]], [[0.0]], [[0.0]],
                           [[1.0]], 1.0)
    assert abs(oracle.P_of_s(0.3)[0, 0]) <= 1e-12
    assert np.allclose(oracle.control(np.array([2.0])), 0.0)


def test_riccati_residual_gate():
    with pytest.raises(RiccatiSolveError):
        solve_riccati([[0.0]], [[1.0]], [[1.0]], [[1.0]], [[0.5]], [[1.0]],
                      1.0, residual_tol=1e-16)


def test_oracle_gradient_consistency(lq_scalar):
    # u*(x) = -R^{-1} B^T P(0) x must equal -R^{-1} h^T d/dx v(x)
    oracle = lq_scalar.oracle
    x = np.array([1.7])
    h = 1e-6
    grad = (oracle.value(np.array([1.7 + h])) - oracle.value(np.array([1.7 - h]))) / (2 * h)
    assert oracle.control(x)[0] == pytest.approx(-grad, rel=1e-6)


def test_moments_constant_trajectory():
    traj = Trajectory(times=np.arange(4) * 0.1,
                      states=np.full((4, 1), 2.0),
                      noise_increments=np.zeros((3, 1)))
    curve = estimate_moments([traj], p=3.0)
    assert np.allclose(curve.moments, 8.0)
    assert np.allclose(curve.stderr, 0.0)


def test_moments_order_zero_is_one():
    states = np.random.default_rng(0).normal(size=(5, 7, 2))
    curve = estimate_moments((np.arange(7) * 0.1, states), p=0.0)
    assert np.allclose(curve.moments, 1.0)


def test_moments_plateau_matches_lyapunov(lq_scalar):
    # closed-loop OU under the exact feedback: tail of E|X|^2 agrees with
    # the stationary Lyapunov covariance
    oracle = lq_scalar.oracle
    cfg = RhcConfig(dt1=0.01, dt_sim=0.01, t_end=8.0)
    batch = run_rhc_batch(lq_scalar.model, oracle.control_source(),
                          ErrorInjector("none"), cfg, [0.0], 500, seed=4)
    curve = estimate_moments((batch.times, batch.states), p=2.0, seed=4)
    tail = curve.times >= 4.0
    stationary = oracle.stationary_covariance()[0, 0]
    resid = np.abs(curve.moments[tail] - stationary)
    assert np.all(resid <= 3.0 * np.maximum(curve.stderr[tail], 1e-12) + 0.02)


def test_fit_decay_rate_exact_exponential():
    times = np.linspace(0.0, 20.0, 401)
    moments = 4.0 * np.exp(-1.3 * times) + 0.2
    curve = estimate_moments(
        (times, np.sqrt(moments)[None, :, None]), p=2.0, n_boot=0)
    fit = fit_decay_rate(curve, (0.0, 3.0), (15.0, 20.0), n_boot=0)
    assert fit.rate == pytest.approx(1.3, abs=1e-6)
    assert fit.plateau == pytest.approx(0.2, abs=1e-7)


def test_fit_decay_rate_no_transient():
    times = np.linspace(0.0, 10.0, 101)
    moments = np.full_like(times, 0.7)
    curve = estimate_moments((times, np.sqrt(moments)[None, :, None]),
                             p=2.0, n_boot=0)
    with pytest.raises(NoTransientError):
        fit_decay_rate(curve, (0.0, 3.0), (8.0, 10.0), n_boot=0)


def test_fit_decay_rate_window_validation():
    times = np.linspace(0.0, 10.0, 101)
    curve = estimate_moments((times, np.ones((1, 101, 1))), p=2.0, n_boot=0)
    with pytest.raises(ValueError):
        fit_decay_rate(curve, (0.0, 9.0), (5.0, 10.0), n_boot=0)  # overlap
    with pytest.raises(ValueError):
        fit_decay_rate(curve, (0.0, 0.2), (8.0, 10.0), n_boot=0)  # too short


def test_fitted_rate_matches_closed_loop_eigenvalue(lq_scalar):
    oracle = lq_scalar.oracle
    cfg = RhcConfig(dt1=0.01, dt_sim=0.01, t_end=10.0)
    batch = run_rhc_batch(lq_scalar.model, oracle.control_source(),
                          ErrorInjector("none"), cfg, [3.0], 500, seed=6)
    curve = estimate_moments((batch.times, batch.states), p=2.0, seed=6)
    tr_w, tl_w = auto_windows(curve.times, curve.moments)
    fit = fit_decay_rate(curve, tr_w, tl_w, seed=6)
    analytic = oracle.decay_rate()
    assert abs(fit.rate - analytic) / analytic <= 0.25
    assert fit.rate_ci[0] > 0.0


def test_level_set_estimate_matches_oracle(lq_scalar):
    delta = 0.5
    est = estimate_level_set(lq_scalar.model, lq_scalar.cost, lq_scalar.gamma,
                             delta, n_sphere=4, N=40_000, dt2=0.01, seed=0)
    assert est.points.shape == (2, 1)  # 1-D sphere is two points
    analytic = lq_scalar.oracle.ball_level(delta)
    assert abs(est.level - analytic) / analytic <= 0.05


def test_level_set_monotone_in_radius(lq_scalar):
    kw = dict(n_sphere=4, N=20_000, dt2=0.01, seed=1)
    small = estimate_level_set(lq_scalar.model, lq_scalar.cost,
                               lq_scalar.gamma, 0.25, **kw)
    big = estimate_level_set(lq_scalar.model, lq_scalar.cost,
                             lq_scalar.gamma, 0.75, **kw)
    assert small.level <= big.level


def test_level_set_statistics_on_synthetic_paths():
    times = np.arange(5) * 1.0
    # |x| paths: one dips inside at t=2 and stays, one never enters
    states = np.array([
        [[2.0], [1.5], [0.4], [0.4], [0.9]],
        [[2.0], [2.0], [2.0], [2.0], [2.0]],
    ])
    value = lambda s: np.asarray(s)[..., 0] ** 2
    hit, residence, hit_times = level_set_statistics(
        times, states, value, level=0.5, slack=1.0)
    assert hit == pytest.approx(0.5)
    assert hit_times[0] == pytest.approx(2.0)
    assert math.isnan(hit_times[1])
    # post-hit: v = {0.16, 0.16, 0.81} vs slackened level 1.0 -> all inside
    assert residence == pytest.approx(1.0)


def test_trend_helpers():
    assert trend_non_increasing([3.0, 2.5, 2.6], [0.0, 0.1, 0.1])
    assert not trend_non_increasing([3.0, 2.5, 2.9], [0.0, 0.1, 0.1])
    assert trend_non_decreasing([1.0, 1.1, 1.05], [0.0, 0.0, 0.1])
    assert first_is_max([2.0, 1.9, 2.05], [0.1, 0.0, 0.0])
    assert not first_is_max([2.0, 1.9, 2.5], [0.1, 0.0, 0.1])


def test_robustness_sweep_rows_and_shared_seed(lq_scalar):
    cfg = RhcConfig(dt1=0.02, dt_sim=0.02, t_end=6.0)
    injectors = [("none", ErrorInjector("deterministic", epsilon=0.0)),
                 ("big", ErrorInjector("deterministic", epsilon=1.5))]
    sweep = robustness_sweep(lq_scalar.model,
                             lq_scalar.oracle.control_source(), injectors,
                             cfg, [3.0], 200, seed=9, n_boot=100)
    assert len(sweep.rows) == 2
    # a large adversarial error visibly degrades the fitted rate
    assert sweep.rows[1].fit.rate < sweep.rows[0].fit.rate
    assert sweep.rows[1].fit.plateau > sweep.rows[0].fit.plateau
