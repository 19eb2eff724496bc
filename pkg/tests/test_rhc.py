import math

import numpy as np
import pytest

from pirhc.engine import as_seed_sequence, generator_for
from pirhc.errors import DegenerateWeightsError
from pirhc.models import NoiseStream, scalar_polynomial_sde
from pirhc.pathint import PathIntegralController, PiConfig
from pirhc.rhc import (ROLE_PLANT, CallbackControlSource, ErrorInjector,
                       RhcConfig, hold_wrap, run_rhc, run_rhc_batch,
                       window_index)
from pirhc.sde import simulate_controlled


def test_rhc_config_validation():
    RhcConfig(dt1=0.05, dt_sim=0.01, t_end=1.0)
    with pytest.raises(ValueError):
        RhcConfig(dt1=0.05, dt_sim=0.02, t_end=1.0)  # dt1/dt_sim not integer
    with pytest.raises(ValueError):
        RhcConfig(dt1=0.3, dt_sim=0.1, t_end=1.0)  # t_end/dt1 not integer
    cfg = RhcConfig(dt1=0.05, dt_sim=0.01, t_end=1.0)
    assert cfg.substeps == 5 and cfg.n_windows == 20


def test_window_index_handles_float_grids():
    assert window_index(0.0, 0.05) == 0
    assert window_index(0.3, 0.05) == 6
    assert window_index(0.25 + 1e-12, 0.05) == 5
    assert window_index(3 * 0.1, 0.1) == 3


def test_hold_wrap_is_noop_at_simulation_cadence():
    model = scalar_polynomial_sde(a_lin=-1.0, gain=1.0, noise=1.0)
    base = lambda t, x: -0.8 * x
    stream = NoiseStream(3, 1)
    raw = simulate_controlled(model, [1.0], base, 0.02, 1.0, stream)
    held = simulate_controlled(model, [1.0], hold_wrap(base, 0.02), 0.02, 1.0,
                               stream)
    assert np.array_equal(raw.states, held.states)


def test_hold_wrap_produces_step_function():
    held = hold_wrap(lambda t, x: t, dt1=0.25)
    queried = [held(t, None) for t in np.arange(0.0, 1.0, 0.05)]
    expected = [math.floor(t / 0.25 + 1e-6) * 0.25
                for t in np.arange(0.0, 1.0, 0.05)]
    assert queried == pytest.approx(expected)


def test_hold_wrap_caches_within_window():
    calls = []

    def base(t, x):
        calls.append(t)
        return np.zeros(1)

    held = hold_wrap(base, 0.1)
    for t in np.arange(0.0, 0.5, 0.02):
        held(t, np.zeros(1))
    assert len(calls) == 5  # one evaluation per window


# --- injectors --------------------------------------------------------------


def _gen(seed=0):
    return generator_for(as_seed_sequence(seed))


def test_injector_none_and_zero_epsilon_are_identity():
    u = np.array([[0.3, -0.7], [0.0, 0.0]])
    for inj in (ErrorInjector("none"),
                ErrorInjector("deterministic", epsilon=0.0),
                ErrorInjector("gaussian", sigma_scale=0.0),
                ErrorInjector("mixed", epsilon=0.0, sigma_scale=0.0)):
        out = inj.apply_batch(u, _gen())
        assert np.array_equal(out, u)


def test_injector_deterministic_norm_is_epsilon():
    inj = ErrorInjector("deterministic", epsilon=0.05)
    u = np.array([[1.0, 0.0], [0.0, -2.0], [0.0, 0.0]])
    out = inj.apply_batch(u, _gen())
    norms = np.linalg.norm(out - u, axis=1)
    assert norms == pytest.approx([0.05, 0.05, 0.05])
    # adversarial direction opposes the nominal control
    assert out[0, 0] < 1.0
    assert out[1, 1] > -2.0


def test_injector_random_direction_uses_generator():
    inj = ErrorInjector("deterministic", epsilon=0.1,
                        perturbation_direction="random-per-call")
    u = np.zeros((200, 2))
    out = inj.apply_batch(u, _gen(4))
    norms = np.linalg.norm(out, axis=1)
    assert norms == pytest.approx(np.full(200, 0.1))
    assert np.std(out[:, 0]) > 0.01  # directions actually vary


def test_injector_gaussian_covariance_calibration():
    # empirical covariance over 1e4 window draws within 10% of configured
    sigma_scale = 0.09
    inj = ErrorInjector("gaussian", sigma_scale=sigma_scale)
    u = np.zeros((10_000, 2))
    out = inj.apply_batch(u, _gen(11))
    cov = np.cov(out.T)
    assert np.allclose(cov, sigma_scale * np.eye(2),
                       atol=0.1 * sigma_scale)


def test_injector_mixed_mean_and_covariance():
    inj = ErrorInjector("mixed", epsilon=0.2, sigma_scale=0.04,
                        perturbation_direction=np.array([1.0, 0.0]))
    u = np.zeros((20_000, 2))
    out = inj.apply_batch(u, _gen(2))
    assert np.linalg.norm(out.mean(axis=0) - [0.2, 0.0]) <= 0.01
    assert np.allclose(np.cov(out.T), 0.04 * np.eye(2), atol=0.006)


def test_injector_validation():
    with pytest.raises(ValueError):
        ErrorInjector("weird")
    with pytest.raises(ValueError):
        ErrorInjector("deterministic", epsilon=-1.0)
    with pytest.raises(ValueError):
        ErrorInjector("deterministic",
                      perturbation_direction=np.array([2.0, 0.0]))
    with pytest.raises(ValueError):
        ErrorInjector("gaussian", sigma_scale=0.01,
                      covariance=np.array([[0.5]]))  # norm exceeds bound


# --- closed loop -------------------------------------------------------------


def test_run_rhc_matches_simulate_controlled_at_sim_cadence(lq_scalar):
    oracle = lq_scalar.oracle
    cfg = RhcConfig(dt1=0.02, dt_sim=0.02, t_end=1.0)
    res = run_rhc(lq_scalar.model, oracle.control_source(),
                  ErrorInjector("none"), cfg, [1.5], seed=21)
    direct = simulate_controlled(lq_scalar.model, [1.5],
                                 lambda t, x: oracle.control(x),
                                 0.02, 1.0, NoiseStream(21, ROLE_PLANT))
    assert np.array_equal(res.trajectory.states, direct.states)
    assert len(res.steps) == cfg.n_windows


def test_run_rhc_mixed_zero_error_equals_none(lq_scalar):
    oracle = lq_scalar.oracle
    cfg = RhcConfig(dt1=0.05, dt_sim=0.01, t_end=1.0)
    a = run_rhc(lq_scalar.model, oracle.control_source(),
                ErrorInjector("none"), cfg, [2.0], seed=5)
    b = run_rhc(lq_scalar.model, oracle.control_source(),
                ErrorInjector("mixed", epsilon=0.0, sigma_scale=0.0), cfg,
                [2.0], seed=5)
    assert np.array_equal(a.trajectory.states, b.trajectory.states)


def test_plant_noise_is_independent_of_controller(lq_scalar):
    # swapping the controller must not change the plant's noise stream
    cfg = RhcConfig(dt1=0.05, dt_sim=0.01, t_end=0.5)
    oracle_run = run_rhc(lq_scalar.model, lq_scalar.oracle.control_source(),
                         ErrorInjector("none"), cfg, [1.0], seed=8)
    pi = PathIntegralController(lq_scalar.model, lq_scalar.cost,
                                lq_scalar.gamma,
                                PiConfig(n_rollouts=64, dt2=0.05, r=0.1,
                                         weight_floor=0.0))
    pi_run = run_rhc(lq_scalar.model, pi, ErrorInjector("none"), cfg, [1.0],
                     seed=8)
    assert np.array_equal(oracle_run.trajectory.noise_increments,
                          pi_run.trajectory.noise_increments)
    assert not np.array_equal(oracle_run.trajectory.states,
                              pi_run.trajectory.states)


def test_run_rhc_hold_is_constant_within_windows(lq_scalar):
    cfg = RhcConfig(dt1=0.1, dt_sim=0.02, t_end=1.0)
    res = run_rhc(lq_scalar.model, lq_scalar.oracle.control_source(),
                  ErrorInjector("none"), cfg, [1.0], seed=2)
    assert len(res.steps) == 10  # one control evaluation per window


def test_degenerate_weights_error_carries_step_index(lq_scalar):
    pi = PathIntegralController(lq_scalar.model, lq_scalar.cost,
                                lq_scalar.gamma,
                                PiConfig(n_rollouts=16, dt2=0.05, r=0.1,
                                         weight_floor=15.9))
    cfg = RhcConfig(dt1=0.05, dt_sim=0.05, t_end=0.5)
    with pytest.raises(DegenerateWeightsError) as exc:
        run_rhc(lq_scalar.model, pi, ErrorInjector("none"), cfg, [4.0], seed=0)
    assert exc.value.step_index is not None


def test_run_rhc_batch_shapes_and_determinism(lq_scalar):
    cfg = RhcConfig(dt1=0.05, dt_sim=0.01, t_end=1.0)
    src = lq_scalar.oracle.control_source()
    a = run_rhc_batch(lq_scalar.model, src, ErrorInjector("none"), cfg,
                      [2.0], 40, seed=13)
    b = run_rhc_batch(lq_scalar.model, src, ErrorInjector("none"), cfg,
                      [2.0], 40, seed=13)
    assert a.states.shape == (40, 101, 1)
    assert a.u_applied.shape == (20, 40, 1)
    assert np.array_equal(a.states, b.states)
    # different seed decorrelates
    c = run_rhc_batch(lq_scalar.model, src, ErrorInjector("none"), cfg,
                      [2.0], 40, seed=14)
    assert not np.array_equal(a.states, c.states)


def test_run_rhc_batch_realizations_are_independent(lq_scalar):
    cfg = RhcConfig(dt1=0.05, dt_sim=0.01, t_end=1.0)
    batch = run_rhc_batch(lq_scalar.model, lq_scalar.oracle.control_source(),
                          ErrorInjector("none"), cfg, [2.0], 200, seed=3)
    finals = batch.states[:, -1, 0]
    corr = np.corrcoef(finals[:100], finals[100:])[0, 1]
    assert abs(corr) < 0.3


def test_callback_source_batch_fallback():
    src = CallbackControlSource(lambda t, x: -np.atleast_1d(x)[:1])
    U, ess, var, failed = src.evaluate_batch(0.0, np.array([[1.0], [2.0]]))
    assert np.allclose(U, [[-1.0], [-2.0]])
    assert ess is None
