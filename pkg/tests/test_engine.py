import numpy as np
import pytest

from pirhc import engine
from pirhc.costs import quadratic_cost
from pirhc.engine import (CHUNK, BatchRollouts, build_program, run_batch,
                          weight_stats)
from pirhc.models import SdeModel, linear_sde, scalar_polynomial_sde

pytestmark = pytest.mark.skipif(not engine.HAVE_KERNELS,
                                reason="compiled kernels unavailable")


def _programs():
    scalar_model = scalar_polynomial_sde(a_lin=-0.4, a_cub=-0.2, gain=1.0,
                                         noise=0.8)
    scalar_cost = quadratic_cost([[1.3]], [[0.6]], [[1.0]], horizon=1.0)
    lin_model = linear_sde([[0.0, 1.0], [-1.0, -0.7]],
                           [[1.0, 0.0], [0.2, 1.0]],
                           [[0.5, 0.0], [0.1, 0.4]])
    lin_cost = quadratic_cost(np.eye(2), 0.5 * np.eye(2), np.eye(2),
                              horizon=1.0)
    return [(build_program(scalar_model, scalar_cost), 1),
            (build_program(lin_model, lin_cost), 2)]


def _equal(a: BatchRollouts, b: BatchRollouts) -> bool:
    return (np.array_equal(a.eta, b.eta, equal_nan=True)
            and np.array_equal(a.what, b.what, equal_nan=True)
            and np.array_equal(a.failed, b.failed))


@pytest.mark.parametrize("idx", [0, 1])
def test_backends_bit_identical(idx):
    program, dim = _programs()[idx]
    x0 = np.full((1, dim), 1.2)
    kwargs = dict(n_rollouts=5000, n_steps=50, dt=0.02, r_steps=5, seed=17)
    compiled = run_batch(program, x0, backend="compiled", **kwargs)
    fallback = run_batch(program, x0, backend="numpy", **kwargs)
    assert _equal(compiled, fallback)


def test_backend_equality_across_chunk_boundary():
    program, _dim = _programs()[0]
    kwargs = dict(n_rollouts=CHUNK + 123, n_steps=20, dt=0.02, r_steps=3,
                  seed=3)
    compiled = run_batch(program, np.array([[1.0]]), backend="compiled", **kwargs)
    fallback = run_batch(program, np.array([[1.0]]), backend="numpy", **kwargs)
    assert _equal(compiled, fallback)


def test_worker_count_invariance():
    program, _dim = _programs()[0]
    kwargs = dict(n_rollouts=3 * CHUNK // 2, n_steps=25, dt=0.02, r_steps=5,
                  seed=11)
    one = run_batch(program, np.array([[0.7]]), workers=1, **kwargs)
    two = run_batch(program, np.array([[0.7]]), workers=2, **kwargs)
    assert _equal(one, two)


def test_generic_path_matches_family_path(lq_scalar):
    # the same model expressed through plain callables must agree with the
    # closed-family fast path to floating-point noise
    m = lq_scalar.model
    generic_model = SdeModel(state_dim=1, control_dim=1, noise_dim=1,
                             drift=m.drift, control_gain=m.control_gain,
                             diffusion=m.diffusion)
    fam = build_program(m, lq_scalar.cost)
    gen = build_program(generic_model, lq_scalar.cost)
    assert fam.kind == "scalar" and gen.kind == "generic"
    kwargs = dict(n_rollouts=4000, n_steps=50, dt=0.02, r_steps=5, seed=5)
    a = run_batch(fam, np.array([[1.0]]), **kwargs)
    b = run_batch(gen, np.array([[1.0]]), **kwargs)
    assert np.allclose(a.eta, b.eta, rtol=1e-10, atol=1e-12)
    assert np.allclose(a.what, b.what, rtol=1e-10, atol=1e-12)


def test_blowup_rollouts_are_flagged_and_dropped():
    # unstable cubic drift with a coarse step: some rollouts explode
    model = scalar_polynomial_sde(a_cub=1.0, gain=1.0, noise=1.0)
    cost = quadratic_cost([[1.0]], [[1.0]], [[1.0]], horizon=1.0)
    program = build_program(model, cost)
    batch = run_batch(program, np.array([[1.0]]), n_rollouts=500, n_steps=10,
                      dt=0.1, r_steps=2, seed=0)
    assert batch.failed.any()
    assert not batch.failed.all()
    stats = weight_stats(batch.eta, batch.failed, 1.0)
    assert stats.n_valid[0] == 500 - batch.n_failed[0]
    assert np.isfinite(stats.log_mean_w[0])


def test_weight_stats_shift_invariance():
    eta = np.array([[1.0, 2.0, 3.0, 600.0]])
    failed = np.zeros((1, 4), dtype=bool)
    a = weight_stats(eta, failed, gamma=1.0)
    b = weight_stats(eta + 250.0, failed, gamma=1.0)
    assert np.allclose(a.w, b.w)
    assert b.log_mean_w[0] == pytest.approx(a.log_mean_w[0] - 250.0)
    assert a.ess[0] <= 4.0


def test_weight_stats_all_failed_group():
    eta = np.array([[1.0, np.nan], [np.nan, np.nan]])
    failed = ~np.isfinite(eta)
    stats = weight_stats(eta, failed, gamma=1.0)
    assert stats.n_valid.tolist() == [1, 0]
    assert stats.sum_w[1] == 0.0


def test_grouped_rollouts_match_single_group_layout():
    # groups only relabel the flattened rollout space: identical seeds give
    # identical noise per flat index, so group g of a (G, N) call equals a
    # single-group call shifted by the right stream offset
    program, _dim = _programs()[0]
    x0 = np.array([[1.0], [1.0]])
    both = run_batch(program, x0, n_rollouts=100, n_steps=10, dt=0.02,
                     r_steps=2, seed=21)
    flat = run_batch(program, np.array([[1.0]]), n_rollouts=200, n_steps=10,
                     dt=0.02, r_steps=2, seed=21)
    assert np.array_equal(both.eta.reshape(-1), flat.eta[0])


def test_run_batch_argument_validation():
    program, _dim = _programs()[0]
    with pytest.raises(ValueError):
        run_batch(program, np.array([[1.0]]), n_rollouts=0, n_steps=5,
                  dt=0.1, r_steps=1, seed=0)
    with pytest.raises(ValueError):
        run_batch(program, np.array([[1.0]]), n_rollouts=5, n_steps=5,
                  dt=0.1, r_steps=9, seed=0)
    with pytest.raises(ValueError):
        run_batch(program, np.array([[1.0, 2.0]]), n_rollouts=5, n_steps=5,
                  dt=0.1, r_steps=1, seed=0)
