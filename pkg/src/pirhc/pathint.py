"""Self-normalised path-integral estimation of the optimal control.

The control at ``x`` is the small-``r`` limit of a ratio of path
expectations over the *uncontrolled* process started at ``x``:

    u*(x) = lim_{r->0} (1/r) E[ e^{-eta/gamma} * W_r ] / E[ e^{-eta/gamma} ],

where ``eta`` is the path cost and ``W_r`` accumulates the gain
left-inverse times diffusion against the path's own Brownian increments
over the initial window ``[0, r]``:

    W_r = sum_{j=1}^{r/dt2} hinv(z_{j-1}) g(z_{j-1}) (w_j - w_{j-1}).

Finite ``N`` makes this a self-normalised importance-sampling estimate:
weights ``exp(-eta_i/gamma)`` (computed in log space), functional values
``W_r(i)/r``, blown-up rollouts dropped from numerator and denominator,
and a single division by ``r`` at the end.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import engine
from .costs import CostSpec, GammaCoupling, steps_for
from .errors import (AllRolloutsFailedError, DegenerateWeightsError,
                     GainRankError)
from .models import SdeModel, Trajectory

__all__ = [
    "PiConfig",
    "ControlEstimate",
    "noise_functional",
    "estimate_control",
    "estimate_control_batch",
    "bias_sweep",
    "BiasSweepRow",
    "PathIntegralController",
]


@dataclass(frozen=True)
class PiConfig:
    """Monte Carlo configuration for one control estimate.

    ``r`` is the limit-approximation window; when omitted it defaults to
    ``10 * dt2``.  Both the horizon and ``r`` must be integer multiples of
    ``dt2``.  ``weight_floor`` is the effective-sample-size alarm: an
    estimate whose ESS falls below it raises instead of silently returning
    a degenerate average (0 disables the alarm).
    """

    n_rollouts: int
    dt2: float
    r: Optional[float] = None
    weight_floor: float = 10.0

    def __post_init__(self):
        if self.n_rollouts < 1:
            raise ValueError("n_rollouts must be positive")
        if self.dt2 <= 0:
            raise ValueError("dt2 must be positive")
        if self.weight_floor < 0:
            raise ValueError("weight_floor must be non-negative")

    @property
    def r_window(self) -> float:
        return 10.0 * self.dt2 if self.r is None else float(self.r)

    def steps(self, horizon: float) -> tuple[int, int]:
        """(K, R_steps) for a given horizon, with integer-fit checks."""
        K = steps_for(horizon, self.dt2)
        r_steps = steps_for(self.r_window, self.dt2, what="r window")
        if not 0 < self.r_window <= horizon + 1e-12:
            raise ValueError("need 0 < r <= horizon")
        return K, r_steps


@dataclass(frozen=True)
class ControlEstimate:
    """One self-normalised control estimate with diagnostics.

    ``variance_proxy`` is the empirical delta-method covariance of the
    estimate itself (it already carries the 1/N scaling); ``ess`` is
    (sum w)^2 / sum w^2 over the surviving rollouts.
    """

    u_hat: np.ndarray
    ess: float
    variance_proxy: np.ndarray
    n_failed: int = 0


def noise_functional(traj: Trajectory, model: SdeModel, r_steps: int) -> np.ndarray:
    """Noise functional of one stored trajectory: accumulate
    ``hinv(z_{j-1}) g(z_{j-1}) dW_j`` over the first ``r_steps`` stored
    increments.  The left-inverse is the normal-equations one,
    ``(h^T h)^{-1} h^T``, with a rank check at every visited state.
    """
    if r_steps < 0 or r_steps > traj.n_steps:
        raise ValueError("r_steps must lie within the stored increments")
    if r_steps == 0:
        return np.zeros(model.control_dim)
    states = traj.states[:r_steps]
    h = model.gain_at(states)
    g = model.diffusion_at(states)
    hth = np.einsum("rnm,rnk->rmk", h, h)
    lam = np.linalg.eigvalsh(hth)
    bad = lam[:, 0] <= max(h.shape[-2:]) * np.finfo(float).eps * np.maximum(lam[:, -1], 0.0)
    if np.any(bad):
        raise GainRankError("control gain is rank deficient along the trajectory",
                            state=states[np.argmax(bad)].copy())
    hinvg = np.linalg.solve(hth, np.einsum("rnm,rnd->rmd", h, g))
    incr = traj.noise_increments[:r_steps]
    return np.einsum("rmd,rd->rm", hinvg, incr).sum(axis=0)


def _reduce_control(batch: engine.BatchRollouts, gamma: float, r: float,
                    weight_floor: float, n_rollouts: int):
    stats = engine.weight_stats(batch.eta, batch.failed, gamma)
    if np.any(stats.n_valid == 0):
        bad = np.flatnonzero(stats.n_valid == 0)
        raise AllRolloutsFailedError(
            f"all rollouts blew up for batch group(s) {bad.tolist()}")
    if weight_floor > 0 and np.any(stats.ess < weight_floor):
        bad = np.flatnonzero(stats.ess < weight_floor)
        raise DegenerateWeightsError(
            f"effective sample size below floor {weight_floor} for "
            f"group(s) {bad.tolist()}", ess=float(stats.ess.min()))
    wb = stats.w / stats.sum_w[:, None]
    F = batch.what / r
    u = np.einsum("gn,gnm->gm", wb, F)
    D = F - u[:, None, :]
    var = np.einsum("gn,gnm,gnk->gmk", wb * wb, D, D)
    return u, stats.ess, var, batch.n_failed.astype(int)


def estimate_control_batch(model: SdeModel, cost: CostSpec,
                           gamma: GammaCoupling, states, cfg: PiConfig,
                           seed, stream_base: int = 0, workers: int = 1,
                           backend: Optional[str] = None):
    """Independent control estimates at each row of ``states``, sharing one
    chunked batch.  Returns ``(U, ess, variance_proxy, n_failed)`` arrays
    with leading group axis."""
    gamma.require()
    K, r_steps = cfg.steps(cost.horizon)
    states = np.asarray(states, dtype=float)
    if states.ndim == 1:
        states = states[None, :]
    program = engine.build_program(model, cost)
    batch = engine.run_batch(program, states, cfg.n_rollouts, K, cfg.dt2,
                             r_steps, seed=seed, stream_base=stream_base,
                             workers=workers, backend=backend)
    return _reduce_control(batch, gamma.gamma, cfg.r_window,
                           cfg.weight_floor, cfg.n_rollouts)


def estimate_control(model: SdeModel, cost: CostSpec, gamma: GammaCoupling,
                     x, cfg: PiConfig, seed, stream_base: int = 0,
                     workers: int = 1,
                     backend: Optional[str] = None) -> ControlEstimate:
    """Self-normalised importance-sampling estimate of the control at one
    state.  Deterministic given ``seed`` (and independent of ``workers``);
    rollout chunk ``c`` consumes RNG substream ``stream_base + c``.
    """
    u, ess, var, n_failed = estimate_control_batch(
        model, cost, gamma, np.atleast_1d(np.asarray(x, dtype=float)),
        cfg, seed, stream_base=stream_base, workers=workers, backend=backend)
    return ControlEstimate(u_hat=u[0], ess=float(ess[0]),
                           variance_proxy=var[0], n_failed=int(n_failed[0]))


@dataclass(frozen=True)
class BiasSweepRow:
    dt2: float
    r: float
    n_rollouts: int
    mean_error: float
    std_error: float
    errors: np.ndarray = field(repr=False, default=None)


def bias_sweep(model: SdeModel, cost: CostSpec, gamma: GammaCoupling, x,
               configs: Sequence[PiConfig], seeds: Sequence[int],
               oracle_u, workers: int = 1,
               backend: Optional[str] = None) -> list[BiasSweepRow]:
    """Mean estimation error against an oracle control across repeated
    seeds, one row per configuration.  ``mean_error`` is the norm of the
    mean error vector (the Monte Carlo noise averages out across seeds, so
    this estimates the bias); ``std_error`` is its standard error.
    """
    oracle_u = np.atleast_1d(np.asarray(oracle_u, dtype=float))
    rows = []
    for cfg in configs:
        errs = np.empty((len(seeds), model.control_dim))
        for s_idx, seed in enumerate(seeds):
            est = estimate_control(model, cost, gamma, x, cfg, seed,
                                   workers=workers, backend=backend)
            errs[s_idx] = est.u_hat - oracle_u
        mean_vec = errs.mean(axis=0)
        if len(seeds) > 1:
            se_vec = errs.std(axis=0, ddof=1) / np.sqrt(len(seeds))
        else:
            se_vec = np.full(model.control_dim, np.nan)
        rows.append(BiasSweepRow(dt2=cfg.dt2, r=cfg.r_window,
                                 n_rollouts=cfg.n_rollouts,
                                 mean_error=float(np.linalg.norm(mean_vec)),
                                 std_error=float(np.linalg.norm(se_vec)),
                                 errors=errs))
    return rows


class PathIntegralController:
    """Feedback law backed by the Monte Carlo estimator.

    Each invocation receives its own seed sequence from the closed-loop
    driver, keeping controller randomness on a stream disjoint from the
    plant noise.  Supports batched evaluation across independent
    realisations sharing one rollout batch.
    """

    def __init__(self, model: SdeModel, cost: CostSpec, gamma: GammaCoupling,
                 cfg: PiConfig, workers: int = 1,
                 backend: Optional[str] = None):
        gamma.require()
        self.model = model
        self.cost = cost
        self.gamma = gamma
        self.cfg = cfg
        self.workers = workers
        self.backend = backend

    def evaluate(self, t: float, x, rng_seq) -> tuple[np.ndarray, ControlEstimate]:
        est = estimate_control(self.model, self.cost, self.gamma, x,
                               self.cfg, rng_seq, workers=self.workers,
                               backend=self.backend)
        return est.u_hat, est

    def evaluate_batch(self, t: float, states, rng_seq):
        return estimate_control_batch(self.model, self.cost, self.gamma,
                                      states, self.cfg, rng_seq,
                                      workers=self.workers,
                                      backend=self.backend)
