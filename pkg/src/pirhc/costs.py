"""Cost specifications, the noise/control-cost coupling, and Monte Carlo
value estimation.

The finite-horizon cost of a path is

    eta = phi(z_K) + sum_{j=0}^{K-1} ell(z_j) * dt2,

a left-endpoint quadrature of the running state cost plus the terminal
cost; the control enters separately through the quadratic form
``0.5 u^T R u``.  When a single gamma > 0 satisfies

    gamma * h(x) R^{-1} h(x)^T = g(x) g(x)^T

on the relevant region, the exponentially transformed value function
``exp(-v/gamma)`` solves a linear backward PDE, and the value-to-go is the
log of a path expectation over the *uncontrolled* process:

    v(x) = -gamma * log E[ exp(-eta / gamma) ].

That identity is the estimator implemented here and the validity gate for
the path-integral controller in :mod:`pirhc.pathint`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import engine
from .errors import AllRolloutsFailedError, CouplingViolationError
from .models import SdeModel, Trajectory

__all__ = [
    "CostSpec",
    "QuadCostParams",
    "GammaCoupling",
    "ValueEstimate",
    "quadratic_cost",
    "check_gamma_coupling",
    "path_cost",
    "estimate_value",
    "validate_cost",
    "steps_for",
]


@dataclass(frozen=True)
class QuadCostParams:
    """Quadratic cost matrices for the compiled rollout kernels:
    running cost 0.5 x^T Q x, terminal cost 0.5 x^T Q_T x."""

    Q: np.ndarray
    Q_T: np.ndarray


@dataclass(frozen=True)
class CostSpec:
    """Running/terminal state costs, the control-cost matrix and horizon.

    ``running_state_cost`` and ``terminal_cost`` are non-negative,
    vanish at the origin, and are vectorised over leading axes.
    ``growth_p`` is the polynomial growth order of the modelling
    hypotheses; ``bound_c2``/``bound_c3`` are optional known sandwich
    constants (c2 |x|^p <= phi(x) <= c3 (1 + |x|^p)).
    """

    running_state_cost: Callable[[np.ndarray], np.ndarray]
    terminal_cost: Callable[[np.ndarray], np.ndarray]
    control_cost_matrix: np.ndarray
    horizon: float
    growth_p: float = 2.0
    bound_c2: Optional[float] = None
    bound_c3: Optional[float] = None
    quad_params: Optional[QuadCostParams] = None

    def __post_init__(self):
        R = np.atleast_2d(np.asarray(self.control_cost_matrix, dtype=float))
        if not np.allclose(R, R.T):
            raise ValueError("control cost matrix must be symmetric")
        if np.linalg.eigvalsh(R)[0] <= 0:
            raise ValueError("control cost matrix must be positive definite")
        R = R.copy()
        R.setflags(write=False)
        object.__setattr__(self, "control_cost_matrix", R)
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        if self.growth_p < 1:
            raise ValueError("growth_p must be >= 1")


def quadratic_cost(Q, Q_T, R, horizon: float) -> CostSpec:
    """Quadratic instance: ell(x) = 0.5 x^T Q x, phi(x) = 0.5 x^T Q_T x."""
    Q = np.atleast_2d(np.asarray(Q, dtype=float)).copy()
    Q_T = np.atleast_2d(np.asarray(Q_T, dtype=float)).copy()
    for name, M in (("Q", Q), ("Q_T", Q_T)):
        if not np.allclose(M, M.T):
            raise ValueError(f"{name} must be symmetric")
        if np.linalg.eigvalsh(M)[0] < -1e-12:
            raise ValueError(f"{name} must be positive semi-definite")
        M.setflags(write=False)

    def running(x):
        x = np.asarray(x, dtype=float)
        y = np.einsum("ij,...j->...i", Q, x)
        return 0.5 * np.einsum("...i,...i->...", x, y)

    def terminal(x):
        x = np.asarray(x, dtype=float)
        y = np.einsum("ij,...j->...i", Q_T, x)
        return 0.5 * np.einsum("...i,...i->...", x, y)

    p = QuadCostParams(Q=Q, Q_T=Q_T)
    c2 = 0.5 * min(np.linalg.eigvalsh(Q_T)[0], np.linalg.eigvalsh(Q)[0])
    c3 = 0.5 * max(np.linalg.eigvalsh(Q_T)[-1], np.linalg.eigvalsh(Q)[-1])
    return CostSpec(running_state_cost=running, terminal_cost=terminal,
                    control_cost_matrix=R, horizon=float(horizon),
                    growth_p=2.0,
                    bound_c2=(c2 if c2 > 0 else None),
                    bound_c3=(c3 if c3 > 0 else None),
                    quad_params=p)


@dataclass(frozen=True)
class GammaCoupling:
    """Result of fitting gamma in  gamma h R^{-1} h^T = g g^T  over a probe
    set.  ``residual_norm`` is the worst Frobenius mismatch over the
    probes; the coupling is ``satisfied`` iff the residual is within
    tolerance and gamma is positive."""

    gamma: float
    residual_norm: float
    tol: float
    satisfied: bool

    def require(self) -> "GammaCoupling":
        if not self.satisfied:
            raise CouplingViolationError(
                "noise/control-cost coupling violated: no positive gamma "
                f"fits (gamma={self.gamma:.6g}, residual={self.residual_norm:.3g}, "
                f"tol={self.tol:.3g})",
                gamma=self.gamma, residual_norm=self.residual_norm)
        return self


def check_gamma_coupling(model: SdeModel, cost: CostSpec, probe_points,
                         tol: float = 1e-9,
                         raise_on_violation: bool = True) -> GammaCoupling:
    """Fit the single best gamma by least squares over the probe points and
    certify the coupling.  Raises :class:`CouplingViolationError` when the
    worst residual exceeds ``tol`` (or gamma is non-positive), unless
    ``raise_on_violation`` is False.
    """
    probes = [np.atleast_1d(np.asarray(x, dtype=float)) for x in probe_points]
    if not probes:
        raise ValueError("need at least one probe point")
    Rinv = np.linalg.inv(cost.control_cost_matrix)
    num = 0.0
    den = 0.0
    mats = []
    for x in probes:
        h = model.gain_at(x)
        g = model.diffusion_at(x)
        M = h @ Rinv @ h.T
        Gg = g @ g.T
        mats.append((M, Gg))
        num += float(np.sum(M * Gg))
        den += float(np.sum(M * M))
    gamma = num / den if den > 0 else 0.0
    residual = max(float(np.linalg.norm(gamma * M - Gg)) for M, Gg in mats)
    satisfied = residual <= tol and gamma > 0
    coupling = GammaCoupling(gamma=gamma, residual_norm=residual, tol=tol,
                             satisfied=satisfied)
    if raise_on_violation and not satisfied:
        coupling.require()
    return coupling


def steps_for(total: float, step: float, what: str = "horizon") -> int:
    """Number of steps in ``total/step``, requiring an integer fit."""
    if step <= 0:
        raise ValueError("step must be positive")
    k = round(total / step)
    if k < 0 or abs(k * step - total) > 1e-9 * max(1.0, abs(total)):
        raise ValueError(f"{what} ({total}) is not an integer multiple of {step}")
    return int(k)


def path_cost(traj: Trajectory, cost: CostSpec, dt2: float) -> float:
    """Cost of one discretised path: terminal cost plus left-endpoint
    quadrature of the running state cost (the initial state included, the
    final one not)."""
    K = steps_for(cost.horizon, dt2)
    if traj.n_steps != K:
        raise ValueError(f"trajectory has {traj.n_steps} steps, expected {K}")
    if K > 0:
        spacing = np.diff(traj.times)
        if not np.allclose(spacing, dt2, rtol=1e-9, atol=1e-12):
            raise ValueError("trajectory grid spacing does not match dt2")
    running = np.asarray(cost.running_state_cost(traj.states[:-1]), dtype=float)
    eta = float(np.sum(running) * dt2) if K > 0 else 0.0
    return eta + float(cost.terminal_cost(traj.states[-1]))


@dataclass(frozen=True)
class ValueEstimate:
    """Monte Carlo value estimate with a delta-method standard error."""

    value: float
    std_err: float
    ess: float
    n_failed: int


def estimate_value(model: SdeModel, cost: CostSpec, gamma: GammaCoupling,
                   x, N: int, dt2: float, seed,
                   stream_base: int = 0, workers: int = 1,
                   backend: Optional[str] = None) -> ValueEstimate:
    """Estimate the value-to-go at ``x`` from ``N`` uncontrolled rollouts:

        v_hat = -gamma * log( mean_i exp(-eta_i / gamma) ),

    computed in log space with a single max-subtraction.  The standard
    error propagates the weight-mean variance through the log (delta
    method).  Blown-up rollouts are dropped and reported.
    """
    gamma.require()
    K = steps_for(cost.horizon, dt2)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    program = engine.build_program(model, cost)
    batch = engine.run_batch(program, x[None, :], N, K, dt2, r_steps=0,
                             seed=seed, stream_base=stream_base,
                             workers=workers, backend=backend)
    stats = engine.weight_stats(batch.eta, batch.failed, gamma.gamma)
    n_valid = int(stats.n_valid[0])
    if n_valid == 0:
        raise AllRolloutsFailedError("all rollouts blew up; no finite path costs")
    value = -gamma.gamma * float(stats.log_mean_w[0])
    if n_valid > 1:
        mean_ratio = float(stats.sum_w2[0]) * n_valid / float(stats.sum_w[0]) ** 2
        rel2 = max(mean_ratio - 1.0, 0.0) / (n_valid - 1)
        std_err = gamma.gamma * float(np.sqrt(rel2))
    else:
        std_err = float("inf")
    return ValueEstimate(value=value, std_err=std_err,
                         ess=float(stats.ess[0]),
                         n_failed=int(batch.n_failed[0]))


def validate_cost(cost: CostSpec, probe_points) -> None:
    """Spot-check cost invariants: both costs vanish at the origin and are
    non-negative at the probes; the sandwich bounds hold when provided.
    ``probe_points`` must contain at least one state vector (it fixes the
    state dimension)."""
    probe_points = [np.atleast_1d(np.asarray(x, dtype=float)) for x in probe_points]
    if not probe_points:
        raise ValueError("need at least one probe point")
    origin = np.zeros_like(probe_points[0])
    phi0 = float(cost.terminal_cost(origin))
    ell0 = float(cost.running_state_cost(origin))
    if abs(phi0) > 1e-12 or abs(ell0) > 1e-12:
        raise ValueError("costs must vanish at the origin")
    for x in probe_points:
        phi = float(cost.terminal_cost(x))
        ell = float(cost.running_state_cost(x))
        if phi < 0 or ell < 0:
            raise ValueError(f"negative cost at x={x}")
        r = float(np.linalg.norm(x)) ** cost.growth_p
        if cost.bound_c2 is not None and phi < cost.bound_c2 * r - 1e-9:
            raise ValueError(f"terminal cost below its lower bound at x={x}")
        if cost.bound_c3 is not None and phi > cost.bound_c3 * (1 + r) + 1e-9:
            raise ValueError(f"terminal cost above its upper bound at x={x}")
