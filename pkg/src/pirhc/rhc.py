"""Closed-loop receding-horizon application with sample-and-hold cadence.

The base controller is evaluated at the window starts ``t_k = k * dt1``
with the current plant state, optionally perturbed by an error injector,
and the result is held constant on ``[t_k, t_{k+1})`` while the plant
advances with the (finer) simulation step.  Plant noise, controller
randomness and injector randomness live on disjoint RNG substreams of the
run seed, so the controller's Monte Carlo rollouts never consume plant
increments.

Error injectors realise the studied controller-error classes:

* ``deterministic`` -- a bounded perturbation of norm exactly ``epsilon``,
  by default aligned against the nominal control (the adversarial
  direction), optionally random per call or a fixed unit vector;
* ``gaussian``      -- additive N(0, Sigma) noise with ||Sigma|| <=
  ``sigma_scale`` (Sigma = sigma_scale * I unless supplied);
* ``mixed``         -- both: N(mu, Sigma) with ||mu|| <= epsilon.

Perturbations are drawn once per hold window, not per simulation substep.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .engine import as_seed_sequence, child_sequence, generator_for
from .errors import NumericalBlowupError, PirhcError
from .models import NoiseStream, SdeModel, Trajectory
from .pathint import ControlEstimate
from .sde import simulate_controlled

__all__ = [
    "RhcConfig",
    "ErrorInjector",
    "hold_wrap",
    "window_index",
    "CallbackControlSource",
    "StepRecord",
    "RhcResult",
    "run_rhc",
    "BatchRhcResult",
    "run_rhc_batch",
    "ROLE_PLANT",
    "ROLE_CONTROLLER",
    "ROLE_INJECTOR",
]

# Substream roles of a closed-loop run seed.
ROLE_PLANT = 0
ROLE_CONTROLLER = 1
ROLE_INJECTOR = 2


def window_index(t: float, dt1: float) -> int:
    """Index k of the hold window [k*dt1, (k+1)*dt1) containing ``t``,
    robust to grid-point rounding."""
    return int(math.floor(t / dt1 + 1e-6))


@dataclass(frozen=True)
class RhcConfig:
    """Outer sample-and-hold step, plant simulation step and duration."""

    dt1: float
    dt_sim: float
    t_end: float

    def __post_init__(self):
        if min(self.dt1, self.dt_sim, self.t_end) <= 0:
            raise ValueError("dt1, dt_sim and t_end must be positive")
        if abs(self.substeps * self.dt_sim - self.dt1) > 1e-9 * self.dt1:
            raise ValueError("dt1 must be an integer multiple of dt_sim")
        if abs(self.n_windows * self.dt1 - self.t_end) > 1e-9 * max(1.0, self.t_end):
            raise ValueError("t_end must be an integer multiple of dt1")

    @property
    def substeps(self) -> int:
        return max(1, round(self.dt1 / self.dt_sim))

    @property
    def n_windows(self) -> int:
        return max(1, round(self.t_end / self.dt1))


@dataclass(frozen=True)
class ErrorInjector:
    """Controller-error model applied once per hold window.

    ``perturbation_direction`` applies to the deterministic part:
    "adversarial" (against the nominal control), "random-per-call", or a
    fixed unit vector.  ``covariance`` overrides the default
    ``sigma_scale * I`` Gaussian covariance; its spectral norm must not
    exceed ``sigma_scale``.
    """

    kind: str = "none"
    epsilon: float = 0.0
    sigma_scale: float = 0.0
    perturbation_direction: Union[str, np.ndarray] = "adversarial"
    covariance: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in ("none", "deterministic", "gaussian", "mixed"):
            raise ValueError(f"unknown injector kind: {self.kind!r}")
        if self.epsilon < 0 or self.sigma_scale < 0:
            raise ValueError("epsilon and sigma_scale must be non-negative")
        if isinstance(self.perturbation_direction, str):
            if self.perturbation_direction not in ("adversarial", "random-per-call"):
                raise ValueError("direction must be 'adversarial', "
                                 "'random-per-call' or a unit vector")
        else:
            d = np.atleast_1d(np.asarray(self.perturbation_direction, dtype=float))
            if abs(np.linalg.norm(d) - 1.0) > 1e-9:
                raise ValueError("fixed perturbation direction must be a unit vector")
            object.__setattr__(self, "perturbation_direction", d)
        if self.covariance is not None:
            C = np.atleast_2d(np.asarray(self.covariance, dtype=float))
            if not np.allclose(C, C.T):
                raise ValueError("covariance must be symmetric")
            lam = np.linalg.eigvalsh(C)
            if lam[0] <= 0:
                raise ValueError("covariance must be positive definite")
            if lam[-1] > self.sigma_scale + 1e-12:
                raise ValueError("covariance norm exceeds sigma_scale")
            object.__setattr__(self, "covariance", C)

    def _directions(self, nominal: np.ndarray, gen: np.random.Generator) -> np.ndarray:
        m = nominal.shape[1]
        if isinstance(self.perturbation_direction, np.ndarray):
            return np.broadcast_to(self.perturbation_direction, nominal.shape)
        if self.perturbation_direction == "random-per-call":
            z = gen.standard_normal(nominal.shape)
            norm = np.linalg.norm(z, axis=1, keepdims=True)
            norm[norm == 0] = 1.0
            return z / norm
        # adversarial: against the nominal control; e_1 when nominal is 0
        norm = np.linalg.norm(nominal, axis=1, keepdims=True)
        d = np.where(norm > 0, -nominal / np.where(norm == 0, 1.0, norm), 0.0)
        zero = (norm[:, 0] == 0)
        if np.any(zero):
            d[zero, 0] = 1.0
        return d

    def _chol(self, m: int) -> np.ndarray:
        if self.covariance is not None:
            return np.linalg.cholesky(self.covariance)
        return math.sqrt(self.sigma_scale) * np.eye(m)

    def apply_batch(self, nominal: np.ndarray, gen: np.random.Generator) -> np.ndarray:
        """Perturb a (M, m) batch of nominal controls (one row per
        realisation, one call per hold window)."""
        nominal = np.asarray(nominal, dtype=float)
        if self.kind == "none":
            return nominal
        out = nominal
        if self.kind in ("deterministic", "mixed") and self.epsilon > 0:
            out = out + self.epsilon * self._directions(nominal, gen)
        if self.kind in ("gaussian", "mixed") and self.sigma_scale > 0:
            z = gen.standard_normal(nominal.shape)
            out = out + z @ self._chol(nominal.shape[1]).T
        return out

    def apply(self, nominal: np.ndarray, gen: np.random.Generator) -> np.ndarray:
        return self.apply_batch(np.atleast_2d(nominal), gen)[0]


def hold_wrap(controller: Callable[[float, np.ndarray], np.ndarray],
              dt1: float) -> Callable[[float, np.ndarray], np.ndarray]:
    """Wrap a control law so its output is computed once per window of
    length ``dt1`` (at the first query inside the window) and replayed for
    later queries in the same window."""
    if dt1 <= 0:
        raise ValueError("dt1 must be positive")
    cache = {"k": None, "u": None}

    def held(t: float, x: np.ndarray) -> np.ndarray:
        k = window_index(t, dt1)
        if cache["k"] != k:
            cache["k"] = k
            cache["u"] = controller(t, x)
        return cache["u"]

    return held


class CallbackControlSource:
    """Adapts a plain ``(t, x) -> u`` feedback law to the control-source
    interface used by the closed-loop drivers.  ``vectorized`` callbacks
    accept a (M, n) state batch and return (M, m)."""

    def __init__(self, fn: Callable, vectorized: bool = False):
        self.fn = fn
        self.vectorized = vectorized

    def evaluate(self, t, x, rng_seq=None):
        return np.atleast_1d(np.asarray(self.fn(t, x), dtype=float)), None

    def evaluate_batch(self, t, states, rng_seq=None):
        states = np.asarray(states, dtype=float)
        if self.vectorized:
            u = np.asarray(self.fn(t, states), dtype=float)
        else:
            u = np.stack([np.atleast_1d(np.asarray(self.fn(t, x), dtype=float))
                          for x in states])
        return u, None, None, None


def _as_source(controller):
    if hasattr(controller, "evaluate") and hasattr(controller, "evaluate_batch"):
        return controller
    if callable(controller):
        return CallbackControlSource(controller)
    raise TypeError("controller must be a control source or a callable")


@dataclass
class StepRecord:
    """Per-window log entry of a closed-loop run."""

    t: float
    u_nominal: np.ndarray
    u_applied: np.ndarray
    estimate: Optional[ControlEstimate] = None


@dataclass
class RhcResult:
    trajectory: Trajectory
    steps: list[StepRecord] = field(default_factory=list)


def run_rhc(model: SdeModel, base_controller, injector: ErrorInjector,
            rhc: RhcConfig, x0, seed: int) -> RhcResult:
    """One closed-loop realisation.

    At each ``t_k`` the base controller is evaluated at the current plant
    state (with its own RNG substream when it is Monte Carlo based), the
    injector perturbs the result once, and the perturbed control is held
    over the window while the plant advances with ``dt_sim``.  Plant noise
    comes from substream role 0 of ``seed``, controller evaluations from
    role 1 (one child per window), injector draws from role 2.
    """
    source = _as_source(base_controller)
    root = as_seed_sequence(seed)
    ctl_root = child_sequence(root, ROLE_CONTROLLER)
    inj_gen = generator_for(child_sequence(root, ROLE_INJECTOR))
    steps: list[StepRecord] = []
    cache = {"k": None, "u": None}

    def held_controller(t: float, x: np.ndarray) -> np.ndarray:
        k = window_index(t, rhc.dt1)
        if cache["k"] != k:
            try:
                u_nom, est = source.evaluate(t, x, child_sequence(ctl_root, k))
                u_nom = np.atleast_1d(np.asarray(u_nom, dtype=float))
                u_app = injector.apply(u_nom, inj_gen)
            except PirhcError as err:
                if getattr(err, "step_index", None) is None:
                    err.step_index = k
                raise
            steps.append(StepRecord(t=t, u_nominal=u_nom, u_applied=u_app,
                                    estimate=est))
            cache["k"] = k
            cache["u"] = u_app
        return cache["u"]

    traj = simulate_controlled(model, x0, held_controller, rhc.dt_sim,
                               rhc.t_end, NoiseStream(seed, ROLE_PLANT))
    return RhcResult(trajectory=traj, steps=steps)


@dataclass
class BatchRhcResult:
    """M independent closed-loop realisations on a shared time grid.

    ``states`` has shape (M, n_times, n).  Controller diagnostics are kept
    per window: ``ess``/``n_failed`` are (n_windows, M) (NaN / 0 for
    controllers without Monte Carlo diagnostics) and ``u_applied`` is
    (n_windows, M, m).
    """

    times: np.ndarray
    states: np.ndarray
    u_applied: np.ndarray
    ess: np.ndarray
    n_failed: np.ndarray

    @property
    def n_realizations(self) -> int:
        return self.states.shape[0]


def run_rhc_batch(model: SdeModel, base_controller, injector: ErrorInjector,
                  rhc: RhcConfig, x0, n_realizations: int,
                  seed: int) -> BatchRhcResult:
    """Vectorised closed loop over ``n_realizations`` independent plants.

    Stream layout mirrors :func:`run_rhc` (plant role 0, controller role 1
    with one child per window, injector role 2); realisations share each
    window's controller batch but are independent through their own plant
    noise columns and rollout groups.
    """
    source = _as_source(base_controller)
    M = int(n_realizations)
    if M < 1:
        raise ValueError("need at least one realisation")
    root = as_seed_sequence(seed)
    ctl_root = child_sequence(root, ROLE_CONTROLLER)
    inj_gen = generator_for(child_sequence(root, ROLE_INJECTOR))
    plant_gen = generator_for(child_sequence(root, ROLE_PLANT))

    n = model.state_dim
    m = model.control_dim
    d = model.noise_dim
    subs = rhc.substeps
    n_windows = rhc.n_windows
    n_steps = subs * n_windows
    sqrt_dt = math.sqrt(rhc.dt_sim)

    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    X = np.broadcast_to(x0, (M, n)).copy()
    times = np.arange(n_steps + 1) * rhc.dt_sim
    states = np.empty((M, n_steps + 1, n))
    states[:, 0] = X
    u_applied = np.empty((n_windows, M, m))
    ess = np.full((n_windows, M), np.nan)
    n_failed = np.zeros((n_windows, M), dtype=int)

    for k in range(n_windows):
        t_k = k * rhc.dt1
        try:
            U, ess_k, _var, failed_k = source.evaluate_batch(
                t_k, X, child_sequence(ctl_root, k))
        except PirhcError as err:
            err.step_index = k
            raise
        U = np.asarray(U, dtype=float)
        U = injector.apply_batch(U, inj_gen)
        u_applied[k] = U
        if ess_k is not None:
            ess[k] = ess_k
        if failed_k is not None:
            n_failed[k] = failed_k
        for j in range(subs):
            step = k * subs + j
            dW = plant_gen.standard_normal((M, d)) * sqrt_dt
            h = model.gain_at(X)
            g = model.diffusion_at(X)
            drift = (np.asarray(model.drift(X), dtype=float)
                     + np.einsum("bij,bj->bi", h, U))
            X = X + drift * rhc.dt_sim + np.einsum("bij,bj->bi", g, dW)
            if not np.all(np.isfinite(X)):
                bad = int(np.flatnonzero(~np.isfinite(X).all(axis=1))[0])
                raise NumericalBlowupError(
                    f"plant state became non-finite (realisation {bad})",
                    step_index=step, state=X[bad])
            states[:, step + 1] = X
    return BatchRhcResult(times=times, states=states, u_applied=u_applied,
                          ess=ess, n_failed=n_failed)
