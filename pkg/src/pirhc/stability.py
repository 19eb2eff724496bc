"""Empirical stochastic stability analysis and the linear-quadratic oracle.

The linear-quadratic instance is the package's ground truth: its backward
Riccati solution gives the exact value-to-go

    v(s, x) = 0.5 x^T P(s) x + c(s),      c(s) = 0.5 int_s^T tr(S S^T P),

the exact receding-horizon feedback u*(x) = -R^{-1} B^T P(0) x, the
closed-loop decay rate, and the stationary covariance (Lyapunov
equation).  Everything else here measures empirical behaviour of closed
loops: p-th moment curves with bootstrap errors, exponential decay-rate
fits against a plateau, value-sublevel ("ball") statistics, and
robustness sweeps over injected controller errors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import solve_continuous_lyapunov

from .costs import CostSpec, GammaCoupling, estimate_value, quadratic_cost
from .engine import as_seed_sequence, child_sequence, generator_for
from .errors import NoTransientError, RiccatiSolveError
from .models import SdeModel, linear_sde
from .rhc import CallbackControlSource, ErrorInjector, RhcConfig, run_rhc_batch

# Substream roles for analysis randomness, disjoint from the closed-loop
# roles (plant 0 / controller 1 / injector 2) of the same master seed.
_ROLE_MOMENT_BOOT = 1000
_ROLE_FIT_BOOT = 1001
_ROLE_SPHERE = 1002

__all__ = [
    "LqOracle",
    "solve_riccati",
    "MomentCurve",
    "estimate_moments",
    "DecayFit",
    "fit_decay_rate",
    "auto_windows",
    "LevelSetEstimate",
    "estimate_level_set",
    "level_set_statistics",
    "SweepRow",
    "RobustnessSweep",
    "robustness_sweep",
    "trend_non_increasing",
    "trend_non_decreasing",
    "first_is_max",
]


@dataclass(frozen=True)
class LqOracle:
    """Exact solution of a finite-horizon linear-quadratic instance."""

    A: np.ndarray
    B: np.ndarray
    sigma: np.ndarray
    Q: np.ndarray
    Q_T: np.ndarray
    R: np.ndarray
    horizon: float
    P_of_s: Callable[[float], np.ndarray]
    offset_of_s: Callable[[float], float]
    P0: np.ndarray
    offset0: float
    gain: np.ndarray            # K = R^{-1} B^T P(0)

    @property
    def state_dim(self) -> int:
        return self.A.shape[0]

    def control(self, x) -> np.ndarray:
        """Receding-horizon optimal feedback u*(x) = -K x (batched)."""
        x = np.asarray(x, dtype=float)
        return -np.einsum("ij,...j->...i", self.gain, x)

    def control_source(self) -> CallbackControlSource:
        return CallbackControlSource(lambda t, x: self.control(x),
                                     vectorized=True)

    def value(self, x, s: float = 0.0) -> np.ndarray:
        """Value-to-go 0.5 x^T P(s) x + c(s), vectorised over states."""
        x = np.asarray(x, dtype=float)
        P = self.P_of_s(s)
        y = np.einsum("ij,...j->...i", P, x)
        return 0.5 * np.einsum("...i,...i->...", x, y) + self.offset_of_s(s)

    @property
    def closed_loop_A(self) -> np.ndarray:
        return self.A - self.B @ self.gain

    def decay_rate(self) -> float:
        """Slowest second-moment decay rate of the closed loop,
        2 |Re lambda_max(A - B K)|."""
        lam = np.linalg.eigvals(self.closed_loop_A)
        return 2.0 * abs(max(lam.real))

    def stationary_covariance(self) -> np.ndarray:
        """Stationary covariance of the closed loop (Lyapunov equation)."""
        return solve_continuous_lyapunov(self.closed_loop_A,
                                         -self.sigma @ self.sigma.T)

    def quadratic_bounds(self) -> tuple[float, float]:
        """Tight quadratic sandwich coefficients of the analytic value:
        lower  c_lo |x|^2 <= v(x)  with c_lo = 0.5 lambda_min(P(0)),
        upper  v(x) <= c_hi (1 + |x|^2) with c_hi = max(0.5 lambda_max(P(0)),
        offset)."""
        lam = np.linalg.eigvalsh(self.P0)
        return 0.5 * lam[0], max(0.5 * lam[-1], self.offset0)

    def zero_control_upper_coeff(self) -> float:
        """Upper sandwich coefficient from the zero-control cost: integrate
        the Lyapunov-type backward ODE -dS/ds = A^T S + S A + Q with
        S(T) = Q_T, so  w(x; u=0) = 0.5 x^T S(0) x + s0  and
        v <= w <= c (1 + |x|^2)."""
        n = self.state_dim
        sig2 = self.sigma @ self.sigma.T

        def rhs(s, y):
            S = y[:n * n].reshape(n, n)
            dS = -(self.A.T @ S + S @ self.A + self.Q)
            dc = -0.5 * float(np.trace(sig2 @ S))
            return np.concatenate([dS.ravel(), [dc]])

        sol = solve_ivp(rhs, (self.horizon, 0.0),
                        np.concatenate([self.Q_T.ravel(), [0.0]]),
                        rtol=1e-10, atol=1e-12, dense_output=True)
        y0 = sol.sol(0.0)
        S0 = y0[:n * n].reshape(n, n)
        s0 = float(y0[-1])
        return max(0.5 * float(np.linalg.eigvalsh(S0)[-1]), s0)

    def ball_level(self, delta: float) -> float:
        """Smallest value level whose sublevel set contains the closed
        ball of radius delta: max over |x| = delta of v(x)."""
        return 0.5 * float(np.linalg.eigvalsh(self.P0)[-1]) * delta ** 2 + self.offset0

    def model_and_cost(self) -> tuple[SdeModel, CostSpec]:
        return (linear_sde(self.A, self.B, self.sigma),
                quadratic_cost(self.Q, self.Q_T, self.R, self.horizon))


def solve_riccati(A, B, sigma, Q, Q_T, R, horizon: float,
                  grid_dt: float = 1e-3,
                  residual_tol: float = 1e-6) -> LqOracle:
    """Integrate the backward matrix Riccati equation

        -dP/ds = A^T P + P A - P B R^{-1} B^T P + Q,    P(T) = Q_T,

    together with the noise offset  -dc/ds = 0.5 tr(sigma sigma^T P),
    c(T) = 0.  The solution is verified by a central-difference residual
    on the grid and returned as an interpolable oracle.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    Q_T = np.atleast_2d(np.asarray(Q_T, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    n = A.shape[0]
    Rinv = np.linalg.inv(R)
    BRB = B @ Rinv @ B.T
    sig2 = sigma @ sigma.T

    def rhs(s, y):
        P = y[:n * n].reshape(n, n)
        dP = -(A.T @ P + P @ A - P @ BRB @ P + Q)
        dc = -0.5 * float(np.trace(sig2 @ P))
        return np.concatenate([dP.ravel(), [dc]])

    sol = solve_ivp(rhs, (horizon, 0.0),
                    np.concatenate([Q_T.ravel(), [0.0]]),
                    rtol=1e-10, atol=1e-12, dense_output=True)
    if not sol.success:
        raise RiccatiSolveError(f"backward integration failed: {sol.message}")

    def P_of_s(s: float) -> np.ndarray:
        P = sol.sol(float(s))[:n * n].reshape(n, n)
        return 0.5 * (P + P.T)

    def offset_of_s(s: float) -> float:
        return float(sol.sol(float(s))[-1])

    # residual check with central differences on the solve grid
    n_pts = max(3, round(horizon / grid_dt) + 1)
    grid = np.linspace(0.0, horizon, n_pts)
    h = (grid[1] - grid[0]) / 2.0
    worst = 0.0
    for s in grid[1:-1]:
        P = P_of_s(s)
        dP = (P_of_s(s + h) - P_of_s(s - h)) / (2.0 * h)
        res = dP + A.T @ P + P @ A - P @ BRB @ P + Q
        worst = max(worst, float(np.linalg.norm(res)))
    if worst > residual_tol:
        raise RiccatiSolveError(
            f"Riccati residual {worst:.3e} exceeds tolerance {residual_tol:.1e}")
    P0 = P_of_s(0.0)
    return LqOracle(A=A, B=B, sigma=sigma, Q=Q, Q_T=Q_T, R=R,
                    horizon=float(horizon), P_of_s=P_of_s,
                    offset_of_s=offset_of_s, P0=P0,
                    offset0=offset_of_s(0.0), gain=Rinv @ B.T @ P0)


@dataclass(frozen=True)
class MomentCurve:
    """Pointwise p-th moment estimates with bootstrap standard errors."""

    times: np.ndarray
    moments: np.ndarray
    stderr: np.ndarray
    p: float
    n_realizations: int
    values: np.ndarray = field(repr=False, default=None)  # (M, T) |X_t|^p


def _states_array(realizations) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(realizations, np.ndarray):
        raise TypeError("pass trajectories or (times, states); got a bare array")
    if isinstance(realizations, tuple) and len(realizations) == 2:
        times, states = realizations
        return np.asarray(times, dtype=float), np.asarray(states, dtype=float)
    trajs = list(realizations)
    if not trajs:
        raise ValueError("need at least one realisation")
    times = trajs[0].times
    for tr in trajs[1:]:
        if not np.array_equal(tr.times, times):
            raise ValueError("all realisations must share the time grid")
    return times, np.stack([tr.states for tr in trajs])


def estimate_moments(realizations, p: float, n_boot: int = 200,
                     seed: int = 0) -> MomentCurve:
    """Mean of |X_t|^p across realisations with bootstrap standard errors.

    ``realizations`` is either an iterable of :class:`Trajectory` on a
    shared grid or a ``(times, states)`` pair with states of shape
    (M, n_times, n).
    """
    if p < 0:
        raise ValueError("moment order must be non-negative")
    times, states = _states_array(realizations)
    M = states.shape[0]
    values = np.linalg.norm(states, axis=2) ** p
    moments = values.mean(axis=0)
    if M > 1 and n_boot > 0:
        gen = generator_for(child_sequence(as_seed_sequence(seed), _ROLE_MOMENT_BOOT))
        idx = gen.integers(0, M, size=(n_boot, M))
        counts = np.zeros((n_boot, M))
        for b in range(n_boot):
            counts[b] = np.bincount(idx[b], minlength=M)
        boot_means = counts @ values / M
        stderr = boot_means.std(axis=0, ddof=1)
    else:
        stderr = np.zeros_like(moments)
    return MomentCurve(times=times, moments=moments, stderr=stderr, p=p,
                       n_realizations=M, values=values)


def _window_slice(times: np.ndarray, window) -> np.ndarray:
    t0, t1 = window
    idx = np.flatnonzero((times >= t0 - 1e-12) & (times <= t1 + 1e-12))
    if idx.size < 5:
        raise ValueError(f"window {window} covers {idx.size} grid points, need >= 5")
    return idx


@dataclass(frozen=True)
class DecayFit:
    """Exponential decay fit of a moment curve against its plateau."""

    rate: float
    rate_std: float
    rate_ci: tuple[float, float]
    plateau: float
    plateau_std: float
    transient_window: tuple[float, float]
    tail_window: tuple[float, float]


def _fit_once(times, curve, tr_idx, tail_idx, floor):
    plateau = float(curve[tail_idx].mean())
    excess = curve[tr_idx] - plateau
    # rounding-scale tolerance: a flat curve whose tail mean lands one ulp
    # below the samples is still "no transient"
    tiny = 1e-12 * max(abs(plateau), float(np.max(np.abs(curve))), 1e-300)
    if np.all(excess <= tiny):
        raise NoTransientError("moment curve never exceeds its plateau on "
                               "the transient window")
    y = np.log(np.maximum(excess, floor))
    slope = np.polyfit(times[tr_idx], y, 1)[0]
    return -float(slope), plateau


def fit_decay_rate(curve: MomentCurve, transient_window, tail_window,
                   n_boot: int = 200, seed: int = 0) -> DecayFit:
    """Fit  moment(t) ~ plateau + a * exp(-rate * t)  on the transient
    window: the plateau is the tail-window mean and the rate is the
    least-squares slope of log(max(moment - plateau, floor)).  Confidence
    intervals are bootstrap-over-realisations percentiles (200 resamples).
    """
    times = curve.times
    tr_idx = _window_slice(times, transient_window)
    tail_idx = _window_slice(times, tail_window)
    if tr_idx[-1] >= tail_idx[0]:
        raise ValueError("transient and tail windows must be disjoint "
                         "(transient first)")
    floor = max(float(curve.moments.max()), 1e-300) * 1e-12
    rate, plateau = _fit_once(times, curve.moments, tr_idx, tail_idx, floor)

    rates, plateaus = [], []
    if curve.values is not None and curve.n_realizations > 1 and n_boot > 0:
        M = curve.n_realizations
        gen = generator_for(child_sequence(as_seed_sequence(seed), _ROLE_FIT_BOOT))
        for _ in range(n_boot):
            pick = gen.integers(0, M, size=M)
            resampled = curve.values[pick].mean(axis=0)
            try:
                r_b, p_b = _fit_once(times, resampled, tr_idx, tail_idx, floor)
            except NoTransientError:
                continue
            rates.append(r_b)
            plateaus.append(p_b)
    if len(rates) >= 10:
        rates = np.asarray(rates)
        ci = (float(np.percentile(rates, 2.5)), float(np.percentile(rates, 97.5)))
        rate_std = float(rates.std(ddof=1))
        plateau_std = float(np.std(plateaus, ddof=1))
    else:
        ci = (-math.inf, math.inf)
        rate_std = math.inf
        plateau_std = math.inf
    return DecayFit(rate=rate, rate_std=rate_std, rate_ci=ci, plateau=plateau,
                    plateau_std=plateau_std,
                    transient_window=(float(transient_window[0]),
                                      float(transient_window[1])),
                    tail_window=(float(tail_window[0]), float(tail_window[1])))


def auto_windows(times: np.ndarray, moments: np.ndarray,
                 tail_fraction: float = 0.25,
                 knee_fraction: float = 0.05) -> tuple[tuple, tuple]:
    """Deterministic default fit windows: the tail window is the last
    ``tail_fraction`` of the grid; the transient runs from t=0 until the
    excess over the tail mean first drops below ``knee_fraction`` of its
    initial value (at least 5 points)."""
    n = len(times)
    tail_start = int(math.floor(n * (1.0 - tail_fraction)))
    tail_start = min(max(tail_start, 5), n - 5)
    plateau = float(moments[tail_start:].mean())
    excess = moments - plateau
    target = knee_fraction * max(excess[0], 0.0)
    below = np.flatnonzero(excess <= target)
    knee = int(below[0]) if below.size else tail_start - 1
    knee = max(knee, 5)
    knee = min(knee, tail_start - 1)
    return ((float(times[0]), float(times[knee])),
            (float(times[tail_start]), float(times[-1])))


@dataclass(frozen=True)
class LevelSetEstimate:
    """Conservative outer estimate of the smallest value level containing
    the delta-ball: max over sphere points of (v_hat + 3 stderr)."""

    level: float
    delta: float
    points: np.ndarray
    values: np.ndarray
    stderrs: np.ndarray


def _sphere_points(dim: int, delta: float, n_sphere: int, seed) -> np.ndarray:
    if dim == 1:
        return np.array([[delta], [-delta]])
    if dim == 2:
        angles = 2.0 * math.pi * np.arange(n_sphere) / max(n_sphere, 1)
        return delta * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    gen = generator_for(child_sequence(as_seed_sequence(seed), _ROLE_SPHERE))
    z = gen.standard_normal((n_sphere, dim))
    return delta * z / np.linalg.norm(z, axis=1, keepdims=True)


def estimate_level_set(model: SdeModel, cost: CostSpec, gamma: GammaCoupling,
                       delta: float, n_sphere: int, N: int, dt2: float,
                       seed: int, workers: int = 1) -> LevelSetEstimate:
    """Estimate the value level whose sublevel set contains the radius-
    ``delta`` ball, by maximising the Monte Carlo value estimate (plus
    three standard errors) over quasi-uniform sphere points.  In 1-D the
    sphere is the two points +-delta."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    points = _sphere_points(model.state_dim, delta, n_sphere, seed)
    root = as_seed_sequence(seed)
    values = np.empty(len(points))
    errs = np.empty(len(points))
    for i, x in enumerate(points):
        est = estimate_value(model, cost, gamma, x, N, dt2,
                             seed=child_sequence(root, 100 + i),
                             workers=workers)
        values[i] = est.value
        errs[i] = est.std_err
    level = float(np.max(values + 3.0 * errs))
    return LevelSetEstimate(level=level, delta=float(delta), points=points,
                            values=values, stderrs=errs)


def level_set_statistics(times: np.ndarray, states: np.ndarray,
                         value_fn: Callable[[np.ndarray], np.ndarray],
                         level: float, slack: float = 0.25):
    """Hitting and residence statistics of the sublevel set {v < level}.

    A realisation "hits" at the first grid time with v(X_t) < level.
    ``hit_fraction`` is the fraction of realisations that hit by the end;
    ``residence_fraction`` is the pooled fraction of post-hit grid times
    spent inside the slackened set {v < level * (1 + slack)}.  Returns
    (hit_fraction, residence_fraction, hit_times) with NaN hit times for
    realisations that never hit.
    """
    v = np.asarray(value_fn(states), dtype=float)
    inside = v < level
    hit_any = inside.any(axis=1)
    first = np.where(hit_any, inside.argmax(axis=1), -1)
    hit_times = np.where(hit_any, times[np.maximum(first, 0)], np.nan)
    inside_slack = v < level * (1.0 + slack)
    post, post_inside = 0, 0
    for i in np.flatnonzero(hit_any):
        post += inside_slack.shape[1] - first[i]
        post_inside += int(inside_slack[i, first[i]:].sum())
    residence = post_inside / post if post > 0 else float("nan")
    return float(hit_any.mean()), float(residence), hit_times


@dataclass(frozen=True)
class SweepRow:
    label: str
    epsilon: float
    sigma_scale: float
    fit: DecayFit
    hit_fraction: float = float("nan")
    residence_fraction: float = float("nan")


@dataclass(frozen=True)
class RobustnessSweep:
    rows: list[SweepRow]
    rate_trend_ok: bool
    baseline_is_max: bool
    plateau_trend_ok: bool


def trend_non_increasing(values: Sequence[float],
                         tolerances: Sequence[float]) -> bool:
    """Monotone non-increase up to confidence overlap: each step may rise
    at most by the two neighbouring tolerances."""
    values = list(values)
    tolerances = list(tolerances)
    return all(values[i + 1] <= values[i] + tolerances[i] + tolerances[i + 1]
               for i in range(len(values) - 1))


def trend_non_decreasing(values, tolerances) -> bool:
    return trend_non_increasing([-v for v in values], tolerances)


def first_is_max(values: Sequence[float], tolerances: Sequence[float]) -> bool:
    """First entry is the maximum up to confidence overlap."""
    values = list(values)
    tolerances = list(tolerances)
    top = int(np.argmax(values))
    return values[0] >= values[top] - (tolerances[0] + tolerances[top])


def robustness_sweep(model: SdeModel, base_controller,
                     injectors: Sequence[tuple[str, ErrorInjector]],
                     rhc: RhcConfig, x0, n_realizations: int, seed: int,
                     p: float = 2.0, transient_window=None, tail_window=None,
                     n_boot: int = 200,
                     value_fn: Optional[Callable] = None,
                     level: Optional[float] = None,
                     slack: float = 0.25) -> RobustnessSweep:
    """Closed-loop decay-rate fits across an injector family on shared
    seeds, with trend verdicts: rates non-increasing in the error size
    (up to CI overlap), the error-free row is the maximum, and plateaus
    are non-decreasing.  Optionally also collects hitting/residence
    statistics when a value function and level are supplied.
    """
    rows = []
    for label, injector in injectors:
        batch = run_rhc_batch(model, base_controller, injector, rhc, x0,
                              n_realizations, seed)
        curve = estimate_moments((batch.times, batch.states), p=p, seed=seed)
        tr_w, tl_w = transient_window, tail_window
        if tr_w is None or tl_w is None:
            auto_tr, auto_tl = auto_windows(curve.times, curve.moments)
            tr_w = tr_w or auto_tr
            tl_w = tl_w or auto_tl
        fit = fit_decay_rate(curve, tr_w, tl_w, n_boot=n_boot, seed=seed)
        hit = res = float("nan")
        if value_fn is not None and level is not None:
            hit, res, _ = level_set_statistics(batch.times, batch.states,
                                               value_fn, level, slack)
        rows.append(SweepRow(label=label, epsilon=injector.epsilon,
                             sigma_scale=injector.sigma_scale, fit=fit,
                             hit_fraction=hit, residence_fraction=res))
    rates = [r.fit.rate for r in rows]
    rate_tol = [2.0 * r.fit.rate_std if math.isfinite(r.fit.rate_std) else 0.0
                for r in rows]
    plateaus = [r.fit.plateau for r in rows]
    plat_tol = [2.0 * r.fit.plateau_std if math.isfinite(r.fit.plateau_std)
                else 0.0 for r in rows]
    return RobustnessSweep(
        rows=rows,
        rate_trend_ok=trend_non_increasing(rates, rate_tol),
        baseline_is_max=first_is_max(rates, rate_tol),
        plateau_trend_ok=trend_non_decreasing(plateaus, plat_tol),
    )
