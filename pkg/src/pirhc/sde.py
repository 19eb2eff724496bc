"""Euler-Maruyama integration of controlled and uncontrolled diffusions.

Single-trajectory reference implementations.  Batch Monte Carlo rollouts
used by the estimators live in :mod:`pirhc.engine`; the two must agree on
the scheme:

    x_{k+1} = x_k + (f(x_k) + h(x_k) u_k) dt + g(x_k) dW_k,
    dW_k ~ N(0, dt I).
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from .errors import NumericalBlowupError
from .models import NoiseStream, SdeModel, Trajectory

__all__ = ["euler_maruyama_step", "simulate_uncontrolled", "simulate_controlled"]


def euler_maruyama_step(model: SdeModel, x: np.ndarray, u: np.ndarray,
                        dt: float, dW: np.ndarray) -> np.ndarray:
    """One explicit Euler-Maruyama step with a caller-supplied Brownian
    increment.  Pure function of its inputs; vectorised over leading axes
    of ``x`` / ``u`` / ``dW``.

    Raises :class:`NumericalBlowupError` if any input or output component
    is non-finite.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    dW = np.asarray(dW, dtype=float)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(dW))):
        raise NumericalBlowupError("non-finite state or noise increment",
                                   state=x)
    with np.errstate(over="ignore", invalid="ignore"):
        h = model.gain_at(x)
        g = model.diffusion_at(x)
        drift = model.drift(x) + np.einsum("...ij,...j->...i", h, u)
        out = x + drift * dt + np.einsum("...ij,...j->...i", g, dW)
    if not np.all(np.isfinite(out)):
        raise NumericalBlowupError("state became non-finite after step",
                                   state=out)
    return out


def _draw_increments(stream: NoiseStream, n_steps: int, noise_dim: int,
                     dt: float) -> np.ndarray:
    gen = stream.generator()
    return gen.standard_normal((n_steps, noise_dim)) * math.sqrt(dt)


def simulate_uncontrolled(model: SdeModel, x0, dt2: float, K: int,
                          stream: NoiseStream) -> Trajectory:
    """Simulate the uncontrolled process dZ = f(Z) ds + g(Z) dW on a
    uniform grid of ``K`` steps of size ``dt2``, keeping the driving
    increments on the trajectory for later reuse.
    """
    if dt2 <= 0:
        raise ValueError("dt2 must be positive")
    if K < 0:
        raise ValueError("K must be non-negative")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    times = np.arange(K + 1) * dt2
    states = np.empty((K + 1, model.state_dim))
    states[0] = x0
    dW = _draw_increments(stream, K, model.noise_dim, dt2)
    zero_u = np.zeros(model.control_dim)
    x = x0
    for k in range(K):
        try:
            x = euler_maruyama_step(model, x, zero_u, dt2, dW[k])
        except NumericalBlowupError as err:
            err.step_index = k
            raise
        states[k + 1] = x
    return Trajectory(times=times, states=states, noise_increments=dW)


def simulate_controlled(model: SdeModel, x0,
                        controller: Callable[[float, np.ndarray], np.ndarray],
                        dt_sim: float, t_end: float,
                        stream: NoiseStream) -> Trajectory:
    """Closed-loop simulation: the controller is queried at every step with
    the current time and state.  Sample-and-hold cadence, when wanted, is
    the controller's business (see :func:`pirhc.rhc.hold_wrap`).
    """
    if dt_sim <= 0 or t_end <= 0:
        raise ValueError("dt_sim and t_end must be positive")
    n_steps = round(t_end / dt_sim)
    if abs(n_steps * dt_sim - t_end) > 1e-9 * max(1.0, t_end):
        raise ValueError("dt_sim must divide t_end")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    times = np.arange(n_steps + 1) * dt_sim
    states = np.empty((n_steps + 1, model.state_dim))
    states[0] = x0
    dW = _draw_increments(stream, n_steps, model.noise_dim, dt_sim)
    x = x0
    for k in range(n_steps):
        u = np.atleast_1d(np.asarray(controller(times[k], x), dtype=float))
        try:
            x = euler_maruyama_step(model, x, u, dt_sim, dW[k])
        except NumericalBlowupError as err:
            err.step_index = k
            raise
        states[k + 1] = x
    return Trajectory(times=times, states=states, noise_increments=dW)
