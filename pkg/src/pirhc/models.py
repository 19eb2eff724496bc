"""Controlled diffusion models, reproducible noise streams and trajectories.

The dynamics considered throughout are Ito diffusions with control-affine
drift,

    dX_t = f(X_t) dt + h(X_t) u_t dt + g(X_t) dW_t,

with state dimension n, control dimension m and noise dimension d.  The
origin is the nominal equilibrium: f(0) = 0 with zero control.

Model callables are vectorised: they accept arrays of shape ``(..., n)``
and return ``(..., n)`` for the drift, ``(..., n, m)`` for the control
gain and ``(..., n, d)`` for the diffusion.  State-independent gain or
diffusion may simply return a constant ``(n, m)`` / ``(n, d)`` matrix.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

__all__ = [
    "SdeModel",
    "NoiseStream",
    "Trajectory",
    "ScalarPolynomialDynamics",
    "LinearDynamics",
    "linear_sde",
    "scalar_polynomial_sde",
    "validate_model",
]


@dataclass(frozen=True)
class ScalarPolynomialDynamics:
    """Compiled-kernel parameters for 1-D models with drift
    ``a_lin*x + a_cub*x**3`` and constant gain/noise coefficients."""

    a_lin: float
    a_cub: float
    gain: float
    noise: float


@dataclass(frozen=True)
class LinearDynamics:
    """Compiled-kernel parameters for linear models: drift ``A x`` with
    constant gain matrix ``B`` and constant diffusion matrix ``S``."""

    A: np.ndarray
    B: np.ndarray
    S: np.ndarray


@dataclass(frozen=True)
class SdeModel:
    """Control-affine diffusion model.

    ``drift``, ``control_gain`` and ``diffusion`` must be total on R^n and
    vectorised over leading axes (see module docstring).  ``lipschitz_c1``
    is metadata only: a known Lipschitz constant for drift/gain/diffusion,
    or None when unknown.

    ``dynamics_params``, when present, describes the model in one of the
    closed parameter families understood by the compiled batch kernels;
    models built through :func:`linear_sde` / :func:`scalar_polynomial_sde`
    carry it automatically.
    """

    state_dim: int
    control_dim: int
    noise_dim: int
    drift: Callable[[np.ndarray], np.ndarray]
    control_gain: Callable[[np.ndarray], np.ndarray]
    diffusion: Callable[[np.ndarray], np.ndarray]
    lipschitz_c1: Optional[float] = None
    dynamics_params: object = None

    def __post_init__(self):
        for name in ("state_dim", "control_dim", "noise_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.lipschitz_c1 is not None and self.lipschitz_c1 <= 0:
            raise ValueError("lipschitz_c1 must be positive or None")

    def gain_at(self, x: np.ndarray) -> np.ndarray:
        """Control gain evaluated at ``x``, broadcast to ``(..., n, m)``."""
        return _expand_matrix(self.control_gain(x), np.shape(x)[:-1],
                              self.state_dim, self.control_dim)

    def diffusion_at(self, x: np.ndarray) -> np.ndarray:
        """Diffusion evaluated at ``x``, broadcast to ``(..., n, d)``."""
        return _expand_matrix(self.diffusion(x), np.shape(x)[:-1],
                              self.state_dim, self.noise_dim)


def _expand_matrix(value, batch_shape, rows, cols):
    value = np.asarray(value, dtype=float)
    if value.shape == (rows, cols) and batch_shape:
        value = np.broadcast_to(value, batch_shape + (rows, cols))
    return value


@dataclass(frozen=True)
class NoiseStream:
    """One independent substream of the package-wide counter-based RNG.

    Distinct ``stream_index`` values yield statistically independent
    increment sequences; an identical ``(master_seed, stream_index)`` pair
    reproduces the same sequence bit for bit.  Backed by Philox, so streams
    can be handed to concurrent workers without shared state.
    """

    master_seed: int
    stream_index: int = 0

    def __post_init__(self):
        if self.stream_index < 0:
            raise ValueError("stream_index must be non-negative")

    def seed_sequence(self) -> np.random.SeedSequence:
        return np.random.SeedSequence(self.master_seed,
                                      spawn_key=(self.stream_index,))

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(self.seed_sequence()))


@dataclass(frozen=True)
class Trajectory:
    """A discretised sample path together with its driving noise.

    ``times`` has K+1 strictly increasing entries, ``states`` one row per
    grid point, and ``noise_increments`` the K Brownian increments that
    produced the steps.  Increments are stored (rather than re-derived)
    because downstream estimators consume the exact increments that drove
    the path.
    """

    times: np.ndarray
    states: np.ndarray
    noise_increments: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        states = np.atleast_2d(np.asarray(self.states, dtype=float))
        incr = np.asarray(self.noise_increments, dtype=float)
        if incr.ndim == 1:
            incr = incr[:, None]
        if states.shape[0] != times.shape[0]:
            raise ValueError("need one state per grid point")
        if incr.shape[0] != times.shape[0] - 1:
            raise ValueError("need one noise increment per grid step")
        if times.shape[0] > 1 and not np.all(np.diff(times) > 0):
            raise ValueError("time grid must be strictly increasing")
        for arr in (times, states, incr):
            arr.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "noise_increments", incr)

    @property
    def n_steps(self) -> int:
        return self.times.shape[0] - 1

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]


def linear_sde(A, B, S, lipschitz_c1=None) -> SdeModel:
    """Linear model: drift ``A x``, constant gain ``B``, diffusion ``S``.

    1-D instances are represented in the scalar polynomial family so that
    they hit the fastest kernel path.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    S = np.atleast_2d(np.asarray(S, dtype=float))
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError("A must be square")
    if B.shape[0] != n or S.shape[0] != n:
        raise ValueError("B and S must have one row per state dimension")
    m, d = B.shape[1], S.shape[1]
    if n == 1 and m == 1 and d == 1:
        return scalar_polynomial_sde(a_lin=float(A[0, 0]), a_cub=0.0,
                                     gain=float(B[0, 0]), noise=float(S[0, 0]),
                                     lipschitz_c1=lipschitz_c1)
    A = A.copy();  A.setflags(write=False)
    B = B.copy();  B.setflags(write=False)
    S = S.copy();  S.setflags(write=False)

    def drift(x):
        return np.einsum("ij,...j->...i", A, np.asarray(x, dtype=float))

    if lipschitz_c1 is None:
        lipschitz_c1 = max(float(np.linalg.norm(A, 2)), 1e-12)
    return SdeModel(
        state_dim=n, control_dim=m, noise_dim=d,
        drift=drift, control_gain=lambda x: B, diffusion=lambda x: S,
        lipschitz_c1=lipschitz_c1,
        dynamics_params=LinearDynamics(A=A, B=B, S=S),
    )


def scalar_polynomial_sde(a_lin=0.0, a_cub=0.0, gain=1.0, noise=1.0,
                          lipschitz_c1=None) -> SdeModel:
    """1-D model with drift ``a_lin*x + a_cub*x**3`` and constant
    gain/noise coefficients.  Covers both the scalar linear benchmark
    (``a_cub = 0``) and the cubic-drift nonlinearity (``a_lin = 0``).

    A cubic drift is not globally Lipschitz; ``lipschitz_c1`` stays None
    in that case.
    """
    a_lin, a_cub = float(a_lin), float(a_cub)
    gain, noise = float(gain), float(noise)
    gain_mat = np.array([[gain]]);  gain_mat.setflags(write=False)
    noise_mat = np.array([[noise]]);  noise_mat.setflags(write=False)

    def drift(x):
        x = np.asarray(x, dtype=float)
        return a_lin * x + a_cub * ((x * x) * x)

    if lipschitz_c1 is None and a_cub == 0.0:
        lipschitz_c1 = max(abs(a_lin), 1e-12)
    return SdeModel(
        state_dim=1, control_dim=1, noise_dim=1,
        drift=drift, control_gain=lambda x: gain_mat,
        diffusion=lambda x: noise_mat,
        lipschitz_c1=lipschitz_c1,
        dynamics_params=ScalarPolynomialDynamics(a_lin=a_lin, a_cub=a_cub,
                                                 gain=gain, noise=noise),
    )


def validate_model(model: SdeModel, probe_points=None, atol=1e-9) -> None:
    """Spot-check model invariants: the origin is an equilibrium of the
    uncontrolled drift, and the control gain has full column rank at every
    probe point.  Raises ValueError on violation.
    """
    origin = np.zeros(model.state_dim)
    f0 = np.asarray(model.drift(origin), dtype=float)
    if not np.allclose(f0, 0.0, atol=atol):
        raise ValueError(f"drift at the origin is {f0}, expected 0")
    if probe_points is None:
        probe_points = [origin]
    for x in probe_points:
        x = np.asarray(x, dtype=float)
        h = model.gain_at(x)
        sv = np.linalg.svd(h, compute_uv=False)
        if sv[-1] <= max(h.shape) * np.finfo(float).eps * sv[0] or sv[-1] == 0.0:
            raise ValueError(f"control gain is rank deficient at x={x}")
        for mat, (r, c), name in ((h, (model.state_dim, model.control_dim), "gain"),
                                  (model.diffusion_at(x),
                                   (model.state_dim, model.noise_dim), "diffusion")):
            if mat.shape[-2:] != (r, c):
                raise ValueError(f"{name} shape {mat.shape} does not match dims")
