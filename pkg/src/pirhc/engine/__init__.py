"""Batch Monte Carlo rollout engine.

This is the hot path of the package: simulate ``G x N`` independent
Euler-Maruyama rollouts of the uncontrolled process, accumulating for each
rollout

* ``eta``  -- terminal cost plus left-endpoint running-cost quadrature,
* ``what`` -- the noise functional  sum_j hinv(z_{j-1}) g(z_{j-1}) dW_j
  over the first ``r_steps`` increments,
* a blow-up flag for rollouts whose state, cost or functional went
  non-finite.

Two backends implement the same arithmetic, step for step and in the same
floating-point expression order:

* a compiled Cython kernel for models/costs in the closed parameter
  families (scalar polynomial drift, linear drift with quadratic costs);
* a pure-numpy fallback, also used for models given as arbitrary Python
  callables.

The backend is selected at import time: the compiled extension is used
when importable unless ``PIRHC_DISABLE_KERNELS`` is set.  Rollout i lives
in chunk ``i // CHUNK`` and chunk ``c`` draws its noise from the Philox
substream ``stream_base + c`` of the call's seed sequence, so results are
independent of the worker count and reproducible bit for bit.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..errors import GainRankError
from ..models import LinearDynamics, ScalarPolynomialDynamics

_DISABLED = os.environ.get("PIRHC_DISABLE_KERNELS", "") not in ("", "0")
try:
    if _DISABLED:
        raise ImportError("kernels disabled by PIRHC_DISABLE_KERNELS")
    from . import _kernels
except ImportError:
    _kernels = None

HAVE_KERNELS = _kernels is not None

# Fixed chunk width (rollouts per noise block / per RNG substream).  Part of
# the stream-layout contract: changing it changes the sampled noise.
CHUNK = 32768

# The compiled linear kernel uses fixed-size scratch; larger models fall
# back to the numpy path.
KERNEL_MAX_DIM = 16


def backend_name() -> str:
    return "compiled" if HAVE_KERNELS else "numpy"


def child_sequence(seq: np.random.SeedSequence, index: int) -> np.random.SeedSequence:
    """Deterministic child of ``seq`` (equivalent to spawn key extension)."""
    return np.random.SeedSequence(entropy=seq.entropy,
                                  spawn_key=tuple(seq.spawn_key) + (int(index),))


def as_seed_sequence(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(int(seed))


def generator_for(seq: np.random.SeedSequence) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seq))


def n_streams(n_total: int) -> int:
    """Number of RNG substreams one batch of ``n_total`` rollouts consumes."""
    return (int(n_total) + CHUNK - 1) // CHUNK


@dataclass(frozen=True)
class RolloutProgram:
    """Everything a backend needs to run one batch: dynamics, costs and the
    (precomputed, when constant) left-inverse-times-diffusion matrix."""

    kind: str                      # "scalar" | "linear" | "generic"
    state_dim: int
    noise_dim: int
    control_dim: int
    # scalar family
    a_lin: float = 0.0
    a_cub: float = 0.0
    noise: float = 0.0
    hinv_g: float = 0.0
    q: float = 0.0
    q_terminal: float = 0.0
    # linear family
    A: Optional[np.ndarray] = None
    S: Optional[np.ndarray] = None
    HinvG: Optional[np.ndarray] = None
    Q: Optional[np.ndarray] = None
    Q_T: Optional[np.ndarray] = None
    # generic callables
    model: object = None
    cost: object = None


def left_inverse_times(B: np.ndarray, S: np.ndarray) -> np.ndarray:
    """``(B^T B)^{-1} B^T S`` with a rank check on ``B``."""
    BtB = B.T @ B
    lam = np.linalg.eigvalsh(BtB)
    if lam[0] <= max(B.shape) * np.finfo(float).eps * max(lam[-1], 0.0):
        raise GainRankError("control gain is rank deficient", state=None)
    return np.linalg.solve(BtB, B.T @ S)


def build_program(model, cost) -> RolloutProgram:
    """Compile (model, cost) into a rollout program, choosing the closed
    parameter family when both sides provide one."""
    dyn = model.dynamics_params
    quad = getattr(cost, "quad_params", None)
    if isinstance(dyn, ScalarPolynomialDynamics) and quad is not None:
        return RolloutProgram(
            kind="scalar", state_dim=1, noise_dim=1, control_dim=1,
            a_lin=dyn.a_lin, a_cub=dyn.a_cub, noise=dyn.noise,
            hinv_g=float(dyn.noise / dyn.gain),
            q=float(np.asarray(quad.Q).reshape(())),
            q_terminal=float(np.asarray(quad.Q_T).reshape(())),
        )
    if (isinstance(dyn, LinearDynamics) and quad is not None
            and max(model.state_dim, model.control_dim, model.noise_dim) <= KERNEL_MAX_DIM):
        return RolloutProgram(
            kind="linear", state_dim=model.state_dim,
            noise_dim=model.noise_dim, control_dim=model.control_dim,
            A=dyn.A, S=dyn.S, HinvG=left_inverse_times(dyn.B, dyn.S),
            Q=np.asarray(quad.Q, dtype=float),
            Q_T=np.asarray(quad.Q_T, dtype=float),
        )
    return RolloutProgram(
        kind="generic", state_dim=model.state_dim,
        noise_dim=model.noise_dim, control_dim=model.control_dim,
        model=model, cost=cost,
    )


@dataclass
class BatchRollouts:
    """Per-rollout outputs of one batch, shaped ``(G, N)`` / ``(G, N, m)``."""

    eta: np.ndarray
    what: np.ndarray
    failed: np.ndarray

    @property
    def n_failed(self) -> np.ndarray:
        return self.failed.sum(axis=1)


@dataclass
class WeightStats:
    """Log-space importance-weight reduction of a batch, per group.

    ``w`` holds ``exp(-eta/gamma - shift)`` with one max-subtraction per
    group, zero at failed rollouts, so the largest weight is exactly 1 and
    nothing can overflow.  ``log_mean_w`` is the log of the mean weight
    over the valid rollouts (shift added back).
    """

    w: np.ndarray
    log_mean_w: np.ndarray
    sum_w: np.ndarray
    sum_w2: np.ndarray
    ess: np.ndarray
    n_valid: np.ndarray


def weight_stats(eta: np.ndarray, failed: np.ndarray, gamma: float) -> WeightStats:
    """Reduce ``(G, N)`` path costs to importance weights in log space.

    Failed rollouts get weight zero and are excluded from the valid count
    (drop-and-renormalise).  Deterministic: plain numpy reductions in a
    fixed order, independent of how the batch was computed.
    """
    eta = np.asarray(eta, dtype=float)
    failed = np.asarray(failed, dtype=bool)
    a = np.where(failed, -np.inf, -eta / float(gamma))
    amax = np.max(a, axis=1)
    shift = np.where(np.isfinite(amax), amax, 0.0)
    w = np.exp(a - shift[:, None])
    w[~np.isfinite(w)] = 0.0
    sum_w = w.sum(axis=1)
    sum_w2 = (w * w).sum(axis=1)
    n_valid = (~failed).sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ess = np.where(sum_w2 > 0.0, sum_w * sum_w / sum_w2, 0.0)
        log_mean_w = shift + np.log(sum_w / np.maximum(n_valid, 1))
    return WeightStats(w=w, log_mean_w=log_mean_w, sum_w=sum_w,
                       sum_w2=sum_w2, ess=ess, n_valid=n_valid)


def run_batch(program: RolloutProgram, x0_groups, n_rollouts: int,
              n_steps: int, dt: float, r_steps: int,
              seed, stream_base: int = 0, workers: int = 1,
              backend: Optional[str] = None) -> BatchRollouts:
    """Run ``N = n_rollouts`` uncontrolled rollouts from each row of
    ``x0_groups`` and accumulate cost and noise functional per rollout.

    ``seed`` is an integer or a ``numpy.random.SeedSequence``; chunk ``c``
    of the flattened ``G*N`` rollout space uses substream
    ``stream_base + c``.  Results are bit-identical for any ``workers``.
    """
    if n_steps < 0 or n_rollouts < 1:
        raise ValueError("need n_steps >= 0 and n_rollouts >= 1")
    if not 0 <= r_steps <= max(n_steps, 0):
        raise ValueError("r_steps must lie in [0, n_steps]")
    n = program.state_dim
    x0_groups = np.asarray(x0_groups, dtype=float)
    if x0_groups.ndim == 1:
        x0_groups = x0_groups[None, :]
    if x0_groups.shape[1] != n:
        raise ValueError("x0 dimension does not match the model")
    G = x0_groups.shape[0]
    total = G * n_rollouts
    seq = as_seed_sequence(seed)

    eta = np.zeros(total)
    what = np.zeros((total, program.control_dim))
    failed = np.zeros(total, dtype=np.uint8)

    use_kernel = (backend or backend_name()) == "compiled"
    if use_kernel and (not HAVE_KERNELS or program.kind == "generic"):
        use_kernel = False

    from . import numpy_backend

    sqrt_dt = math.sqrt(dt)
    scalar = program.kind == "scalar"
    x0_flat = x0_groups[:, 0] if scalar else x0_groups

    def run_chunk(c):
        i0 = c * CHUNK
        i1 = min(total, i0 + CHUNK)
        gen = generator_for(child_sequence(seq, stream_base + c))
        group_idx = np.arange(i0, i1) // n_rollouts
        if scalar:
            dw = gen.standard_normal((n_steps, i1 - i0))
            x = x0_flat[group_idx].copy()
        else:
            dw = gen.standard_normal((n_steps, i1 - i0, program.noise_dim))
            x = x0_flat[group_idx].copy()
        dw *= sqrt_dt
        ev, wv, fv = eta[i0:i1], what[i0:i1], failed[i0:i1]
        if use_kernel:
            if scalar:
                _kernels.rollout_scalar(x, dw, dt, r_steps, program.a_lin,
                                        program.a_cub, program.noise,
                                        program.hinv_g, program.q,
                                        program.q_terminal, ev, wv[:, 0], fv)
            else:
                _kernels.rollout_linear(x, dw, dt, r_steps, program.A,
                                        program.S, program.HinvG, program.Q,
                                        program.Q_T, ev, wv, fv)
        else:
            if scalar:
                numpy_backend.rollout_scalar(x, dw, dt, r_steps, program, ev,
                                             wv[:, 0], fv)
            elif program.kind == "linear":
                numpy_backend.rollout_linear(x, dw, dt, r_steps, program, ev,
                                             wv, fv)
            else:
                numpy_backend.rollout_generic(x, dw, dt, r_steps, program,
                                              ev, wv, fv)

    chunks = range(n_streams(total))
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=int(workers)) as pool:
            list(pool.map(run_chunk, chunks))
    else:
        for c in chunks:
            run_chunk(c)

    return BatchRollouts(eta=eta.reshape(G, n_rollouts),
                         what=what.reshape(G, n_rollouts, program.control_dim),
                         failed=failed.reshape(G, n_rollouts).astype(bool))
