"""Pure-numpy rollout loops.

Expression order inside each step matches the compiled kernels exactly
(same per-element association, no FMA), so both backends produce
bit-identical batches for the closed parameter families.  Overflow is not
an error here: rollouts that go non-finite are flagged and dropped by the
caller.
"""

from __future__ import annotations

import numpy as np

from ..errors import GainRankError

_EPS = np.finfo(float).eps


def _flag_failures(eta, what, x, failed):
    ok = np.isfinite(eta)
    if what.ndim == 1:
        ok &= np.isfinite(what)
    else:
        ok &= np.isfinite(what).all(axis=1)
    if x.ndim == 1:
        ok &= np.isfinite(x)
    else:
        ok &= np.isfinite(x).all(axis=1)
    failed[:] = (~ok).astype(np.uint8)


def rollout_scalar(x, dw, dt, r_steps, par, eta, what, failed):
    """1-D family: drift a_lin*x + a_cub*x^3, constant gain/noise,
    quadratic costs.  ``x`` is the (B,) initial state, ``dw`` the (K, B)
    pre-scaled increments; ``eta``/``what``/``failed`` are filled."""
    a_lin, a_cub = par.a_lin, par.a_cub
    g, hg = par.noise, par.hinv_g
    cq = 0.5 * dt * par.q
    cqt = 0.5 * par.q_terminal
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(dw.shape[0]):
            eta += cq * (x * x)
            if k < r_steps:
                what += hg * dw[k]
            fx = a_lin * x + a_cub * ((x * x) * x)
            x = x + fx * dt + g * dw[k]
        eta += cqt * (x * x)
    _flag_failures(eta, what, x, failed)


def rollout_linear(x, dw, dt, r_steps, par, eta, what, failed):
    """Linear family: drift A x, constant diffusion S, constant HinvG,
    quadratic costs with matrices Q / Q_T."""
    A, S, HinvG, Q, Q_T = par.A, par.S, par.HinvG, par.Q, par.Q_T
    half_dt = 0.5 * dt
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(dw.shape[0]):
            y = np.einsum("ij,bj->bi", Q, x)
            eta += half_dt * np.einsum("bi,bi->b", x, y)
            if k < r_steps:
                what += np.einsum("pj,bj->bp", HinvG, dw[k])
            fx = np.einsum("ij,bj->bi", A, x)
            gdw = np.einsum("ij,bj->bi", S, dw[k])
            x = x + fx * dt + gdw
        y = np.einsum("ij,bj->bi", Q_T, x)
        eta += 0.5 * np.einsum("bi,bi->b", x, y)
    _flag_failures(eta, what, x, failed)


def rollout_generic(x, dw, dt, r_steps, par, eta, what, failed):
    """Arbitrary vectorised model/cost callables.  The gain left-inverse is
    recomputed at every visited state with a rank check.

    Rollouts whose state goes non-finite are frozen (evaluated at the
    origin so linear-algebra calls stay well defined) and flagged failed;
    live rollouts are unaffected.
    """
    model, cost = par.model, par.cost
    dead = ~np.isfinite(x).all(axis=1)
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(dw.shape[0]):
            x = np.where(dead[:, None], 0.0, x)
            run = np.asarray(cost.running_state_cost(x), dtype=float)
            eta += np.where(dead, 0.0, run) * dt
            g = model.diffusion_at(x)
            if k < r_steps:
                h = model.gain_at(x)
                hth = np.einsum("bnm,bnk->bmk", h, h)
                lam = np.linalg.eigvalsh(hth)
                bad = lam[:, 0] <= max(h.shape[-2:]) * _EPS * np.maximum(lam[:, -1], 0.0)
                bad &= ~dead
                if np.any(bad):
                    raise GainRankError(
                        "control gain is rank deficient along a rollout",
                        state=x[np.argmax(bad)].copy())
                hinvg = np.linalg.solve(hth, np.einsum("bnm,bnd->bmd", h, g))
                step_w = np.einsum("bmd,bd->bm", hinvg, dw[k])
                step_w[dead] = 0.0
                what += step_w
            fx = np.asarray(model.drift(x), dtype=float)
            x = x + fx * dt + np.einsum("bnd,bd->bn", g, dw[k])
            dead |= ~np.isfinite(x).all(axis=1)
        x = np.where(dead[:, None], 0.0, x)
        term = np.asarray(cost.terminal_cost(x), dtype=float)
        eta += np.where(dead, 0.0, term)
    _flag_failures(eta, what, x, failed)
    failed |= dead.astype(np.uint8)
