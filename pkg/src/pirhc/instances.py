"""Builtin benchmark instances wired for the estimators and experiments.

Each instance bundles a model, a quadratic cost, the certified gamma
coupling, and (for linear dynamics) the exact Riccati oracle.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .costs import CostSpec, GammaCoupling, check_gamma_coupling, quadratic_cost
from .errors import ConfigError
from .models import SdeModel, linear_sde, scalar_polynomial_sde, validate_model
from .stability import LqOracle, solve_riccati

__all__ = ["ProblemInstance", "make_instance", "MODEL_NAMES"]

MODEL_NAMES = ("lq_scalar", "lq_2d", "cubic_drift_1d")

_MODEL_DEFAULTS = {
    "lq_scalar": {"a": 0.0, "b": 1.0, "sigma": 1.0},
    "lq_2d": {
        "A": [[0.0, 1.0], [-1.0, -1.0]],
        "B": [[1.0, 0.0], [0.0, 1.0]],
        "sigma": [[0.5, 0.0], [0.0, 0.5]],
    },
    "cubic_drift_1d": {"a_cub": -1.0, "b": 1.0, "sigma": 1.0},
}

_COST_DEFAULTS = {"q": 1.0, "q_terminal": 0.5, "r_control": 1.0,
                  "horizon_seconds": 1.0}


@dataclass(frozen=True)
class ProblemInstance:
    name: str
    model: SdeModel
    cost: CostSpec
    gamma: GammaCoupling
    oracle: Optional[LqOracle] = None

    @property
    def has_oracle(self) -> bool:
        return self.oracle is not None


def _as_matrix(value, dim: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return float(arr) * np.eye(dim)
    arr = np.atleast_2d(arr)
    if arr.shape != (dim, dim):
        raise ConfigError(f"{name} must be a scalar or a {dim}x{dim} matrix")
    return arr


def make_instance(model_name: str, model_params: Optional[dict] = None,
                  cost_params: Optional[dict] = None,
                  coupling_tol: float = 1e-9) -> ProblemInstance:
    """Build a named instance with parameter overrides.

    Model names: ``lq_scalar`` (drift a*x, gain b, noise sigma),
    ``lq_2d`` (matrices A, B, sigma), ``cubic_drift_1d`` (drift
    a_cub*x**3 with gain b and noise sigma).  Cost parameters ``q``,
    ``q_terminal``, ``r_control`` (scalars or matrices) and
    ``horizon_seconds`` apply to all of them.
    """
    if model_name not in MODEL_NAMES:
        raise ConfigError(f"unknown model {model_name!r}; "
                          f"expected one of {MODEL_NAMES}")
    mp = dict(_MODEL_DEFAULTS[model_name])
    for key, value in (model_params or {}).items():
        if key not in mp:
            raise ConfigError(f"unknown model parameter {key!r} for {model_name}")
        mp[key] = value
    cp = dict(_COST_DEFAULTS)
    for key, value in (cost_params or {}).items():
        if key not in cp:
            raise ConfigError(f"unknown cost parameter {key!r}")
        cp[key] = value

    oracle = None
    if model_name == "lq_scalar":
        A = [[float(mp["a"])]]
        B = [[float(mp["b"])]]
        S = [[float(mp["sigma"])]]
        model = linear_sde(A, B, S)
        dim = 1
    elif model_name == "lq_2d":
        A = _as_matrix(mp["A"], 2, "A")
        B = np.atleast_2d(np.asarray(mp["B"], dtype=float))
        S = np.atleast_2d(np.asarray(mp["sigma"], dtype=float))
        model = linear_sde(A, B, S)
        dim = 2
    else:
        model = scalar_polynomial_sde(a_lin=0.0, a_cub=float(mp["a_cub"]),
                                      gain=float(mp["b"]),
                                      noise=float(mp["sigma"]))
        dim = 1

    Q = _as_matrix(cp["q"], dim, "q")
    Q_T = _as_matrix(cp["q_terminal"], dim, "q_terminal")
    R = _as_matrix(cp["r_control"], model.control_dim, "r_control")
    cost = quadratic_cost(Q, Q_T, R, horizon=float(cp["horizon_seconds"]))

    probes = [np.zeros(dim)] + [np.eye(dim)[i] for i in range(dim)]
    validate_model(model, probes)
    gamma = check_gamma_coupling(model, cost, probes, tol=coupling_tol)

    if model_name in ("lq_scalar", "lq_2d"):
        oracle = solve_riccati(A, B, S, Q, Q_T, R, cost.horizon)
    return ProblemInstance(name=model_name, model=model, cost=cost,
                           gamma=gamma, oracle=oracle)
