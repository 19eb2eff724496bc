"""Declarative experiment scenarios: config schema, builtin presets and the
dispatcher that turns a resolved config into an experiment run.

Configs are JSON with explicit units in key names (``dt1_seconds``).
Unknown keys are rejected at every level and parsing a config emitted by
:func:`emit_config` reproduces it exactly, so a run is reproducible from
its ``report.json`` echo alone.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path

from .errors import ConfigError
from .experiments import (ExperimentResult, run_bias_sweep, run_clt_sweep,
                          run_closed_loop, run_control_check, run_error_sweep,
                          run_hold_sweep, run_value_sandwich)
from .instances import MODEL_NAMES, make_instance
from .pathint import PiConfig
from .rhc import ErrorInjector, RhcConfig

__all__ = ["KINDS", "parse_config", "emit_config", "default_config",
           "list_scenarios", "preset_config", "run_scenario_config",
           "PRESETS"]

KINDS = ("control_check", "clt_sweep", "bias_sweep", "closed_loop",
         "error_sweep", "hold_sweep", "value_sandwich")

_NUMBER = (int, float)

# section -> key -> (allowed types, default); None in the type tuple means
# the key is nullable.
_SCHEMA = {
    None: {
        "kind": (str, "closed_loop"),
        "seed": (int, 0),
        "realizations": (int, 100),
        "output_dir": (str, "pirhc-out"),
        "enforce_verdicts": (bool, True),
        "plots": (bool, False),
    },
    "model": {
        "name": (str, "lq_scalar"),
        "params": (dict, {}),
    },
    "cost": {
        "q": (_NUMBER + (list,), 1.0),
        "q_terminal": (_NUMBER + (list,), 0.5),
        "r_control": (_NUMBER + (list,), 1.0),
        "horizon_seconds": (_NUMBER, 1.0),
    },
    "pi": {
        "n_rollouts": (int, 1024),
        "dt2_seconds": (_NUMBER, 0.02),
        "r_seconds": (_NUMBER + (type(None),), None),
        "weight_floor": (_NUMBER, 0.0),
    },
    "rhc": {
        "dt1_seconds": (_NUMBER, 0.05),
        "dt_sim_seconds": (_NUMBER, 0.01),
        "t_end_seconds": (_NUMBER, 12.0),
    },
    "injector": {
        "kind": (str, "none"),
        "epsilon": (_NUMBER, 0.0),
        "sigma_scale": (_NUMBER, 0.0),
        "direction": (str, "adversarial"),
    },
    "stability": {
        "moment_order": (_NUMBER, 2.0),
        "delta": (_NUMBER, 0.5),
        "x0": (list, [3.0]),
        "controller": (str, "path_integral"),
        "level_slack": (_NUMBER, 0.25),
        "level_n_rollouts": (int, 200000),
        "level_dt2_seconds": (_NUMBER, 0.005),
        "n_sphere": (int, 16),
        "n_boot": (int, 200),
        "transient_window_seconds": ((list, type(None)), None),
        "tail_window_seconds": ((list, type(None)), None),
    },
    "sweep": {
        "x_eval": (list, [1.0]),
        "n_repeats": (int, 10),
        "rel_tol": (_NUMBER, 0.05),
        "pass_quota": (int, 9),
        "n_values": (list, [1000, 10000, 100000]),
        "dt2_values_seconds": (list, [0.04, 0.02, 0.01, 0.005]),
        "r_factor": (_NUMBER, 10.0),
        "n_rollouts": (int, 100000),
        "error_kind": (str, "deterministic"),
        "grid": (list, [0.0, 0.05, 0.2, 0.8]),
        "dt1_values_seconds": (list, [0.01, 0.05, 0.25]),
        "shrink_factor": (_NUMBER, 3.0),
        "slope_range": (list, [-1.25, -0.75]),
        "min_rate_ratio": (_NUMBER, 0.25),
    },
}


def default_config() -> dict:
    """Fully resolved config with every default filled in."""
    cfg = {}
    for key, (_types, default) in _SCHEMA[None].items():
        cfg[key] = copy.deepcopy(default)
    for section, keys in _SCHEMA.items():
        if section is None:
            continue
        cfg[section] = {k: copy.deepcopy(d) for k, (_t, d) in keys.items()}
    return cfg


def _check_type(value, types, path: str):
    if isinstance(types, type):
        types = (types,)
    if bool in types and isinstance(value, bool):
        return
    if isinstance(value, bool) and bool not in types:
        raise ConfigError(f"{path}: boolean not allowed here")
    if not isinstance(value, tuple(t for t in types if t is not None)):
        names = "/".join("null" if t is type(None) else t.__name__ for t in types)
        raise ConfigError(f"{path}: expected {names}, got {type(value).__name__}")


def parse_config(data) -> dict:
    """Validate a config mapping (or JSON text) and fill defaults.
    Unknown keys are rejected (no silent typos)."""
    if isinstance(data, (str, bytes)):
        try:
            data = json.loads(data)
        except json.JSONDecodeError as err:
            raise ConfigError(f"invalid JSON: {err}") from err
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    cfg = default_config()
    for key, value in data.items():
        if key in _SCHEMA[None]:
            _check_type(value, _SCHEMA[None][key][0], key)
            cfg[key] = value
        elif key in _SCHEMA:
            if not isinstance(value, dict):
                raise ConfigError(f"{key}: expected an object")
            for sub, sub_value in value.items():
                if sub not in _SCHEMA[key]:
                    raise ConfigError(f"unknown key {key}.{sub}")
                _check_type(sub_value, _SCHEMA[key][sub][0], f"{key}.{sub}")
                cfg[key][sub] = sub_value
        else:
            raise ConfigError(f"unknown key {key!r}")
    if cfg["kind"] not in KINDS:
        raise ConfigError(f"kind must be one of {KINDS}, got {cfg['kind']!r}")
    if cfg["model"]["name"] not in MODEL_NAMES:
        raise ConfigError(f"model.name must be one of {MODEL_NAMES}")
    return cfg


def emit_config(cfg: dict) -> str:
    """Serialise a resolved config; ``parse_config(emit_config(c)) == c``."""
    return json.dumps(cfg, indent=2, sort_keys=True) + "\n"


def _pi_config(cfg: dict) -> PiConfig:
    pi = cfg["pi"]
    return PiConfig(n_rollouts=pi["n_rollouts"], dt2=pi["dt2_seconds"],
                    r=pi["r_seconds"], weight_floor=pi["weight_floor"])


def _rhc_config(cfg: dict) -> RhcConfig:
    rhc = cfg["rhc"]
    return RhcConfig(dt1=rhc["dt1_seconds"], dt_sim=rhc["dt_sim_seconds"],
                     t_end=rhc["t_end_seconds"])


def _injector(cfg: dict) -> ErrorInjector:
    inj = cfg["injector"]
    return ErrorInjector(kind=inj["kind"], epsilon=inj["epsilon"],
                         sigma_scale=inj["sigma_scale"],
                         perturbation_direction=inj["direction"])


def run_scenario_config(cfg: dict, workers: int = 1) -> ExperimentResult:
    """Dispatch a resolved config to its experiment runner."""
    inst = make_instance(cfg["model"]["name"], cfg["model"]["params"],
                         cfg["cost"])
    kind = cfg["kind"]
    seed = cfg["seed"]
    sweep = cfg["sweep"]
    stab = cfg["stability"]
    if kind == "control_check":
        return run_control_check(inst, seed, _pi_config(cfg), sweep["x_eval"],
                                 n_repeats=sweep["n_repeats"],
                                 rel_tol=sweep["rel_tol"],
                                 pass_quota=sweep["pass_quota"],
                                 workers=workers)
    if kind == "clt_sweep":
        pi = cfg["pi"]
        return run_clt_sweep(inst, seed, pi["dt2_seconds"], pi["r_seconds"],
                             sweep["n_values"], n_repeats=sweep["n_repeats"],
                             x_eval=sweep["x_eval"],
                             slope_range=tuple(sweep["slope_range"]),
                             weight_floor=pi["weight_floor"], workers=workers)
    if kind == "bias_sweep":
        return run_bias_sweep(inst, seed, sweep["dt2_values_seconds"],
                              sweep["n_rollouts"],
                              n_repeats=sweep["n_repeats"],
                              r_factor=sweep["r_factor"],
                              x_eval=sweep["x_eval"],
                              shrink_factor=sweep["shrink_factor"],
                              weight_floor=cfg["pi"]["weight_floor"],
                              workers=workers)
    if kind == "closed_loop":
        return run_closed_loop(
            inst, seed, stab["controller"], _rhc_config(cfg), _injector(cfg),
            cfg["realizations"], stab["x0"], p=stab["moment_order"],
            pi_cfg=_pi_config(cfg), delta=stab["delta"],
            slack=stab["level_slack"],
            transient_window=stab["transient_window_seconds"],
            tail_window=stab["tail_window_seconds"], n_boot=stab["n_boot"],
            level_n_rollouts=stab["level_n_rollouts"],
            level_dt2=stab["level_dt2_seconds"], n_sphere=stab["n_sphere"],
            workers=workers)
    if kind == "error_sweep":
        return run_error_sweep(inst, seed, sweep["error_kind"], sweep["grid"],
                               _rhc_config(cfg), cfg["realizations"],
                               stab["x0"], p=stab["moment_order"],
                               n_boot=stab["n_boot"],
                               direction=cfg["injector"]["direction"],
                               workers=workers)
    if kind == "hold_sweep":
        rhc = cfg["rhc"]
        return run_hold_sweep(inst, seed, sweep["dt1_values_seconds"],
                              rhc["dt_sim_seconds"], rhc["t_end_seconds"],
                              cfg["realizations"], stab["x0"],
                              p=stab["moment_order"], n_boot=stab["n_boot"],
                              min_rate_ratio=sweep["min_rate_ratio"],
                              workers=workers)
    if kind == "value_sandwich":
        pi = cfg["pi"]
        return run_value_sandwich(inst, seed, sweep["x_eval"],
                                  pi["n_rollouts"], pi["dt2_seconds"],
                                  workers=workers)
    raise ConfigError(f"unhandled kind {kind!r}")


def _preset(name, description, **overrides):
    def build():
        cfg = default_config()
        cfg["output_dir"] = f"pirhc-out/{name}"
        for key, value in overrides.items():
            if isinstance(value, dict) and isinstance(cfg.get(key), dict):
                cfg[key].update(copy.deepcopy(value))
            else:
                cfg[key] = copy.deepcopy(value)
        return parse_config(cfg)
    return (description, build)


PRESETS = {
    "lq_oracle_check": _preset(
        "lq_oracle_check",
        "scalar LQ: Monte Carlo control vs Riccati feedback over 10 seeds",
        kind="control_check",
        pi={"n_rollouts": 100000, "dt2_seconds": 0.005, "r_seconds": 0.05},
        sweep={"x_eval": [1.0], "n_repeats": 10, "rel_tol": 0.05,
               "pass_quota": 9},
    ),
    "clt_sweep": _preset(
        "clt_sweep",
        "estimator variance vs rollout count: log-log slope near -1",
        kind="clt_sweep",
        pi={"dt2_seconds": 0.01, "r_seconds": 0.05},
        sweep={"n_values": [1000, 10000, 100000], "n_repeats": 50,
               "x_eval": [1.0]},
    ),
    "bias_sweep": _preset(
        "bias_sweep",
        "estimator bias vs inner step size at N=1e6 (r tied to dt2)",
        kind="bias_sweep",
        sweep={"dt2_values_seconds": [0.04, 0.02, 0.01, 0.005],
               "n_rollouts": 1000000, "n_repeats": 5, "r_factor": 10.0,
               "x_eval": [1.0], "shrink_factor": 3.0},
    ),
    "stability_envelope": _preset(
        "stability_envelope",
        "closed-loop moment stability of the Monte Carlo controller "
        "(envelope, hitting, residence)",
        kind="closed_loop",
        realizations=500,
        pi={"n_rollouts": 1024, "dt2_seconds": 0.02, "r_seconds": 0.1,
            "weight_floor": 0.0},
        rhc={"dt1_seconds": 0.05, "dt_sim_seconds": 0.01,
             "t_end_seconds": 12.0},
        stability={"x0": [3.0], "delta": 0.5, "controller": "path_integral"},
    ),
    "robustness_sweep": _preset(
        "robustness_sweep",
        "decay rate vs bounded deterministic controller error (exact oracle)",
        kind="error_sweep",
        realizations=500,
        rhc={"dt1_seconds": 0.01, "dt_sim_seconds": 0.01,
             "t_end_seconds": 12.0},
        sweep={"error_kind": "deterministic", "grid": [0.0, 0.05, 0.2, 0.8]},
        stability={"x0": [3.0]},
    ),
    "gaussian_sweep": _preset(
        "gaussian_sweep",
        "decay rate and plateau vs Gaussian controller error (exact oracle)",
        kind="error_sweep",
        realizations=500,
        rhc={"dt1_seconds": 0.01, "dt_sim_seconds": 0.01,
             "t_end_seconds": 12.0},
        sweep={"error_kind": "gaussian", "grid": [0.0, 0.01, 0.1]},
        stability={"x0": [3.0]},
    ),
    "hold_sweep": _preset(
        "hold_sweep",
        "decay rate vs sample-and-hold step under the exact oracle",
        kind="hold_sweep",
        realizations=500,
        rhc={"dt_sim_seconds": 0.005, "t_end_seconds": 12.0,
             "dt1_seconds": 0.005},
        sweep={"dt1_values_seconds": [0.01, 0.05, 0.25],
               "min_rate_ratio": 0.25},
        stability={"x0": [3.0]},
    ),
    "value_sandwich": _preset(
        "value_sandwich",
        "estimated value function inside its quadratic sandwich bounds",
        kind="value_sandwich",
        pi={"n_rollouts": 400000, "dt2_seconds": 0.005},
        sweep={"x_eval": [0.25, 0.5, 1.0, 2.0, 4.0]},
    ),
    "lq_scalar_smoke": _preset(
        "lq_scalar_smoke",
        "tiny end-to-end closed loop (smoke test sizes)",
        kind="closed_loop",
        realizations=10,
        enforce_verdicts=False,
        pi={"n_rollouts": 100, "dt2_seconds": 0.05, "r_seconds": 0.1,
            "weight_floor": 0.0},
        rhc={"dt1_seconds": 0.1, "dt_sim_seconds": 0.05,
             "t_end_seconds": 2.0},
        stability={"x0": [1.0], "level_n_rollouts": 2000, "n_boot": 50,
                   "level_dt2_seconds": 0.05},
    ),
    "cubic_demo": _preset(
        "cubic_demo",
        "nonlinear cubic-drift instance under the Monte Carlo controller",
        kind="closed_loop",
        realizations=200,
        enforce_verdicts=False,
        model={"name": "cubic_drift_1d"},
        pi={"n_rollouts": 1024, "dt2_seconds": 0.02, "r_seconds": 0.1,
            "weight_floor": 0.0},
        rhc={"dt1_seconds": 0.05, "dt_sim_seconds": 0.01,
             "t_end_seconds": 8.0},
        stability={"x0": [2.0], "delta": 0.5, "controller": "path_integral",
                   "level_n_rollouts": 50000},
    ),
}


def list_scenarios(extra_dir=None) -> list[tuple[str, str]]:
    """Builtin presets (stable order) plus any ``*.json`` configs found in
    ``extra_dir``."""
    rows = [(name, desc) for name, (desc, _build) in PRESETS.items()]
    if extra_dir:
        for path in sorted(Path(extra_dir).glob("*.json")):
            rows.append((path.stem, f"user scenario from {path}"))
    return rows


def preset_config(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; "
                          f"see `pirhc list` for available names")
    return PRESETS[name][1]()
