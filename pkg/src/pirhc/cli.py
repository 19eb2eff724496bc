"""Experiment command line: run scenarios, list presets, validate configs.

    pirhc run <config-path-or-preset> [--workers K] [--output-dir DIR]
    pirhc list [--scenario-dir DIR]
    pirhc validate <config-path>

Exit codes: 0 all enforced verdicts passed, 1 runtime failure or failed
verdict, 2 invalid config.  ``PIRHC_OUTPUT_DIR`` overrides the config's
output directory (the only environment override).
"""

from __future__ import annotations

import argparse
import os
import sys
import traceback
from pathlib import Path

from . import engine
from .errors import ConfigError, PirhcError
from .reporting import (render_plots, write_controls_csv, write_moments_csv,
                        write_report_json)
from .scenarios import (emit_config, list_scenarios, parse_config,
                        preset_config, run_scenario_config)


def _load_config(target: str) -> dict:
    path = Path(target)
    if path.exists():
        return parse_config(path.read_text(encoding="utf-8"))
    if "/" not in target and "\\" not in target and not target.endswith(".json"):
        return preset_config(target)
    raise ConfigError(f"config file not found: {target}")


def _control_dim(cfg: dict) -> int:
    if cfg["model"]["name"] == "lq_2d":
        b = cfg["model"]["params"].get("B")
        return len(b[0]) if b else 2
    return 1


def run_scenario(cfg: dict, workers: int = 1) -> int:
    """Run one scenario config and write its artifacts.  Returns the
    process exit code (0 pass, 1 runtime failure or failed verdict)."""
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    report = {"config": cfg, "backend": engine.backend_name(), "error": None,
              "results": None, "verdicts": None}
    moments_rows: list = []
    controls_rows: list = []
    failed = False
    try:
        result = run_scenario_config(cfg, workers=workers)
        report["results"] = result.report
        report["verdicts"] = result.verdicts
        moments_rows = result.moments_rows
        controls_rows = result.controls_rows
    except PirhcError as err:
        report["error"] = {"type": type(err).__name__, "message": str(err)}
        failed = True
    except Exception as err:  # unexpected: still leave a machine-readable trace
        report["error"] = {"type": type(err).__name__, "message": str(err),
                           "traceback": traceback.format_exc()}
        failed = True
    write_moments_csv(out / "moments.csv", moments_rows)
    write_controls_csv(out / "controls.csv", controls_rows, _control_dim(cfg))
    write_report_json(out / "report.json", report)
    if cfg.get("plots") and not failed:
        for name in render_plots(out):
            print(f"wrote {out / name}")
    if failed:
        print(f"error: {report['error']['message']}", file=sys.stderr)
        return 1
    for name, ok in (report["verdicts"] or {}).items():
        print(f"[{'PASS' if ok else 'FAIL'}] {cfg['kind']}.{name}")
    if cfg["enforce_verdicts"] and not all((report["verdicts"] or {}).values()):
        return 1
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="pirhc",
        description="Monte Carlo path-integral receding-horizon control "
                    "experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a scenario config or preset")
    p_run.add_argument("config", help="path to a JSON config, or a preset name")
    p_run.add_argument("--workers", type=int, default=None,
                       help="worker threads for Monte Carlo batches "
                            "(default: hardware parallelism)")
    p_run.add_argument("--output-dir", default=None,
                       help="override the config's output directory")

    p_list = sub.add_parser("list", help="list builtin scenario presets")
    p_list.add_argument("--scenario-dir", default=None,
                        help="additional directory of *.json scenarios")

    p_val = sub.add_parser("validate", help="validate a scenario config")
    p_val.add_argument("config", help="path to a JSON config file")

    args = parser.parse_args(argv)

    if args.command == "list":
        for name, desc in list_scenarios(args.scenario_dir):
            print(f"{name:24s} {desc}")
        return 0

    if args.command == "validate":
        try:
            cfg = parse_config(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, ConfigError) as err:
            print(f"invalid config: {err}", file=sys.stderr)
            return 2
        sys.stdout.write(emit_config(cfg))
        return 0

    try:
        cfg = _load_config(args.config)
    except ConfigError as err:
        print(f"invalid config: {err}", file=sys.stderr)
        return 2
    if args.output_dir:
        cfg["output_dir"] = args.output_dir
    elif os.environ.get("PIRHC_OUTPUT_DIR"):
        cfg["output_dir"] = os.environ["PIRHC_OUTPUT_DIR"]
    workers = args.workers if args.workers else (os.cpu_count() or 1)
    return run_scenario(cfg, workers=workers)


if __name__ == "__main__":
    sys.exit(main())
