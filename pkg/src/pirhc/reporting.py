"""Artifact writers: CSV tables, the JSON report, optional SVG plots.

CSV files are the ground truth of a run: UTF-8, LF line endings, ``.``
decimal separator, and floats printed with ``repr`` so they round-trip
exactly.  Plots are derived solely from the CSVs and never affect exit
codes.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

MOMENTS_HEADER = ["t", "moment", "stderr"]


def fmt(value) -> str:
    """Full-precision, round-trip-exact float formatting."""
    return repr(float(value))


def json_ready(obj):
    """Recursively convert numpy scalars/arrays for json serialisation."""
    if isinstance(obj, dict):
        return {str(k): json_ready(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [json_ready(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [json_ready(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        value = float(obj)
        return None if value != value else value
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def controls_header(control_dim: int) -> list[str]:
    return ["t_k"] + [f"u_{i}" for i in range(control_dim)] + ["ess", "n_failed"]


def write_moments_csv(path, rows) -> None:
    """Rows of (t, moment, stderr)."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(MOMENTS_HEADER)
        for t, moment, stderr in rows:
            writer.writerow([fmt(t), fmt(moment), fmt(stderr)])


def write_controls_csv(path, rows, control_dim: int) -> None:
    """Rows of (t_k, [u components], ess, n_failed)."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(controls_header(control_dim))
        for t_k, u, ess, n_failed in rows:
            writer.writerow([fmt(t_k)] + [fmt(v) for v in u]
                            + [fmt(ess), str(int(n_failed))])


def write_report_json(path, report: dict) -> None:
    text = json.dumps(json_ready(report), indent=2, sort_keys=True) + "\n"
    Path(path).write_text(text, encoding="utf-8")


def render_plots(output_dir) -> list[str]:
    """Render SVG plots from the CSVs in ``output_dir``.  Best effort:
    returns the list of files written; failures are swallowed (plotting
    must never gate a run)."""
    out = Path(output_dir)
    written = []
    try:
        import matplotlib
        matplotlib.use("svg")
        import matplotlib.pyplot as plt
    except Exception:
        return written
    try:
        moments = _read_csv(out / "moments.csv")
        if moments and len(moments["t"]) > 1:
            fig, ax = plt.subplots(figsize=(6, 4))
            t = np.asarray(moments["t"])
            m = np.asarray(moments["moment"])
            se = np.asarray(moments["stderr"])
            ax.plot(t, m, lw=1.5)
            ax.fill_between(t, m - 3 * se, m + 3 * se, alpha=0.3)
            ax.set_xlabel("t [s]")
            ax.set_ylabel("moment")
            ax.set_yscale("log")
            fig.tight_layout()
            fig.savefig(out / "moments.svg")
            plt.close(fig)
            written.append("moments.svg")
        controls = _read_csv(out / "controls.csv")
        if controls and len(controls["t_k"]) > 1:
            fig, ax = plt.subplots(figsize=(6, 4))
            t = np.asarray(controls["t_k"])
            for key in controls:
                if key.startswith("u_"):
                    ax.plot(t, np.asarray(controls[key]), lw=1.0, label=key)
            ax.set_xlabel("t_k [s]")
            ax.set_ylabel("applied control")
            ax.legend(loc="best")
            fig.tight_layout()
            fig.savefig(out / "controls.svg")
            plt.close(fig)
            written.append("controls.svg")
    except Exception:
        pass
    return written


def _read_csv(path):
    path = Path(path)
    if not path.exists():
        return None
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None:
            return None
        columns = {name: [] for name in header}
        for row in reader:
            for name, value in zip(header, row):
                try:
                    columns[name].append(float(value))
                except ValueError:
                    columns[name].append(float("nan"))
    return columns
