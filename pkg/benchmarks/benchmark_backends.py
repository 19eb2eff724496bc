#!/usr/bin/env python3
"""Throughput comparison of the compiled rollout kernels against the
pure-numpy fallback.

Usage:
    python benchmarks/benchmark_backends.py [--quick]

Reports Monte Carlo rollout throughput (million Euler-Maruyama steps per
second, noise generation included) per backend and model family, plus an
end-to-end control-estimate timing.  Both backends produce bit-identical
results for the closed families; the benchmark verifies that along the
way.
"""

import argparse
import time

import numpy as np

from pirhc import engine
from pirhc.engine import build_program, run_batch
from pirhc.instances import make_instance
from pirhc.models import SdeModel
from pirhc.pathint import PiConfig, estimate_control


def _cases():
    scalar = make_instance("lq_scalar")
    lin2 = make_instance("lq_2d")
    cubic = make_instance("cubic_drift_1d")
    m = scalar.model
    generic_model = SdeModel(state_dim=1, control_dim=1, noise_dim=1,
                             drift=m.drift, control_gain=m.control_gain,
                             diffusion=m.diffusion)
    return [
        ("lq_scalar (scalar kernel)", build_program(m, scalar.cost), 1),
        ("cubic_drift_1d (scalar kernel)",
         build_program(cubic.model, cubic.cost), 1),
        ("lq_2d (linear kernel)", build_program(lin2.model, lin2.cost), 2),
        ("lq_scalar (generic callables)",
         build_program(generic_model, scalar.cost), 1),
    ]


def _time_batch(program, dim, n_rollouts, n_steps, backend, repeats=3):
    x0 = np.full((1, dim), 1.0)
    best = float("inf")
    result = None
    for rep in range(repeats):
        t0 = time.perf_counter()
        result = run_batch(program, x0, n_rollouts, n_steps, dt=0.005,
                           r_steps=10, seed=0, backend=backend)
        best = min(best, time.perf_counter() - t0)
    return best, result


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--quick", action="store_true",
                        help="smaller batches (CI-sized)")
    args = parser.parse_args()

    n_rollouts = 20_000 if args.quick else 200_000
    n_steps = 100 if args.quick else 200
    steps_total = n_rollouts * n_steps

    print(f"selected backend at import: {engine.backend_name()}")
    print(f"batch: {n_rollouts} rollouts x {n_steps} steps "
          f"({steps_total / 1e6:.0f}M Euler-Maruyama steps, noise included)\n")
    header = f"{'case':34s} {'numpy':>12s} {'compiled':>12s} {'speedup':>8s}"
    print(header)
    print("-" * len(header))
    for name, program, dim in _cases():
        t_np, r_np = _time_batch(program, dim, n_rollouts, n_steps, "numpy")
        line = f"{name:34s} {steps_total / t_np / 1e6:9.1f} Ms/s"
        if engine.HAVE_KERNELS and program.kind != "generic":
            t_k, r_k = _time_batch(program, dim, n_rollouts, n_steps,
                                   "compiled")
            agree = (np.array_equal(r_np.eta, r_k.eta, equal_nan=True)
                     and np.array_equal(r_np.what, r_k.what, equal_nan=True))
            line += f" {steps_total / t_k / 1e6:9.1f} Ms/s {t_np / t_k:7.2f}x"
            if not agree:
                line += "  (MISMATCH!)"
        else:
            line += f" {'n/a':>12s} {'':>8s}"
        print(line)

    inst = make_instance("lq_scalar")
    cfg = PiConfig(n_rollouts=n_rollouts, dt2=0.005, r=0.05, weight_floor=0.0)
    print("\nend-to-end control estimate (weights, functional, reduction):")
    for backend in ("numpy", "compiled"):
        if backend == "compiled" and not engine.HAVE_KERNELS:
            continue
        t0 = time.perf_counter()
        est = estimate_control(inst.model, inst.cost, inst.gamma, [1.0], cfg,
                               seed=0, backend=backend)
        dt = time.perf_counter() - t0
        print(f"  {backend:9s} {dt * 1e3:8.1f} ms   u_hat = {est.u_hat[0]:+.5f}"
              f"   ess = {est.ess:.0f}")


if __name__ == "__main__":
    main()
