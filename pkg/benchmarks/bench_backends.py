#!/usr/bin/env python3
"""Benchmark the compiled simulation kernel against the pure-numpy fallback.

    python benchmarks/bench_backends.py [--scenario circle10] [--t-end 4.0]
                                        [--dt 0.001] [--repeat 3]

Runs the same scenario on both engines, reports wall time, steps/second and
the speedup, and cross-checks that the two trajectories agree.
"""

import argparse
import json
import pathlib
import sys
import time

import numpy as np

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parent.parent / "src"))

from mrsafe import scenario as sc, sim  # noqa: E402


def load(name: str, t_end: float | None, dt: float | None) -> sc.ScenarioSpec:
    path = pathlib.Path(name)
    if not path.exists():
        path = (pathlib.Path(__file__).resolve().parent.parent / "src" / "mrsafe"
                / "scenarios" / f"{name}.json")
    doc = json.loads(path.read_text())
    if t_end is not None:
        doc["sim"]["t_end"] = t_end
    if dt is not None:
        doc["sim"]["dt"] = dt
    return sc.parse_scenario(json.dumps(doc))


def time_backend(spec: sc.ScenarioSpec, backend: str, repeat: int):
    best = None
    log = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        log = sim.run(spec, backend=backend)
        elapsed = time.perf_counter() - t0
        best = elapsed if best is None else min(best, elapsed)
    return best, log


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--scenario", default="circle10")
    parser.add_argument("--t-end", type=float, default=4.0,
                        help="shortened horizon so the pure engine stays tolerable")
    parser.add_argument("--dt", type=float, default=None)
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()

    spec = load(args.scenario, args.t_end, args.dt)
    steps = spec.n_steps
    print(f"scenario={args.scenario} robots={spec.n_robots} steps={steps} "
          f"dt={spec.dt}")

    t_pure, log_pure = time_backend(spec, "pure", max(1, args.repeat // 3))
    print(f"pure : {t_pure:8.3f} s   {steps / t_pure:10.0f} steps/s")
    if not sim.HAVE_FASTCORE:
        print("fast : not built (python setup.py build_ext --inplace)")
        return 0
    t_fast, log_fast = time_backend(spec, "fast", args.repeat)
    print(f"fast : {t_fast:8.3f} s   {steps / t_fast:10.0f} steps/s")
    print(f"speedup: {t_pure / t_fast:.1f}x")
    drift = float(np.max(np.abs(log_fast.pose - log_pure.pose)))
    print(f"max pose difference between engines: {drift:.3e}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
