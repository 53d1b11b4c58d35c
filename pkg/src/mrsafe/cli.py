"""Command-line entry point.

    mrsafe run SCENARIO --out DIR [--set KEY=VALUE ...] [--seed N] [--dt X]
    mrsafe sweep SCENARIO PARAM V1,V2,... --out DIR
    mrsafe plot LOG.csv --kind traj|speed --scenario S.json --out-file F.svg
    mrsafe metrics LOG.csv --scenario S.json [--out-file F.json]

SCENARIO is a JSON path or the bare name of a bundled scenario
(example1_static, circle10, example3_dynamic_a, example3_dynamic_b,
swap2_deadlock).  --set patches the document before validation with a
dotted path, e.g. --set gains.lambda=1.0 --set safety.inflate_rho=0.35.
Sweeps run one scenario per value in parallel workers capped by
MRSAFE_THREADS, each writing into its own subdirectory.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from . import metrics as metrics_mod
from . import sim, svgplot
from .artifacts import atomic_write_text
from .scenario import ScenarioError, apply_overrides, parse_scenario


@dataclass(frozen=True)
class RunArtifacts:
    log_path: Path
    metrics_path: Path
    traj_path: Path
    speed_path: Path
    scenario_path: Path


def _resolve_scenario_text(name: str):
    path = Path(name)
    if path.exists():
        return path.read_text(encoding="utf-8")
    if not path.suffix:
        bundled = resources.files("mrsafe.scenarios").joinpath(name + ".json")
        if bundled.is_file():
            return bundled.read_text(encoding="utf-8")
    return None


def _parse_set_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def _collect_overrides(args) -> dict:
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise ScenarioError(f"--set expects KEY=VALUE, got {item!r}")
        key, _, raw = item.partition("=")
        overrides[key] = _parse_set_value(raw)
    if getattr(args, "seed", None) is not None:
        overrides["sim.seed"] = args.seed
    if getattr(args, "dt", None) is not None:
        overrides["sim.dt"] = args.dt
    return overrides


def _load_spec(args):
    text = _resolve_scenario_text(args.scenario)
    if text is None:
        print(f"scenario not found: {args.scenario}", file=sys.stderr)
        return None
    overrides = _collect_overrides(args)
    if overrides:
        doc = json.loads(text)
        doc = apply_overrides(doc, overrides)
        text = json.dumps(doc)
    return parse_scenario(text)


def run_scenario(spec, out_dir: Path, backend: str = "auto") -> RunArtifacts:
    """Simulate and emit all artifacts.  Plots render from the CSV-reloaded
    log so re-plotting the emitted CSV is byte-identical."""
    from .scenario import serialize_scenario

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log = sim.run(spec, backend=backend)
    paths = RunArtifacts(
        log_path=out_dir / "log.csv",
        metrics_path=out_dir / "metrics.json",
        traj_path=out_dir / "traj.svg",
        speed_path=out_dir / "speed.svg",
        scenario_path=out_dir / "scenario.json",
    )
    atomic_write_text(paths.scenario_path, serialize_scenario(spec))
    log.to_csv(paths.log_path)
    report = metrics_mod.build_report(log)
    atomic_write_text(paths.metrics_path, report.to_json())
    reloaded = sim.SimLog.from_csv(paths.log_path, spec)
    atomic_write_text(paths.traj_path, svgplot.plot_trajectories(reloaded))
    atomic_write_text(paths.speed_path, svgplot.plot_speeds(reloaded))
    return paths


def _cmd_run(args) -> int:
    try:
        spec = _load_spec(args)
        if spec is None:
            return 2
        artifacts = run_scenario(spec, Path(args.out), backend=args.backend)
    except (ScenarioError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for p in (artifacts.log_path, artifacts.metrics_path, artifacts.traj_path,
              artifacts.speed_path):
        print(p)
    return 0


def _sweep_one(text, param, value, out_dir, backend):
    doc = apply_overrides(json.loads(text), {param: value})
    spec = parse_scenario(json.dumps(doc))
    run_scenario(spec, out_dir, backend=backend)
    with open(out_dir / "metrics.json", "r", encoding="utf-8") as fh:
        report = json.load(fh)
    goals = sum(1 for r in report["goal_reach_times"] if r is not None)
    return (report["min_clearance"], report["velocity_total_variation"],
            goals, report["collisions"])


def _cmd_sweep(args) -> int:
    text = _resolve_scenario_text(args.scenario)
    if text is None:
        print(f"scenario not found: {args.scenario}", file=sys.stderr)
        return 2
    overrides = _collect_overrides(args)
    if overrides:
        text = json.dumps(apply_overrides(json.loads(text), overrides))
    values = [_parse_set_value(v) for v in args.values.split(",") if v]
    if not values:
        print("error: no sweep values given", file=sys.stderr)
        return 1
    out_root = Path(args.out)
    out_root.mkdir(parents=True, exist_ok=True)
    workers = int(os.environ.get("MRSAFE_THREADS", "0")) or min(len(values), os.cpu_count() or 1)

    def job(value):
        sub = out_root / f"{args.param.replace('.', '_')}={value}"
        try:
            clearance, tv, goals, collisions = _sweep_one(
                text, args.param, value, sub, args.backend)
            return (value, f"{clearance:.9g}", f"{tv:.9g}", goals, collisions, "ok")
        except (ScenarioError, ArithmeticError) as exc:
            return (value, "", "", "", "", f"failed: {exc}")

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        rows = list(pool.map(job, values))
    lines = ["value,min_clearance,total_variation,goals_reached,collisions,status"]
    for row in rows:
        lines.append(",".join(str(v) for v in row))
    table = "\n".join(lines) + "\n"
    atomic_write_text(out_root / "sweep.csv", table)
    print(table, end="")
    return 0


def _load_log(args):
    log_path = Path(args.log)
    if not log_path.exists():
        print(f"log not found: {args.log}", file=sys.stderr)
        return None
    scenario = args.scenario or str(log_path.parent / "scenario.json")
    text = _resolve_scenario_text(scenario)
    if text is None:
        print(f"scenario not found: {scenario} (pass --scenario)", file=sys.stderr)
        return None
    spec = parse_scenario(text)
    try:
        return sim.SimLog.from_csv(log_path, spec)
    except ValueError as exc:
        print(f"malformed log: {exc}", file=sys.stderr)
        return None


def _cmd_plot(args) -> int:
    log = _load_log(args)
    if log is None:
        return 2
    svg = svgplot.plot_trajectories(log) if args.kind == "traj" else svgplot.plot_speeds(log)
    out = Path(args.out_file) if args.out_file else Path(args.log).with_suffix(f".{args.kind}.svg")
    atomic_write_text(out, svg)
    print(out)
    return 0


def _cmd_metrics(args) -> int:
    log = _load_log(args)
    if log is None:
        return 2
    report = metrics_mod.build_report(log)
    if args.out_file:
        atomic_write_text(Path(args.out_file), report.to_json())
        print(args.out_file)
    print(report.to_table(), end="")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mrsafe",
                                     description="multi-robot predictive safety simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="simulate a scenario and write artifacts")
    p_run.add_argument("scenario")
    p_run.add_argument("--out", default="out")
    p_run.add_argument("--set", action="append", metavar="KEY=VALUE")
    p_run.add_argument("--seed", type=int)
    p_run.add_argument("--dt", type=float)
    p_run.add_argument("--backend", default="auto", choices=("auto", "fast", "pure"))
    p_run.set_defaults(func=_cmd_run)

    p_sweep = sub.add_parser("sweep", help="run one scenario per parameter value")
    p_sweep.add_argument("scenario")
    p_sweep.add_argument("param", help="override path, e.g. gains.lambda")
    p_sweep.add_argument("values", help="comma-separated values")
    p_sweep.add_argument("--out", default="sweep")
    p_sweep.add_argument("--set", action="append", metavar="KEY=VALUE")
    p_sweep.add_argument("--seed", type=int)
    p_sweep.add_argument("--dt", type=float)
    p_sweep.add_argument("--backend", default="auto", choices=("auto", "fast", "pure"))
    p_sweep.set_defaults(func=_cmd_sweep)

    p_plot = sub.add_parser("plot", help="render an SVG from a log CSV")
    p_plot.add_argument("log")
    p_plot.add_argument("--kind", required=True, choices=("traj", "speed"))
    p_plot.add_argument("--scenario")
    p_plot.add_argument("--out-file")
    p_plot.set_defaults(func=_cmd_plot)

    p_metrics = sub.add_parser("metrics", help="recompute metrics from a log CSV")
    p_metrics.add_argument("log")
    p_metrics.add_argument("--scenario")
    p_metrics.add_argument("--out-file")
    p_metrics.set_defaults(func=_cmd_metrics)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
