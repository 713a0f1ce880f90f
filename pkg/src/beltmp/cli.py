"""Command-line front end.

``beltmp solve`` plans one instance, ``beltmp sweep`` runs an experiment
grid and ``beltmp exec`` simulates a solved plan. Exit codes: 0 success,
2 infeasible or empty plan, 3 input error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from beltmp.belief import BeliefError
from beltmp.experiment import ExperimentError, ExperimentSpec, data_path, resolve_path, run_experiment
from beltmp.motion import CostConfig, MotionError, dump_roadmap
from beltmp.pddl import PddlError, parse_domain, parse_problem
from beltmp.plotting import render_plan, render_traces
from beltmp.sim import DivergenceError, execute, summary, traces_to_csv
from beltmp.taskplan import UnreachableGoalError, format_plan
from beltmp.tmp import load_report, solve
from beltmp.world import WorldError, load_scenario

EXIT_OK, EXIT_INFEASIBLE, EXIT_INPUT = 0, 2, 3


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Argument errors are input errors, not the infeasible-plan status."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _read(path: Path) -> str:
    try:
        return path.read_text()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None


def _path(value: str) -> Path:
    return resolve_path(value)


def _targets(value: Optional[str]) -> Optional[list[str]]:
    if value is None:
        return None
    return [t.strip().lower() for t in value.split(",") if t.strip()]


def cmd_solve(args) -> int:
    scenario_path = _path(args.scenario)
    if not scenario_path.is_file():
        raise InputError(f"{scenario_path} does not exist")
    scenario = load_scenario(scenario_path)
    domain = parse_domain(_read(_path(args.domain)))
    problem = parse_problem(_read(_path(args.problem)), domain)
    targets = _targets(args.targets)
    if targets is not None:
        unknown = set(targets) - set(scenario.world.regions)
        if unknown:
            raise InputError(f"unknown target regions {sorted(unknown)}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        report = solve(scenario, domain, problem, CostConfig(args.config), args.seed, eta=args.eta, density=args.density, targets=targets)
    except UnreachableGoalError as exc:
        (out / "report.json").write_text(json.dumps({"status": "unreachable", "error": str(exc)}, indent=1) + "\n")
        print(f"unreachable: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    data = report.to_dict(include_timing=not args.no_timing)
    data["inputs"] = {"scenario": str(scenario_path), "domain": args.domain, "problem": args.problem}
    (out / "report.json").write_text(json.dumps(data, indent=1) + "\n")
    (out / "plan.txt").write_text(format_plan(report.plan))
    dump_roadmap(report.session.roadmap, out / "roadmap.json")
    (out / "plan.svg").write_text(render_plan(data, scenario.world, report.session.roadmap.nodes))
    status = "valid" if report.valid else f"rejected at step {report.violation['step']}"
    print(f"{report.status}: cost {report.total_cost:.6f}, {len(report.steps)} steps, {status}")
    return EXIT_OK if report.valid else EXIT_INFEASIBLE


def cmd_sweep(args) -> int:
    spec = ExperimentSpec.load(args.spec)
    if args.out:
        spec.out_dir = Path(args.out)
    if args.no_timing:
        spec.timing = False
    result = run_experiment(spec, threads=args.threads)
    ok = sum(r["feasible"] for r in result.rows)
    print(f"{len(result.rows)} cells, {ok} feasible, results in {result.csv_path}")
    return EXIT_OK


def cmd_exec(args) -> int:
    report_path = Path(args.report)
    if not report_path.is_file():
        raise InputError(f"{report_path} does not exist")
    try:
        report = load_report(report_path)
    except (json.JSONDecodeError, ValueError) as exc:
        raise InputError(f"{report_path}: {exc}") from None
    if report.get("status") == "unreachable":
        raise InputError("report holds no plan")
    scenario_arg = args.scenario or report.get("inputs", {}).get("scenario")
    if not scenario_arg:
        raise InputError("report does not name its scenario; pass --scenario")
    scenario = load_scenario(_path(scenario_arg))
    out = Path(args.out) if args.out else report_path.parent
    out.mkdir(parents=True, exist_ok=True)
    try:
        traces = execute(report, scenario, args.runs, args.seed, strict=False, abort_distance=args.abort_distance)
    except DivergenceError as exc:  # only raised in strict mode
        print(str(exc), file=sys.stderr)
        return EXIT_INFEASIBLE
    (out / "traces.csv").write_text(traces_to_csv(traces))
    (out / "traces.svg").write_text(render_traces(traces, scenario.world, report))
    stats = summary(traces, report)
    (out / "exec_summary.json").write_text(json.dumps(stats, indent=1) + "\n")
    print(f"success {stats['success_rate']:.2f} over {stats['runs']} runs, NEES in band {stats['nees_in_band']}/{stats['runs']}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="beltmp", description="Task and motion planning in belief space.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="plan one instance")
    s.add_argument("--scenario", default=str(data_path("office.json")))
    s.add_argument("--domain", default=str(data_path("office_domain.pddl")))
    s.add_argument("--problem", default=str(data_path("office_problem.pddl")))
    s.add_argument("--config", type=int, choices=[1, 2, 3, 4], default=4)
    s.add_argument("--density", type=float, default=None, help="roadmap samples per square meter")
    s.add_argument("--eta", type=float, default=None, help="goal covariance trace bound")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--targets", default=None, help="comma-separated regions holding documents")
    s.add_argument("--out", default="beltmp-out")
    s.add_argument("--no-timing", action="store_true", help="omit wall-clock time from the report")
    s.set_defaults(func=cmd_solve)

    w = sub.add_parser("sweep", help="run an experiment grid")
    w.add_argument("--spec", required=True)
    w.add_argument("--out", default=None, help="override the spec's output directory")
    w.add_argument("--threads", type=int, default=None, help="worker count (default: BELTMP_THREADS or CPU count)")
    w.add_argument("--no-timing", action="store_true", help="leave time_s blank so reruns are byte-identical")
    w.set_defaults(func=cmd_sweep)

    e = sub.add_parser("exec", help="simulate a solved plan")
    e.add_argument("--report", required=True)
    e.add_argument("--runs", type=int, default=25)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--scenario", default=None)
    e.add_argument("--out", default=None)
    e.add_argument("--abort-distance", type=float, default=10.0)
    e.set_defaults(func=cmd_exec)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InputError, ExperimentError, PddlError, WorldError, BeliefError, MotionError, ValueError, KeyError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


__all__ = ["build_parser", "main"]

if __name__ == "__main__":
    sys.exit(main())
