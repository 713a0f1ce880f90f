"""Parameter sweeps: configs x densities x target sets x seeds.

Every cell is solved independently (its own roadmap, its own seed) and
written to its own report file; the summary CSV is assembled afterwards in
cell-key order, so the worker count never changes the output.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import gc
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional

from beltmp.motion import CostConfig, RegionUnsampleableError
from beltmp.pddl import PddlError, parse_domain, parse_problem
from beltmp.plotting import plot_time_vs_length, plot_time_vs_targets, render_plan
from beltmp.taskplan import PlanningError, UnreachableGoalError
from beltmp.tmp import solve
from beltmp.world import load_scenario

CSV_COLUMNS = ("config", "d", "c", "seed", "time_s", "cost", "feasible", "status", "plan_length")
THREADS_ENV = "BELTMP_THREADS"
PACKAGE_PREFIX = "package:"


class ExperimentError(ValueError):
    pass


def data_path(name: str) -> Path:
    """Path of a file shipped in the package's data directory."""
    return Path(str(resources.files("beltmp") / "data" / name))


def resolve_path(value: str, base: Optional[Path] = None) -> Path:
    if value.startswith(PACKAGE_PREFIX):
        return data_path(value[len(PACKAGE_PREFIX):])
    p = Path(value)
    if not p.is_absolute() and base is not None:
        p = base / p
    return p


@dataclass
class ExperimentSpec:
    scenario: Path
    domain: Path
    problem: Path
    configs: list[int]
    densities: list[float]
    target_sets: list[list[str]]
    seeds: list[int]
    out_dir: Path
    eta: Optional[float] = None
    timing: bool = True
    render: bool = True
    repeats: int = 1

    @classmethod
    def from_dict(cls, data: dict, base: Optional[Path] = None) -> "ExperimentSpec":
        try:
            spec = cls(
                scenario=resolve_path(data["scenario"], base),
                domain=resolve_path(data["domain"], base),
                problem=resolve_path(data["problem"], base),
                configs=[int(c) for c in data["configs"]],
                densities=[float(d) for d in data["densities"]],
                target_sets=[[str(t).lower() for t in ts] for ts in data["target_sets"]],
                seeds=[int(s) for s in data["seeds"]],
                # outputs land relative to the working directory, never beside a packaged spec
                out_dir=Path(data.get("out_dir", "sweep-out")),
                eta=None if data.get("eta") is None else float(data["eta"]),
                timing=bool(data.get("timing", True)),
                render=bool(data.get("render", True)),
                repeats=int(data.get("repeats", 1)),
            )
        except KeyError as exc:
            raise ExperimentError(f"experiment spec is missing {exc.args[0]!r}") from None
        spec.validate()
        return spec

    @classmethod
    def load(cls, path) -> "ExperimentSpec":
        path = resolve_path(str(path))
        try:
            data = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ExperimentError(f"{path}: {exc}") from exc
        return cls.from_dict(data, path.parent)

    def validate(self) -> None:
        for name in ("configs", "densities", "target_sets", "seeds"):
            if not getattr(self, name):
                raise ExperimentError(f"{name} must not be empty")
        bad = [c for c in self.configs if c not in set(CostConfig)]
        if bad:
            raise ExperimentError(f"unknown configs {bad}")
        if any(d <= 0 for d in self.densities):
            raise ExperimentError("densities must be positive")
        if self.repeats < 1:
            raise ExperimentError("repeats must be at least 1")
        for p in (self.scenario, self.domain, self.problem):
            if not p.is_file():
                raise ExperimentError(f"{p} does not exist")
        try:
            scenario = load_scenario(self.scenario)
            domain = parse_domain(self.domain.read_text())
            parse_problem(self.problem.read_text(), domain)
        except (PddlError, ValueError) as exc:
            raise ExperimentError(str(exc)) from exc
        for ts in self.target_sets:
            unknown = set(ts) - set(scenario.world.regions)
            if unknown:
                raise ExperimentError(f"target set {ts} names unknown regions {sorted(unknown)}")

    def cells(self) -> list[tuple]:
        return list(itertools.product(self.configs, self.densities, [tuple(t) for t in self.target_sets], self.seeds))


def cell_key(config: int, d: float, targets, seed: int) -> str:
    return f"cfg{config}_d{d:g}_c{len(targets)}-{'-'.join(targets)}_s{seed}"


def threads_from_env(default: Optional[int] = None) -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw:
        try:
            n = int(raw)
        except ValueError:
            raise ExperimentError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
        return max(1, n)
    return default or os.cpu_count() or 1


def run_cell(spec: ExperimentSpec, cell: tuple) -> dict:
    """Solve one cell, write its report (and figure), return its CSV row."""
    config, d, targets, seed = cell
    scenario = load_scenario(spec.scenario)
    domain = parse_domain(spec.domain.read_text())
    problem = parse_problem(spec.problem.read_text(), domain)
    key = cell_key(config, d, targets, seed)
    row = {"config": config, "d": d, "c": len(targets), "seed": seed, "targets": list(targets), "key": key}
    cell_dir = spec.out_dir / "cells"
    # Solving is deterministic, so every repeat returns the same plan; the
    # fastest repeat is the least disturbed estimate of the planning time.
    report, elapsed = None, math.inf
    for _ in range(spec.repeats):
        t0 = time.process_time()
        try:
            report = solve(scenario, domain, problem, config, seed, eta=spec.eta, density=d, targets=list(targets))
        except (UnreachableGoalError, RegionUnsampleableError) as exc:
            elapsed = min(elapsed, time.process_time() - t0)
            error = exc
            continue
        except PlanningError as exc:
            row.update(time_s=None, cost=None, feasible=False, status="error", plan_length=None, error=str(exc))
            (cell_dir / f"{key}.json").write_text(json.dumps({"key": key, "status": "error", "error": str(exc)}) + "\n")
            return row
        elapsed = min(elapsed, report.time_s)
    if report is None:
        row.update(time_s=elapsed, cost=None, feasible=False, status="unreachable", plan_length=None, error=str(error))
        (cell_dir / f"{key}.json").write_text(json.dumps({"key": key, "status": "unreachable", "error": str(error)}) + "\n")
        return row
    report.time_s = elapsed
    (cell_dir / f"{key}.json").write_text(report.to_json(include_timing=spec.timing))
    if spec.render:
        (cell_dir / f"{key}.svg").write_text(render_plan(report.to_dict(False), scenario.world))
    row.update(
        time_s=report.time_s,
        cost=report.total_cost if report.feasible else None,
        feasible=report.feasible,
        status=report.status,
        plan_length=len(report.steps),
    )
    return row


def _fmt(value, digits: int) -> str:
    if value is None or (isinstance(value, float) and not math.isfinite(value)):
        return ""
    return f"{value:.{digits}f}"


def rows_to_csv(rows: list[dict], timing: bool = True) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow(
            [
                r["config"],
                f"{r['d']:g}",
                r["c"],
                r["seed"],
                _fmt(r["time_s"], 4) if timing else "",
                _fmt(r["cost"], 6),
                "true" if r["feasible"] else "false",
                r["status"],
                "" if r["plan_length"] is None else r["plan_length"],
            ]
        )
    return buf.getvalue()


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@dataclass
class ExperimentResult:
    rows: list[dict]
    csv_path: Path
    csv_text: str


def _worker_init() -> None:
    # A forked worker inherits the caller's heap; freezing it keeps garbage
    # collection from walking those objects, which would skew cell timings.
    gc.collect()
    gc.freeze()


def _run_cell_star(args):
    return run_cell(*args)


def run_experiment(spec: ExperimentSpec, threads: Optional[int] = None) -> ExperimentResult:
    """Solve every cell, then write ``results.csv`` and the summary figures."""
    spec.validate()
    cells = spec.cells()
    # Run seed-major so that a burst of machine load spreads over many
    # (config, d, c) groups instead of landing on one group's seeds.
    schedule = sorted(cells, key=lambda c: (spec.seeds.index(c[3]), c[2], c[1], c[0]))
    (spec.out_dir / "cells").mkdir(parents=True, exist_ok=True)
    threads = threads or threads_from_env()
    with ProcessPoolExecutor(max_workers=min(threads, len(cells)), initializer=_worker_init) as pool:
        rows = list(pool.map(_run_cell_star, [(spec, c) for c in schedule]))
    order = {cell_key(*c): i for i, c in enumerate(cells)}
    rows.sort(key=lambda r: order[r["key"]])
    text = rows_to_csv(rows, spec.timing)
    csv_path = spec.out_dir / "results.csv"
    csv_path.write_text(text)
    if spec.render and spec.timing:
        timed = [r for r in rows if r["time_s"] is not None]
        (spec.out_dir / "time_vs_targets.svg").write_text(plot_time_vs_targets(timed))
        (spec.out_dir / "time_vs_length.svg").write_text(plot_time_vs_length(timed))
    return ExperimentResult(rows, csv_path, text)


def mean_times(rows: list[dict]) -> dict[tuple[int, float, int], float]:
    """Mean ``time_s`` per (config, d, c) over seeds, skipping untimed rows."""
    groups: dict = {}
    for r in rows:
        if r["time_s"] is None:
            continue
        groups.setdefault((r["config"], r["d"], r["c"]), []).append(r["time_s"])
    return {k: sum(v) / len(v) for k, v in groups.items()}


__all__ = [
    "CSV_COLUMNS",
    "ExperimentError",
    "ExperimentResult",
    "ExperimentSpec",
    "cell_key",
    "data_path",
    "mean_times",
    "read_csv",
    "rows_to_csv",
    "run_cell",
    "run_experiment",
    "threads_from_env",
]
