"""Closed-loop execution of a solved plan with sampled true states.

Each run draws a true start pose from the initial belief, then follows the
planned node sequence. Controls are computed from the current estimate
(turn toward the next node, then advance in equal steps of at most
``edge_step``), the true pose moves under sampled process noise, and the
robot reads every landmark in range of its true pose at each node.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from beltmp.belief import (
    Control,
    GaussianBelief,
    Observation,
    ekf_predict,
    ekf_update,
    landmarks_in_range,
    motion_mean,
    nees,
    observation_mean,
    perturb_observation,
)
from beltmp.motion import edge_controls
from beltmp.world import Scenario, wrap_angle

# Two-sided 95% band of the chi-square distribution with 3 degrees of freedom.
NEES_BAND_3DOF = (0.2158, 9.3484)

TRACE_COLUMNS = ("run", "step", "true_x", "true_y", "true_theta", "est_x", "est_y", "est_theta", "trace")


class DivergenceError(RuntimeError):
    pass


@dataclass
class TraceStep:
    true_pose: np.ndarray
    belief: GaussianBelief
    control: Optional[Control] = None
    observations: list[Observation] = field(default_factory=list)


@dataclass
class ExecutionTrace:
    run: int
    steps: list[TraceStep]
    goal_region: str
    final_region: Optional[str]
    success: bool
    diverged: bool = False

    @property
    def final_true(self) -> np.ndarray:
        return self.steps[-1].true_pose

    @property
    def final_belief(self) -> GaussianBelief:
        return self.steps[-1].belief

    @property
    def terminal_nees(self) -> float:
        return nees(self.final_true, self.final_belief)

    def nees_in_band(self, band=NEES_BAND_3DOF) -> bool:
        return band[0] <= self.terminal_nees <= band[1]


def _legs(report) -> list[dict]:
    data = report.to_dict() if hasattr(report, "to_dict") else report
    legs = [s["navigation"] for s in data["steps"] if s.get("navigation")]
    if not legs:
        raise ValueError("report has no navigation steps to execute")
    return legs


def _observe(true_pose, b: GaussianBelief, scenario: Scenario, rng, noisy: bool):
    noise = scenario.noise
    lm_xy = scenario.world.landmark_xy
    ids = [lm.id for lm in scenario.world.landmarks]
    obs = []
    for li in landmarks_in_range(lm_xy, true_pose[0], true_pose[1], noise.sensor_range):
        z_hat = observation_mean(true_pose, lm_xy[li])
        draw = rng.standard_normal(2) if noisy else np.zeros(2)
        z = perturb_observation(z_hat, draw, noise, ids[li])
        b = ekf_update(b, z, lm_xy[li], noise)
        obs.append(z)
    return b, obs


def execute_once(report, scenario: Scenario, run: int, seed: int, noisy: bool = True, abort_distance: float = 10.0, strict: bool = True) -> ExecutionTrace:
    legs = _legs(report)
    rng = np.random.default_rng([seed, run])
    noise = scenario.noise
    b = GaussianBelief.at(scenario.start, scenario.start_cov)
    if noisy:
        true = rng.multivariate_normal(b.mean, b.cov)
        true[2] = wrap_angle(true[2])
    else:
        true = b.mean.copy()
    steps = [TraceStep(true.copy(), b)]
    diverged = False

    def check():
        nonlocal diverged
        if math.hypot(*(true[:2] - b.mean[:2])) > abort_distance:
            diverged = True
            if strict:
                raise DivergenceError(f"run {run}: estimate drifted more than {abort_distance} m from the true pose")

    for leg in legs:
        b, obs = _observe(true, b, scenario, rng, noisy)
        if obs:
            steps.append(TraceStep(true.copy(), b, None, obs))
        for target in np.asarray(leg["poses"], dtype=float)[1:]:
            for u in edge_controls(b.mean, target, scenario.edge_step):
                moved = motion_mean(true, u).as_array()
                if noisy:
                    moved = moved + rng.multivariate_normal(np.zeros(3), noise.process_cov(u))
                    moved[2] = wrap_angle(moved[2])
                true = moved
                b = ekf_predict(b, u, noise)
                steps.append(TraceStep(true.copy(), b, u))
                check()
                if diverged:
                    break
            if diverged:
                break
            b, obs = _observe(true, b, scenario, rng, noisy)
            if obs:
                steps.append(TraceStep(true.copy(), b, None, obs))
            check()
            if diverged:
                break
        if diverged:
            break
    goal = legs[-1]["dest"]
    final_region = None
    for name, rect in scenario.world.regions.items():
        if rect.contains(true[0], true[1]):
            final_region = name
    success = (not diverged) and final_region == goal
    return ExecutionTrace(run, steps, goal, final_region, success, diverged)


def execute(report, scenario: Scenario, runs: int = 25, seed: int = 0, noisy: bool = True, abort_distance: float = 10.0, strict: bool = True) -> list[ExecutionTrace]:
    """Run the plan ``runs`` times; run ``r`` draws from the stream ``(seed, r)``."""
    if runs < 1:
        raise ValueError("runs must be at least 1")
    return [execute_once(report, scenario, r, seed, noisy, abort_distance, strict) for r in range(runs)]


def success_rate(traces: list[ExecutionTrace]) -> float:
    return sum(t.success for t in traces) / len(traces)


def planned_terminal_trace(report) -> float:
    return float(np.trace(np.asarray(_legs(report)[-1]["beliefs"][-1]["cov"])))


def traces_to_csv(traces: list[ExecutionTrace]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for t in traces:
        for k, s in enumerate(t.steps):
            w.writerow([t.run, k, *(f"{v:.6f}" for v in s.true_pose), *(f"{v:.6f}" for v in s.belief.mean), f"{s.belief.trace:.8f}"])
    return buf.getvalue()


def summary(traces: list[ExecutionTrace], report=None) -> dict:
    out = {
        "runs": len(traces),
        "success_rate": success_rate(traces),
        "diverged": sum(t.diverged for t in traces),
        "nees_in_band": sum(t.nees_in_band() for t in traces),
        "mean_nees": float(np.mean([t.terminal_nees for t in traces])),
    }
    if report is not None:
        planned = planned_terminal_trace(report)
        ratios = [t.final_belief.trace / planned for t in traces]
        out["trace_ratio_in_range"] = sum(0.5 <= r <= 2.0 for r in ratios)
    return out


__all__ = [
    "DivergenceError",
    "ExecutionTrace",
    "NEES_BAND_3DOF",
    "TRACE_COLUMNS",
    "TraceStep",
    "execute",
    "execute_once",
    "planned_terminal_trace",
    "success_rate",
    "summary",
    "traces_to_csv",
]
