"""Glue between the task planner and the belief-space motion planner.

A :class:`TmpSession` is the advisor the task planner talks to. Each query
names an origin region, a destination region and a chain node (the roadmap
node where the previous navigation leg ended, or the start node). The
session searches from that node to every pose instantiation of the
destination and answers with the cheapest one's cost and covariance trace.
Replies are memoized, so a session is also a frozen record of every motion
plan the task search looked at.
"""

from __future__ import annotations

import itertools
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from beltmp.belief import GaussianBelief
from beltmp.motion import (
    BeliefContext,
    BeliefSearch,
    CostConfig,
    MotionPlan,
    NoPathError,
    Roadmap,
    belief_bfs,
    build_roadmap,
    feasibility,
)
from beltmp.pddl import DomainDef, GroundedTask, ProblemDef, ground, with_targets
from beltmp.taskplan import (
    AdvisorQuery,
    AdvisorReply,
    PlanningError,
    TaskPlan,
    plan,
    replay,
)
from beltmp.world import Scenario

REPORT_VERSION = 1


class MissingCacheError(PlanningError):
    """A plan step has no stored motion plan: planner and advisor disagree."""


@dataclass(frozen=True)
class CachedLeg:
    reply: AdvisorReply
    motion: Optional[MotionPlan]
    start_node: int


class TmpSession:
    """Advisor backed by a roadmap, with per-branch belief chaining."""

    def __init__(
        self,
        scenario: Scenario,
        roadmap: Roadmap,
        config: CostConfig,
        seed: int,
        eta: Optional[float] = None,
        order: Optional[str] = None,
    ):
        if roadmap.start_node is None:
            raise ValueError("roadmap has no start node")
        self.scenario = scenario
        self.roadmap = roadmap
        self.config = CostConfig(config)
        self.seed = seed
        self.eta = scenario.eta if eta is None else float(eta)
        self.order = order or scenario.search_order
        self.ctx = BeliefContext.for_world(roadmap, scenario.world, scenario.noise, seed, scenario.edge_step)
        self.start_belief = GaussianBelief.at(scenario.start, scenario.start_cov)
        # Belief pinned at each chain node the first time a leg ends there.
        self.pinned: dict[int, GaussianBelief] = {roadmap.start_node: self.start_belief}
        self.cache: dict[tuple[str, str, int], CachedLeg] = {}
        self._searches: dict[int, BeliefSearch] = {}
        self.queries = 0
        self.searches = 0
        self._regions = scenario.world.regions
        self._xy = roadmap.nodes[:, :2]

    # advisor protocol -------------------------------------------------

    def initial_context(self) -> int:
        return self.roadmap.start_node

    def query(self, q: AdvisorQuery) -> AdvisorReply:
        self.queries += 1
        node = self.initial_context() if q.context is None else q.context
        key = (q.origin, q.dest, node)
        leg = self.cache.get(key)
        if leg is None:
            leg = self._solve_leg(q.origin, q.dest, node)
            self.cache[key] = leg
        return leg.reply

    def lower_bound(self, origin: str, dest: str, context: Optional[int]) -> float:
        if self.config == CostConfig.CONFIG4:
            return 0.0
        rect = self._regions[dest]
        if context is None:
            return rect.distance_to_rect(self._regions[origin])
        if self.config == CostConfig.CONFIG2:
            goals = self._goal_nodes(dest, context)
            return float(np.min(np.hypot(*(self._xy[goals] - self._xy[context]).T)))
        x, y = self._xy[context]
        return rect.distance_to_point(x, y)

    # internals --------------------------------------------------------

    def _goal_nodes(self, dest: str, node: int) -> list[int]:
        goals = list(self.roadmap.region_nodes[dest])
        if node not in goals and self._regions[dest].contains(*self._xy[node]):
            goals.append(node)
        return goals

    def _search_from(self, node: int) -> BeliefSearch:
        s = self._searches.get(node)
        if s is None:
            s = BeliefSearch(self.ctx, node, self.pinned[node], self.config, self.order)
            self._searches[node] = s
            self.searches += 1
        return s

    def _solve_leg(self, origin: str, dest: str, node: int) -> CachedLeg:
        if node not in self.pinned:
            raise MissingCacheError(f"chain node {node} has no established belief")
        goals = self._goal_nodes(dest, node)
        search = None if self.config == CostConfig.CONFIG2 else self._search_from(node)
        try:
            best, _ = belief_bfs(
                self.roadmap,
                node,
                self.pinned[node],
                goals,
                self.config,
                self.scenario.noise,
                self.seed,
                order=self.order,
                search=search,
            )
        except NoPathError:
            return CachedLeg(AdvisorReply(math.inf, math.inf, False, None), None, node)
        goal = best.goal
        if self.config == CostConfig.CONFIG2:
            self.pinned.setdefault(goal, self.start_belief)
        else:
            self.pinned.setdefault(goal, best.beliefs[-1])
        reply = AdvisorReply(best.cost, best.c_sigma_g, feasibility(best, self.eta), goal)
        return CachedLeg(reply, best, node)

    def leg(self, origin: str, dest: str, node: int) -> CachedLeg:
        try:
            return self.cache[(origin, dest, node)]
        except KeyError:
            raise MissingCacheError(f"no stored motion plan for {origin}->{dest} from node {node}") from None

    def plan_legs(self, p: TaskPlan) -> list[Optional[CachedLeg]]:
        """Stored leg of every plan step (None for non-navigation steps)."""
        node = self.initial_context()
        out: list[Optional[CachedLeg]] = []
        for step in p.steps:
            if not step.action.queries_advisor:
                out.append(None)
                continue
            origin, dest = step.action.trigger[1]
            leg = self.leg(origin, dest, node)
            out.append(leg)
            node = leg.reply.goal_context
        return out


def advise(session: TmpSession, query: AdvisorQuery) -> AdvisorReply:
    return session.query(query)


@dataclass
class Validation:
    plan: Optional[TaskPlan]
    violation: Optional[dict] = None

    @property
    def ok(self) -> bool:
        return self.plan is not None


def validate_plan(session: TmpSession, p: TaskPlan) -> Validation:
    """Accept ``p`` only if every navigation leg ends with trace within eta."""
    for i, (step, leg) in enumerate(zip(p.steps, session.plan_legs(p))):
        if leg is None:
            continue
        if not leg.reply.bound <= session.eta:
            return Validation(
                None,
                {"step": i, "action": step.action.label, "bound": leg.reply.bound, "eta": session.eta},
            )
    return Validation(p)


def rescore_plan(session: TmpSession, task: GroundedTask, p: TaskPlan) -> float:
    """Cost of ``p``'s action sequence when priced by ``session``."""
    final, _ = replay(task, [s.action for s in p.steps], session)
    return final.fluents[task.metric]


def permutation_costs(session: TmpSession, task: GroundedTask, targets: Sequence[str], lift: str = "l") -> dict:
    """Exhaustive oracle: cost of visiting ``targets`` in every order, then the lift."""
    robot = next(o for o, t in task.objects.items() if t == "robot")
    start = task.true_props(task.init)
    origin = next(args[1] for name, args in start if name == "robot_in")
    out = {}
    for order in itertools.permutations(targets):
        labels = []
        here = origin
        for t in order:
            labels.append(f"(goto_region {robot} {here} {t})")
            labels.append(f"(collect_document {robot} {t})")
            here = t
        labels.append(f"(prepare_delivery {robot})")
        labels.append(f"(goto_lift {robot} {here} {lift})")
        try:
            final, _ = replay(task, [task.action(lb) for lb in labels], session)
            out[order] = final.fluents[task.metric]
        except PlanningError:
            out[order] = math.inf
    return out


def _belief_dict(b: GaussianBelief) -> dict:
    return {"mean": b.mean.tolist(), "cov": b.cov.tolist()}


@dataclass
class SolveReport:
    scenario: str
    config: int
    density: float
    seed: int
    eta: float
    order: str
    targets: Optional[list[str]]
    status: str  # "ok", "infeasible" or "unreachable"
    steps: list[dict] = field(default_factory=list)
    total_cost: float = math.inf
    makespan: float = 0.0
    valid: bool = False
    violation: Optional[dict] = None
    priced_infeasible: list[int] = field(default_factory=list)
    roadmap: dict = field(default_factory=dict)
    stats: dict = field(default_factory=dict)
    time_s: float = 0.0
    plan: Optional[TaskPlan] = field(default=None, repr=False, compare=False)
    session: Optional[TmpSession] = field(default=None, repr=False, compare=False)

    @property
    def feasible(self) -> bool:
        return self.status == "ok"

    def navigation_steps(self) -> list[dict]:
        return [s["navigation"] for s in self.steps if s.get("navigation")]

    def to_dict(self, include_timing: bool = True) -> dict:
        out = {
            "version": REPORT_VERSION,
            "scenario": self.scenario,
            "config": self.config,
            "density": self.density,
            "seed": self.seed,
            "eta": self.eta,
            "order": self.order,
            "targets": self.targets,
            "status": self.status,
            "valid": self.valid,
            "violation": self.violation,
            "priced_infeasible": self.priced_infeasible,
            "total_cost": _finite(self.total_cost),
            "makespan": self.makespan,
            "steps": self.steps,
            "roadmap": self.roadmap,
            "stats": self.stats,
        }
        if include_timing:
            out["time_s"] = self.time_s
        return out

    def to_json(self, include_timing: bool = True) -> str:
        return json.dumps(self.to_dict(include_timing), indent=1) + "\n"


def _finite(x: float):
    return x if math.isfinite(x) else None


def load_report(path) -> dict:
    data = json.loads(Path(path).read_text())
    if data.get("version") != REPORT_VERSION:
        raise ValueError(f"unsupported report version {data.get('version')!r}")
    return data


def _step_dicts(session: TmpSession, p: TaskPlan) -> list[dict]:
    out = []
    rm = session.roadmap
    for step, leg in zip(p.steps, session.plan_legs(p)):
        d = {
            "action": step.action.label,
            "start": step.start,
            "duration": step.duration,
            "cost": step.cost,
            "navigation": None,
        }
        if leg is not None:
            origin, dest = step.action.trigger[1]
            m = leg.motion
            d["navigation"] = {
                "origin": origin,
                "dest": dest,
                "start_node": leg.start_node,
                "goal_node": leg.reply.goal_context,
                "external": leg.reply.external,
                "bound": leg.reply.bound,
                "feasible": leg.reply.feasible,
                "nodes": m.nodes,
                "poses": rm.nodes[m.nodes].tolist(),
                "beliefs": [_belief_dict(b) for b in m.beliefs],
                "length": m.length,
                "c_sigma": m.c_sigma,
                "c_sigma_g": m.c_sigma_g,
            }
        out.append(d)
    return out


def prepare_task(domain: DomainDef, problem: ProblemDef, targets: Optional[Sequence[str]] = None) -> GroundedTask:
    if targets is not None:
        problem = with_targets(problem, targets)
    return ground(domain, problem)


def solve(
    scenario: Scenario,
    domain: DomainDef,
    problem: ProblemDef,
    config: CostConfig,
    seed: int,
    eta: Optional[float] = None,
    density: Optional[float] = None,
    targets: Optional[Sequence[str]] = None,
    roadmap: Optional[Roadmap] = None,
    order: Optional[str] = None,
) -> SolveReport:
    """Build a roadmap, plan with the belief advisor, then validate against eta.

    Raises :class:`~beltmp.taskplan.UnreachableGoalError` when no task plan
    reaches the goal through reachable roadmap nodes.
    """
    # CPU time of this process, so concurrent sweep workers do not inflate each other's timings
    t0 = time.process_time()
    density = scenario.density if density is None else float(density)
    if roadmap is None:
        roadmap = build_roadmap(
            scenario.world,
            density,
            scenario.per_region,
            seed,
            start=scenario.start,
            k=scenario.knn,
            collision_step=scenario.collision_step,
        )
    task = prepare_task(domain, problem, targets)
    session = TmpSession(scenario, roadmap, config, seed, eta, order)
    p = plan(task, session)
    validation = validate_plan(session, p)
    legs = session.plan_legs(p)
    priced = [i for i, leg in enumerate(legs) if leg is not None and not leg.reply.feasible]
    elapsed = time.process_time() - t0
    return SolveReport(
        scenario=scenario.name,
        config=int(session.config),
        density=density,
        seed=seed,
        eta=session.eta,
        order=session.order,
        targets=list(targets) if targets is not None else None,
        status="ok" if validation.ok else "infeasible",
        steps=_step_dicts(session, p),
        total_cost=p.total_cost,
        makespan=p.makespan,
        valid=validation.ok,
        violation=validation.violation,
        priced_infeasible=priced,
        roadmap={"nodes": roadmap.n_nodes, "edges": roadmap.n_edges, "samples": roadmap.n_samples},
        stats={
            "expanded": p.expanded,
            "generated": p.generated,
            "queries": session.queries,
            "searches": session.searches,
            "cached_legs": len(session.cache),
        },
        time_s=elapsed,
        plan=p,
        session=session,
    )


__all__ = [
    "CachedLeg",
    "MissingCacheError",
    "SolveReport",
    "TmpSession",
    "Validation",
    "advise",
    "load_report",
    "permutation_costs",
    "prepare_task",
    "rescore_plan",
    "solve",
    "validate_plan",
]
