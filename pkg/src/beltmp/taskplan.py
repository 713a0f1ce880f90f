"""Forward best-first temporal planner with an external advisor.

Actions are executed one after another (a single robot never overlaps two
durative actions), so a plan's makespan is the sum of durations and its cost
is the final value of the metric fluent. Whenever an action's effects read an
indirect fluent, the advisor is asked once, at action start, for the values
of those fluents given the action's trigger arguments and the current belief
context.
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, field
from typing import Optional, Protocol

from beltmp.pddl.ground import (
    DIRECT,
    FREE,
    INDIRECT,
    GroundAction,
    GroundedTask,
    TaskState,
    _eval,
    check_numeric,
)


class PlanningError(RuntimeError):
    pass


class InapplicableActionError(PlanningError):
    pass


class UnreachableGoalError(PlanningError):
    pass


@dataclass(frozen=True)
class AdvisorQuery:
    origin: str
    dest: str
    context: Optional[int]


@dataclass(frozen=True)
class AdvisorReply:
    external: float  # motion cost, >= 0, +inf when no motion plan exists
    bound: float  # covariance trace at the goal node
    feasible: bool
    goal_context: Optional[int] = None


class Advisor(Protocol):
    def initial_context(self) -> Optional[int]: ...

    def query(self, q: AdvisorQuery) -> AdvisorReply: ...

    def lower_bound(self, origin: str, dest: str, context: Optional[int]) -> float: ...


@dataclass
class PlanStep:
    action: GroundAction
    start: float
    duration: float
    cost: float
    reply: Optional[AdvisorReply] = None

    @property
    def is_navigation(self) -> bool:
        return self.reply is not None


@dataclass
class TaskPlan:
    steps: list[PlanStep]
    total_cost: float
    expanded: int = 0
    generated: int = 0

    @property
    def goal_traces(self) -> list[float]:
        return [s.reply.bound for s in self.steps if s.reply is not None]

    @property
    def makespan(self) -> float:
        return sum(s.duration for s in self.steps)

    def labels(self) -> list[str]:
        return [s.action.label for s in self.steps]

    def __len__(self):
        return len(self.steps)


def _pre_ok(state: TaskState, action: GroundAction, time: str, fluents=None) -> bool:
    mask = action.pre_props[time]
    if state.props & mask != mask:
        return False
    return check_numeric(action.pre_num[time], state.fluents if fluents is None else fluents)


def applicable(state: TaskState, action: GroundAction) -> bool:
    return _pre_ok(state, action, "start")


def _apply_numeric(effects, fluents: list[float], snapshot) -> None:
    for op, target, value in effects:
        v = _eval(value, snapshot)
        if op == "assign":
            fluents[target] = v
        else:
            fluents[target] += v


def transition(
    task: GroundedTask, state: TaskState, action: GroundAction, advisor: Optional[Advisor]
) -> tuple[TaskState, Optional[AdvisorReply]]:
    """Successor state and the advisor reply consumed on the way (if any)."""
    if not _pre_ok(state, action, "start"):
        raise InapplicableActionError(f"{action.label} is not applicable")
    props = (state.props & ~action.delete["start"]) | action.add["start"]
    fluents = list(state.fluents)
    _apply_numeric(action.num_eff["start"], fluents, state.fluents)

    reply = None
    if action.queries_advisor:
        if action.trigger is None:
            raise PlanningError(f"{action.label} reads indirect fluents but has no trigger")
        if advisor is None:
            raise PlanningError(f"{action.label} needs an advisor")
        origin, dest = action.trigger[1]
        reply = advisor.query(AdvisorQuery(origin, dest, state.context))
        for idx, role in task.indirect_roles.items():
            fluents[idx] = reply.external if role == "cost" else reply.bound

    mid = TaskState(props, tuple(fluents), state.time, state.context)
    if not _pre_ok(mid, action, "all") or not _pre_ok(mid, action, "end"):
        raise InapplicableActionError(f"{action.label}: invariant or end condition violated")

    props = (props & ~action.delete["end"]) | action.add["end"]
    snapshot = tuple(fluents)
    _apply_numeric(action.num_eff["end"], fluents, snapshot)
    context = reply.goal_context if reply is not None else state.context
    return TaskState(props, tuple(fluents), state.time + action.duration, context), reply


def apply(task: GroundedTask, state: TaskState, action: GroundAction, advisor: Optional[Advisor] = None) -> TaskState:
    return transition(task, state, action, advisor)[0]


@dataclass
class _HeuristicTables:
    """Per-task data the relaxed-plan estimate reuses across states."""

    pre: list[tuple[int, ...]]  # proposition ids each action needs at any time point
    add: list[tuple[int, ...]]  # proposition ids each action adds
    pre_of: list[list[int]]  # actions needing each proposition
    navigation: list[tuple[int, str, str]]  # (action index, origin, dest) of advisor actions
    fixed_goal_costs: dict[int, float]
    additive: bool
    bounds: dict = field(default_factory=dict)  # memoized advisor lower bounds


def _bits(mask: int) -> tuple[int, ...]:
    out = []
    i = 0
    while mask:
        if mask & 1:
            out.append(i)
        mask >>= 1
        i += 1
    return tuple(out)


def _tables(task: GroundedTask) -> _HeuristicTables:
    pre, add = [], []
    for a in task.actions:
        pre.append(_bits(a.pre_props["start"] | a.pre_props["all"] | a.pre_props["end"]))
        add.append(_bits(a.add["start"] | a.add["end"]))
    pre_of: list[list[int]] = [[] for _ in task.propositions]
    for k, props in enumerate(pre):
        for p in props:
            pre_of[p].append(k)
    navigation = [(k, *a.trigger[1]) for k, a in enumerate(task.actions) if a.queries_advisor and a.trigger]
    fixed: dict[int, float] = {}
    achievers: dict[int, set[int]] = {}
    goal_bits = _bits(task.goal_props)
    for g in goal_bits:
        ids = {k for k, props in enumerate(add) if g in props}
        achievers[g] = ids
        fixed[g] = min((task.actions[k].fixed_cost for k in ids), default=math.inf)
    # Summing per-goal achiever costs is only sound when no action achieves two goals.
    sets = list(achievers.values())
    additive = all(not (a & b) for a, b in itertools.combinations(sets, 2))
    return _HeuristicTables(pre, add, pre_of, navigation, fixed, additive)


def _lower_bound(tables: _HeuristicTables, advisor: Advisor, origin: str, dest: str, context: Optional[int]) -> float:
    key = (id(advisor), origin, dest, context)
    value = tables.bounds.get(key)
    if value is None:
        value = tables.bounds[key] = advisor.lower_bound(origin, dest, context)
    return value


def heuristic(state: TaskState, task: GroundedTask, advisor: Optional[Advisor] = None, tables=None) -> float:
    """Delete-relaxation estimate of the remaining metric cost.

    Fixed action costs are counted through the cheapest achiever of every
    unmet goal fact. Advisor-priced actions are charged the advisor's lower
    bound and combined by h-max, so the estimate never exceeds the true
    remaining cost whenever the advisor's bounds are sound.
    """
    if task.is_goal(state):
        return 0.0
    tables = tables or _tables(task)
    actions = task.actions
    action_cost = [0.0] * len(actions)
    if advisor is not None:
        for k, origin, dest in tables.navigation:
            here = _pre_ok(state, actions[k], "start")
            action_cost[k] = _lower_bound(tables, advisor, origin, dest, state.context if here else None)

    # h-max by generalized Dijkstra: a proposition is final when popped, and an
    # action fires when its last precondition is popped, at that (maximal) cost.
    n_props = len(task.propositions)
    cost = [math.inf] * n_props
    done = [False] * n_props
    missing = [len(p) for p in tables.pre]
    heap: list[tuple[float, int]] = []
    for i in _bits(state.props):
        cost[i] = 0.0
        heap.append((0.0, i))

    def fire(k: int, reach: float) -> None:
        c = reach + action_cost[k]
        for q in tables.add[k]:
            if c < cost[q]:
                cost[q] = c
                heapq.heappush(heap, (c, q))

    for k, m in enumerate(missing):
        if m == 0:
            fire(k, 0.0)
    heapq.heapify(heap)
    pending_goals = {g for g in tables.fixed_goal_costs if not state.holds(g)}
    while heap and pending_goals:
        c, p = heapq.heappop(heap)
        if done[p]:
            continue
        done[p] = True
        pending_goals.discard(p)
        for k in tables.pre_of[p]:
            missing[k] -= 1
            if missing[k] == 0:
                fire(k, c)

    nav = 0.0
    fixed_terms = []
    for g, f in tables.fixed_goal_costs.items():
        if state.holds(g):
            continue
        nav = max(nav, cost[g])
        fixed_terms.append(f)
    if nav == math.inf or any(f == math.inf for f in fixed_terms):
        return math.inf
    fixed = sum(fixed_terms) if tables.additive else max(fixed_terms, default=0.0)
    return nav + fixed


def _state_key(task: GroundedTask, state: TaskState, free_idx: list[int]):
    return (state.props, tuple(state.fluents[i] for i in free_idx), state.context)


def plan(task: GroundedTask, advisor: Optional[Advisor] = None, max_expansions: int = 1_000_000) -> TaskPlan:
    """Minimum-cost plan by A* on the metric fluent with full duplicate detection."""
    free_idx = [i for i, t in enumerate(task.fluent_tags) if t == FREE]
    tables = _tables(task)
    metric = task.metric
    init = task.init
    if advisor is not None:
        init = TaskState(init.props, init.fluents, init.time, advisor.initial_context())

    @dataclass
    class Node:
        state: TaskState
        parent: Optional["Node"]
        step: Optional[PlanStep]
        labels: tuple[str, ...]

    h_cache: dict = {}

    def h_of(state: TaskState) -> float:
        key = _state_key(task, state, free_idx)
        if key not in h_cache:
            h_cache[key] = heuristic(state, task, advisor, tables)
        return h_cache[key]

    counter = itertools.count()
    root = Node(init, None, None, ())
    g0 = init.fluents[metric]
    h0 = h_of(init)
    if h0 == math.inf:
        raise UnreachableGoalError("goal is unreachable even in the relaxed task")
    heap = [(g0 + h0, g0, (), next(counter), root)]
    best_g = {_state_key(task, init, free_idx): g0}
    expanded = generated = 0
    while heap:
        _, g, _, _, node = heapq.heappop(heap)
        key = _state_key(task, node.state, free_idx)
        if best_g.get(key, math.inf) < g:
            continue
        if task.is_goal(node.state):
            steps = []
            n = node
            while n.step is not None:
                steps.append(n.step)
                n = n.parent
            steps.reverse()
            return TaskPlan(steps, g, expanded, generated)
        expanded += 1
        if expanded > max_expansions:
            raise PlanningError("expansion limit reached")
        for action in task.actions:
            if not applicable(node.state, action):
                continue
            try:
                succ, reply = transition(task, node.state, action, advisor)
            except InapplicableActionError:
                continue
            g2 = succ.fluents[metric]
            if g2 == math.inf:
                # infeasible here; the action stays available to other branches
                continue
            if g2 < g - 1e-12:
                raise PlanningError(f"metric decreased along {action.label}")
            key2 = _state_key(task, succ, free_idx)
            if best_g.get(key2, math.inf) <= g2:
                continue
            h2 = h_of(succ)
            if h2 == math.inf:
                continue
            best_g[key2] = g2
            generated += 1
            step = PlanStep(action, node.state.time, action.duration, g2 - g, reply)
            labels = node.labels + (action.label,)
            heapq.heappush(heap, (g2 + h2, g2, labels, next(counter), Node(succ, node, step, labels)))
    raise UnreachableGoalError("search space exhausted without reaching the goal")


def replay(task: GroundedTask, steps, advisor: Optional[Advisor] = None) -> tuple[TaskState, list[Optional[AdvisorReply]]]:
    """Execute ``steps`` (ground actions or plan steps) from the initial state."""
    state = task.init
    if advisor is not None:
        state = TaskState(state.props, state.fluents, state.time, advisor.initial_context())
    replies = []
    for s in steps:
        action = s.action if isinstance(s, PlanStep) else s
        state, reply = transition(task, state, action, advisor)
        replies.append(reply)
    return state, replies


def validate_replay(task: GroundedTask, p: TaskPlan, advisor: Optional[Advisor] = None, tol: float = 1e-9) -> TaskState:
    final, _ = replay(task, p.steps, advisor)
    if not task.is_goal(final):
        raise PlanningError("plan does not reach the goal")
    if abs(final.fluents[task.metric] - p.total_cost) > tol:
        raise PlanningError("replayed cost differs from the plan's cost")
    return final


def format_plan(p: TaskPlan) -> str:
    """Plan file text: one ``time: (action args) [duration, cost]`` line per step."""
    lines = [f"{s.start:.3f}: {s.action.label} [{s.duration:.3f}, {s.cost:.6f}]" for s in p.steps]
    lines.append(f"; total_cost {p.total_cost:.6f}")
    lines.append(f"; makespan {p.makespan:.3f}")
    return "\n".join(lines) + "\n"


def parse_plan_text(text: str) -> list[tuple[float, str, float, float]]:
    """Inverse of :func:`format_plan` for the step lines."""
    out = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith(";"):
            continue
        time, rest = line.split(":", 1)
        label, bracket = rest.rsplit("[", 1)
        dur, cost = bracket.rstrip("]").split(",")
        out.append((float(time), label.strip(), float(dur), float(cost)))
    return out


def fluent_partition(task: GroundedTask) -> dict[str, set[str]]:
    """Fluent names grouped by tag (direct / indirect / free)."""
    out: dict[str, set[str]] = {DIRECT: set(), INDIRECT: set(), FREE: set()}
    for (name, _), tag in zip(task.fluents, task.fluent_tags):
        out[tag].add(name)
    return out


__all__ = [
    "Advisor",
    "AdvisorQuery",
    "AdvisorReply",
    "InapplicableActionError",
    "PlanStep",
    "PlanningError",
    "TaskPlan",
    "UnreachableGoalError",
    "applicable",
    "apply",
    "format_plan",
    "heuristic",
    "parse_plan_text",
    "plan",
    "replay",
    "transition",
    "validate_replay",
]
