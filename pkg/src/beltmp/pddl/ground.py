"""Grounding: substitute objects into schemas and index everything."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional

from beltmp.pddl.model import (
    ActionSchema,
    Atom,
    Comparison,
    DomainDef,
    FluentTerm,
    Literal,
    NumericEffect,
    ProblemDef,
)
from beltmp.pddl.sexpr import TypeMismatchError, UndeclaredSymbolError

DIRECT, INDIRECT, FREE = "direct", "indirect", "free"


@dataclass(frozen=True)
class TaskState:
    """Propositions as a bit set, numeric fluents, elapsed time.

    ``context`` is the belief-context handle of the motion layer (the chain
    node the robot stands on); the task layer treats it as opaque.
    """

    props: int
    fluents: tuple[float, ...]
    time: float = 0.0
    context: Optional[int] = None

    def holds(self, prop: int) -> bool:
        return bool(self.props >> prop & 1)


# Ground numeric expressions are ("c", value) or ("f", fluent index).
def _eval(expr, fluents) -> float:
    return expr[1] if expr[0] == "c" else fluents[expr[1]]


_COMPARE = {
    "=": lambda a, b: abs(a - b) <= 1e-9,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
}


def check_numeric(conds, fluents) -> bool:
    return all(_COMPARE[op](_eval(lhs, fluents), _eval(rhs, fluents)) for op, lhs, rhs in conds)


@dataclass
class GroundAction:
    name: str
    args: tuple[str, ...]
    duration: float
    pre_props: dict[str, int]  # time -> bitmask
    pre_num: dict[str, list]  # time -> [(op, lhs, rhs)]
    add: dict[str, int]
    delete: dict[str, int]
    num_eff: dict[str, list]  # time -> [(op, fluent idx, expr)]
    trigger: Optional[tuple[int, tuple[str, ...]]] = None  # (fluent idx, ground args)
    queries_advisor: bool = False
    fixed_cost: float = 0.0

    @property
    def label(self) -> str:
        return "(" + " ".join((self.name,) + self.args) + ")"

    def __repr__(self):
        return f"GroundAction{self.label}"


@dataclass
class GroundedTask:
    propositions: list[tuple[str, tuple[str, ...]]]
    fluents: list[tuple[str, tuple[str, ...]]]
    fluent_tags: list[str]
    actions: list[GroundAction]
    init: TaskState
    goal_props: int
    goal_num: list
    metric: int  # fluent index minimized
    indirect_roles: dict[int, str] = field(default_factory=dict)
    trigger_fluents: set[int] = field(default_factory=set)
    objects: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self.prop_index = {p: i for i, p in enumerate(self.propositions)}
        self.fluent_index = {f: i for i, f in enumerate(self.fluents)}

    def fluent(self, name: str, *args: str) -> int:
        return self.fluent_index[(name, tuple(args))]

    def prop(self, name: str, *args: str) -> int:
        return self.prop_index[(name, tuple(args))]

    def is_goal(self, state: TaskState) -> bool:
        return (state.props & self.goal_props) == self.goal_props and check_numeric(self.goal_num, state.fluents)

    def action(self, label: str) -> GroundAction:
        for a in self.actions:
            if a.label == label:
                return a
        raise KeyError(label)

    def true_props(self, state: TaskState) -> list[tuple[str, tuple[str, ...]]]:
        return [p for i, p in enumerate(self.propositions) if state.holds(i)]


def _instances(signature, problem: ProblemDef, parents):
    pools = [problem.objects_of(p.type, parents) for p in signature]
    return itertools.product(*pools)


def ground(domain: DomainDef, problem: ProblemDef) -> GroundedTask:
    parents = domain.type_parent()
    objects = {o.name: o.type for o in problem.objects}

    propositions = []
    for name, sig in domain.predicates:
        propositions.extend((name, tuple(args)) for args in _instances(sig, problem, parents))
    fluents = []
    for name, sig in domain.functions:
        fluents.extend((name, tuple(args)) for args in _instances(sig, problem, parents))
    prop_index = {p: i for i, p in enumerate(propositions)}
    fluent_index = {f: i for i, f in enumerate(fluents)}

    att = problem.attachments
    direct = set(att.direct)
    indirect = dict(att.indirect)
    trigger_names = set(att.trigger)
    tags = []
    indirect_roles = {}
    trigger_fluents = set()
    for i, (name, _) in enumerate(fluents):
        if name in direct:
            tags.append(DIRECT)
        elif name in indirect:
            tags.append(INDIRECT)
            indirect_roles[i] = indirect[name]
        else:
            tags.append(FREE)
            if name in trigger_names:
                trigger_fluents.add(i)

    def prop_id(atom: Atom, binding) -> int:
        key = (atom.predicate, tuple(binding.get(a, a) for a in atom.args))
        try:
            return prop_index[key]
        except KeyError:
            raise TypeMismatchError(f"{key} does not ground to a typed proposition") from None

    def fluent_id(term: FluentTerm, binding) -> int:
        key = (term.name, tuple(binding.get(a, a) for a in term.args))
        try:
            return fluent_index[key]
        except KeyError:
            raise TypeMismatchError(f"{key} does not ground to a typed fluent") from None

    def expr(e, binding):
        return ("f", fluent_id(e, binding)) if isinstance(e, FluentTerm) else ("c", float(e))

    def ground_action(schema: ActionSchema, values) -> GroundAction:
        binding = {p.name: v for p, v in zip(schema.params, values)}
        times = ("start", "all", "end")
        pre_props = {t: 0 for t in times}
        pre_num: dict[str, list] = {t: [] for t in times}
        add = {"start": 0, "end": 0}
        delete = {"start": 0, "end": 0}
        num_eff: dict[str, list] = {"start": [], "end": []}
        for timed in schema.conditions:
            c = timed.item
            if isinstance(c, Comparison):
                pre_num[timed.time].append((c.op, expr(c.lhs, binding), expr(c.rhs, binding)))
            else:
                pre_props[timed.time] |= 1 << prop_id(c, binding)
        trigger = None
        queries = False
        fixed = 0.0
        for timed in schema.effects:
            e = timed.item
            if isinstance(e, Literal):
                bit = 1 << prop_id(e.atom, binding)
                if e.negated:
                    delete[timed.time] |= bit
                else:
                    add[timed.time] |= bit
                continue
            assert isinstance(e, NumericEffect)
            target = fluent_id(e.fluent, binding)
            value = expr(e.value, binding)
            num_eff[timed.time].append((e.op, target, value))
            if target in trigger_fluents and e.op == "increase" and trigger is None:
                trigger = (target, fluents[target][1])
            if value[0] == "f" and tags[value[1]] == INDIRECT:
                queries = True
            if fluents[target][0] == problem.metric and e.op == "increase" and value[0] == "c":
                fixed += value[1]
        return GroundAction(
            name=schema.name,
            args=tuple(values),
            duration=schema.duration,
            pre_props=pre_props,
            pre_num=pre_num,
            add=add,
            delete=delete,
            num_eff=num_eff,
            trigger=trigger,
            queries_advisor=queries,
            fixed_cost=fixed,
        )

    actions = []
    for schema in domain.actions:
        for values in _instances(schema.params, problem, parents):
            actions.append(ground_action(schema, values))

    init_props = 0
    for atom in problem.init_facts:
        init_props |= 1 << prop_id(atom, {})
    init_fluents = [0.0] * len(fluents)
    for term, value in problem.init_values:
        init_fluents[fluent_id(term, {})] = float(value)

    goal_props = 0
    goal_num = []
    for c in problem.goal:
        if isinstance(c, Comparison):
            goal_num.append((c.op, expr(c.lhs, {}), expr(c.rhs, {})))
        else:
            goal_props |= 1 << prop_id(c, {})

    metric_key = (problem.metric, ())
    if metric_key not in fluent_index:
        raise UndeclaredSymbolError(f"metric fluent {problem.metric!r} is not declared")

    return GroundedTask(
        propositions=propositions,
        fluents=fluents,
        fluent_tags=tags,
        actions=actions,
        init=TaskState(init_props, tuple(init_fluents)),
        goal_props=goal_props,
        goal_num=goal_num,
        metric=fluent_index[metric_key],
        indirect_roles=indirect_roles,
        trigger_fluents=trigger_fluents,
        objects=objects,
    )
