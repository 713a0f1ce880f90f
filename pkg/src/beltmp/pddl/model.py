"""Lifted PDDL structures and their serialization back to text."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

INDIRECT_ROLES = ("cost", "trace")


@dataclass(frozen=True)
class TypedParam:
    name: str
    type: str


@dataclass(frozen=True)
class Atom:
    predicate: str
    args: tuple[str, ...] = ()

    def __str__(self):
        return _paren(self.predicate, *self.args)


@dataclass(frozen=True)
class FluentTerm:
    name: str
    args: tuple[str, ...] = ()

    def __str__(self):
        return _paren(self.name, *self.args)


Expr = Union[float, FluentTerm]


@dataclass(frozen=True)
class Comparison:
    op: str  # "=", ">", ">=" , "<", "<="
    lhs: Expr
    rhs: Expr

    def __str__(self):
        return _paren(self.op, _expr(self.lhs), _expr(self.rhs))


@dataclass(frozen=True)
class Literal:
    atom: Atom
    negated: bool = False

    def __str__(self):
        return f"(not {self.atom})" if self.negated else str(self.atom)


@dataclass(frozen=True)
class NumericEffect:
    op: str  # "increase" or "assign"
    fluent: FluentTerm
    value: Expr

    def __str__(self):
        return _paren(self.op, str(self.fluent), _expr(self.value))


Condition = Union[Atom, Comparison]
Effect = Union[Literal, NumericEffect]

TIME_KEYWORDS = {"start": "at start", "end": "at end", "all": "over all"}


@dataclass(frozen=True)
class Timed:
    """A condition or effect annotated with ``start``, ``end`` or ``all``."""

    time: str
    item: Union[Condition, Effect]

    def __str__(self):
        return f"({TIME_KEYWORDS[self.time]} {self.item})"


@dataclass(frozen=True)
class ActionSchema:
    name: str
    params: tuple[TypedParam, ...]
    duration: float
    conditions: tuple[Timed, ...]
    effects: tuple[Timed, ...]


@dataclass(frozen=True)
class DomainDef:
    name: str
    requirements: tuple[str, ...] = ()
    types: tuple[TypedParam, ...] = ()  # (type name, parent type)
    predicates: tuple[tuple[str, tuple[TypedParam, ...]], ...] = ()
    functions: tuple[tuple[str, tuple[TypedParam, ...]], ...] = ()
    actions: tuple[ActionSchema, ...] = ()

    def predicate(self, name: str):
        return dict(self.predicates).get(name)

    def function(self, name: str):
        return dict(self.functions).get(name)

    def action(self, name: str) -> ActionSchema:
        for a in self.actions:
            if a.name == name:
                return a
        raise KeyError(name)

    def type_parent(self) -> dict[str, str]:
        return {t.name: t.type for t in self.types}


@dataclass(frozen=True)
class Attachments:
    """Declared semantic-attachment roles of numeric fluents."""

    direct: tuple[str, ...] = ()
    indirect: tuple[tuple[str, str], ...] = ()  # (fluent name, role)
    trigger: tuple[str, ...] = ()


@dataclass(frozen=True)
class ProblemDef:
    name: str
    domain: str
    objects: tuple[TypedParam, ...] = ()
    init_facts: tuple[Atom, ...] = ()
    init_values: tuple[tuple[FluentTerm, float], ...] = ()
    goal: tuple[Condition, ...] = ()
    metric: str = "act-cost"
    attachments: Attachments = field(default_factory=Attachments)

    def objects_of(self, type_name: str, parents: dict[str, str]) -> list[str]:
        return [o.name for o in self.objects if is_subtype(o.type, type_name, parents)]


def is_subtype(t: str, ancestor: str, parents: dict[str, str]) -> bool:
    seen = set()
    while t not in seen:
        if t == ancestor:
            return True
        seen.add(t)
        if t not in parents:
            break
        t = parents[t]
    return ancestor == "object"


def _num(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def _expr(e: Expr) -> str:
    return str(e) if isinstance(e, FluentTerm) else _num(e)


def _paren(*parts) -> str:
    return "(" + " ".join(str(p) for p in parts) + ")"


def _typed(params) -> str:
    out: list[str] = []
    i = 0
    params = list(params)
    while i < len(params):
        j = i
        while j < len(params) and params[j].type == params[i].type:
            j += 1
        out.extend(p.name for p in params[i:j])
        out.extend(["-", params[i].type])
        i = j
    return " ".join(out)


def _conj(items) -> str:
    items = [str(i) for i in items]
    if len(items) == 1:
        return items[0]
    return "(and " + " ".join(items) + ")"


def domain_to_pddl(domain: DomainDef) -> str:
    lines = [f"(define (domain {domain.name})"]
    if domain.requirements:
        lines.append(f"  (:requirements {' '.join(domain.requirements)})")
    if domain.types:
        lines.append(f"  (:types {_typed(domain.types)})")
    if domain.predicates:
        body = " ".join(_paren(n, _typed(p)) if p else _paren(n) for n, p in domain.predicates)
        lines.append(f"  (:predicates {body})")
    if domain.functions:
        body = " ".join(_paren(n, _typed(p)) if p else _paren(n) for n, p in domain.functions)
        lines.append(f"  (:functions {body})")
    for a in domain.actions:
        lines.append(f"  (:durative-action {a.name}")
        lines.append(f"    :parameters ({_typed(a.params)})")
        lines.append(f"    :duration (= ?duration {_num(a.duration)})")
        lines.append(f"    :condition {_conj(a.conditions) if a.conditions else '(and)'}")
        lines.append(f"    :effect {_conj(a.effects) if a.effects else '(and)'})")
    lines.append(")")
    return "\n".join(lines) + "\n"


def problem_to_pddl(problem: ProblemDef) -> str:
    lines = [f"(define (problem {problem.name})", f"  (:domain {problem.domain})"]
    lines.append(f"  (:objects {_typed(problem.objects)})")
    init = [str(a) for a in problem.init_facts]
    init += [f"(= {f} {_num(v)})" for f, v in problem.init_values]
    lines.append("  (:init " + " ".join(init) + ")")
    lines.append(f"  (:goal {_conj(problem.goal) if problem.goal else '(and)'})")
    lines.append(f"  (:metric minimize ({problem.metric}))")
    att = problem.attachments
    if att.direct or att.indirect or att.trigger:
        parts = []
        if att.direct:
            parts.append(_paren(":direct", *att.direct))
        if att.indirect:
            parts.append(_paren(":indirect", *(_paren(n, r) for n, r in att.indirect)))
        if att.trigger:
            parts.append(_paren(":trigger", *att.trigger))
        lines.append("  (:attachments " + " ".join(parts) + ")")
    lines.append(")")
    return "\n".join(lines) + "\n"
