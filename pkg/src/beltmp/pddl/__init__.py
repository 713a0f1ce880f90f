"""PDDL 2.1 subset: durative actions, numeric fluents, semantic-attachment tags."""

from beltmp.pddl.ground import DIRECT, FREE, INDIRECT, GroundAction, GroundedTask, TaskState, ground
from beltmp.pddl.model import (
    ActionSchema,
    Atom,
    Attachments,
    Comparison,
    DomainDef,
    FluentTerm,
    Literal,
    NumericEffect,
    ProblemDef,
    Timed,
    TypedParam,
    domain_to_pddl,
    problem_to_pddl,
)
from beltmp.pddl.parser import parse_domain, parse_problem
from beltmp.pddl.sexpr import (
    PddlError,
    PddlSyntaxError,
    TypeMismatchError,
    UndeclaredSymbolError,
    UnsupportedConstructError,
)

__all__ = [
    "ActionSchema",
    "Atom",
    "Attachments",
    "Comparison",
    "DIRECT",
    "DomainDef",
    "FREE",
    "FluentTerm",
    "GroundAction",
    "GroundedTask",
    "INDIRECT",
    "Literal",
    "NumericEffect",
    "PddlError",
    "PddlSyntaxError",
    "ProblemDef",
    "TaskState",
    "Timed",
    "TypeMismatchError",
    "TypedParam",
    "UndeclaredSymbolError",
    "UnsupportedConstructError",
    "domain_to_pddl",
    "ground",
    "parse_domain",
    "parse_problem",
    "problem_to_pddl",
    "with_targets",
]


def with_targets(problem: ProblemDef, targets, lift: str = "l", regions=None) -> ProblemDef:
    """Rewrite an office-style problem so documents wait in exactly ``targets``.

    Sets ``get`` to 1 for the targets and 0 elsewhere, ``pending`` to the
    target count, and the goal to every target collected plus the lift reached.
    """
    targets = [t.lower() for t in targets]
    if regions is None:
        regions = [o.name for o in problem.objects if o.type == "region"]
    unknown = set(targets) - set(regions)
    if unknown:
        raise UndeclaredSymbolError(f"unknown target regions {sorted(unknown)}")
    values = [
        (f, v)
        for f, v in problem.init_values
        if f.name not in ("get", "pending")
    ]
    values += [(FluentTerm("get", (r,)), 1.0 if r in targets else 0.0) for r in regions]
    values.append((FluentTerm("pending"), float(len(targets))))
    goal = tuple(Atom("collected", (t,)) for t in targets) + (Atom("reached", (lift.lower(),)),)
    return ProblemDef(
        name=f"{problem.domain or 'office'}-{'-'.join(targets) or 'none'}",
        domain=problem.domain,
        objects=problem.objects,
        init_facts=problem.init_facts,
        init_values=tuple(values),
        goal=goal,
        metric=problem.metric,
        attachments=problem.attachments,
    )
