"""Parser for the durative-action PDDL 2.1 subset with an ``:attachments`` block."""

from __future__ import annotations

from beltmp.pddl.model import (
    INDIRECT_ROLES,
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
    is_subtype,
)
from beltmp.pddl.sexpr import (
    PddlSyntaxError,
    SList,
    Sym,
    TypeMismatchError,
    UndeclaredSymbolError,
    UnsupportedConstructError,
    read,
    where,
)

COMPARATORS = {"=", ">", ">=", "<", "<="}
NUMERIC_EFFECTS = {"increase", "assign"}
TIME_SPECS = {("at", "start"): "start", ("at", "end"): "end", ("over", "all"): "all"}


def _expect_list(node, what: str) -> SList:
    if not isinstance(node, list):
        raise PddlSyntaxError(f"expected {what}, found {node!r}", *where(node))
    return node


def _expect_sym(node, what: str) -> Sym:
    if isinstance(node, list):
        raise PddlSyntaxError(f"expected {what}, found a list", *where(node))
    return node


def _parse_number(tok) -> float | None:
    if isinstance(tok, list):
        return None
    try:
        return float(tok)
    except ValueError:
        return None


def parse_typed_list(items, default: str = "object") -> list[TypedParam]:
    out: list[TypedParam] = []
    pending: list[Sym] = []
    i = 0
    while i < len(items):
        tok = _expect_sym(items[i], "a name")
        if tok == "-":
            if i + 1 >= len(items) or not pending:
                raise PddlSyntaxError("dangling '-' in typed list", *where(tok))
            type_tok = items[i + 1]
            if isinstance(type_tok, list):
                raise UnsupportedConstructError("either-types", *where(type_tok))
            out.extend(TypedParam(str(p), str(type_tok)) for p in pending)
            pending = []
            i += 2
            continue
        pending.append(tok)
        i += 1
    out.extend(TypedParam(str(p), default) for p in pending)
    return out


def _sections(node: SList, kind: str):
    if len(node) < 2 or node[0] != "define":
        raise PddlSyntaxError("expected (define ...)", *where(node))
    header = _expect_list(node[1], f"({kind} <name>)")
    if len(header) != 2 or header[0] != kind:
        raise PddlSyntaxError(f"expected ({kind} <name>)", *where(header))
    return str(header[1]), node[2:]


class _Scope:
    """Symbol tables used to validate schema bodies."""

    def __init__(self, predicates, functions, parents):
        self.predicates = predicates
        self.functions = functions
        self.parents = parents

    def check_args(self, kind, name, args, declared, env, node):
        if len(args) != len(declared):
            raise TypeMismatchError(
                f"{kind} {name!r} expects {len(declared)} arguments, got {len(args)} at {where(node)}"
            )
        for arg, param in zip(args, declared):
            if env is None:
                continue
            if arg.startswith("?"):
                if arg not in env:
                    raise UndeclaredSymbolError(f"free variable {arg!r} not among the parameters at {where(node)}")
                arg_type = env[arg]
            else:
                if arg not in env.get("__objects__", {}):
                    raise UndeclaredSymbolError(f"unknown object {arg!r} at {where(node)}")
                arg_type = env["__objects__"][arg]
            if not is_subtype(arg_type, param.type, self.parents):
                raise TypeMismatchError(
                    f"argument {arg!r} of type {arg_type!r} used where {param.type!r} is expected at {where(node)}"
                )


def _atom(node: SList, scope: _Scope, env) -> Atom:
    name = _expect_sym(node[0], "a predicate name")
    if name not in scope.predicates:
        raise UndeclaredSymbolError(f"undeclared predicate {name!r} at {where(node)}")
    args = tuple(str(_expect_sym(a, "an argument")) for a in node[1:])
    scope.check_args("predicate", name, args, scope.predicates[name], env, node)
    return Atom(str(name), args)


def _fluent(node, scope: _Scope, env) -> FluentTerm:
    node = _expect_list(node, "a function term")
    name = _expect_sym(node[0], "a function name")
    if name not in scope.functions:
        raise UndeclaredSymbolError(f"undeclared function {name!r} at {where(node)}")
    args = tuple(str(_expect_sym(a, "an argument")) for a in node[1:])
    scope.check_args("function", name, args, scope.functions[name], env, node)
    return FluentTerm(str(name), args)


def _expr(node, scope: _Scope, env):
    value = _parse_number(node)
    if value is not None:
        return value
    if not isinstance(node, list):
        raise UnsupportedConstructError(f"numeric expression {node!r}", *where(node))
    if node and node[0] in {"+", "-", "*", "/"}:
        raise UnsupportedConstructError("arithmetic expressions", *where(node))
    return _fluent(node, scope, env)


def _condition(node, scope: _Scope, env):
    node = _expect_list(node, "a condition")
    if not node:
        raise PddlSyntaxError("empty condition", *where(node))
    head = node[0]
    if head in COMPARATORS:
        if len(node) != 3:
            raise PddlSyntaxError("comparison needs two operands", *where(node))
        return Comparison(str(head), _expr(node[1], scope, env), _expr(node[2], scope, env))
    if head in {"not", "or", "imply", "forall", "exists", "when"}:
        raise UnsupportedConstructError(f"'{head}' in conditions", *where(node))
    return _atom(node, scope, env)


def _effect(node, scope: _Scope, env):
    node = _expect_list(node, "an effect")
    if not node:
        raise PddlSyntaxError("empty effect", *where(node))
    head = node[0]
    if head == "not":
        return Literal(_atom(_expect_list(node[1], "an atom"), scope, env), negated=True)
    if head in NUMERIC_EFFECTS:
        if len(node) != 3:
            raise PddlSyntaxError(f"{head} needs a function term and a value", *where(node))
        return NumericEffect(str(head), _fluent(node[1], scope, env), _expr(node[2], scope, env))
    if head in {"decrease", "scale-up", "scale-down", "when", "forall"}:
        raise UnsupportedConstructError(f"'{head}' effects", *where(node))
    return Literal(_atom(node, scope, env))


def _timed_items(node, scope, env, parse_item, allowed_times):
    node = _expect_list(node, "a conjunction")
    if not node:
        return []
    if node[0] == "and":
        out = []
        for child in node[1:]:
            out.extend(_timed_items(child, scope, env, parse_item, allowed_times))
        return out
    key = (node[0], node[1]) if len(node) == 3 and not isinstance(node[1], list) else None
    if key not in TIME_SPECS:
        raise PddlSyntaxError(
            "durative actions need 'at start', 'at end' or 'over all' annotations", *where(node)
        )
    time = TIME_SPECS[key]
    if time not in allowed_times:
        raise PddlSyntaxError(f"'{key[0]} {key[1]}' is not allowed here", *where(node))
    return [Timed(time, parse_item(node[2], scope, env))]


def _parse_action(node: SList, scope: _Scope) -> ActionSchema:
    if len(node) < 2:
        raise PddlSyntaxError("durative action needs a name", *where(node))
    name = str(_expect_sym(node[1], "an action name"))
    fields = {}
    i = 2
    while i < len(node):
        key = _expect_sym(node[i], "an action field")
        if i + 1 >= len(node):
            raise PddlSyntaxError(f"missing value for {key}", *where(key))
        fields[str(key)] = node[i + 1]
        i += 2
    unknown = set(fields) - {":parameters", ":duration", ":condition", ":effect"}
    if unknown:
        raise UnsupportedConstructError(f"action fields {sorted(unknown)}", *where(node))
    params = parse_typed_list(_expect_list(fields.get(":parameters", SList()), "a parameter list"))
    for p in params:
        if not p.name.startswith("?"):
            raise PddlSyntaxError(f"parameter {p.name!r} must start with '?'", *where(node))
        if p.type != "object" and p.type not in scope.parents:
            raise UndeclaredSymbolError(f"undeclared type {p.type!r} in action {name!r}")
    env = {p.name: p.type for p in params}
    if len({p.name for p in params}) != len(params):
        raise PddlSyntaxError(f"duplicate parameter in action {name!r}", *where(node))

    dur = fields.get(":duration")
    if dur is None:
        raise PddlSyntaxError(f"action {name!r} has no :duration", *where(node))
    dur = _expect_list(dur, "a duration constraint")
    value = _parse_number(dur[2]) if len(dur) == 3 else None
    if len(dur) != 3 or dur[0] != "=" or dur[1] != "?duration" or value is None:
        raise UnsupportedConstructError("duration must be (= ?duration <number>)", *where(dur))

    conditions = _timed_items(fields.get(":condition", SList()), scope, env, _condition, {"start", "end", "all"})
    effects = _timed_items(fields.get(":effect", SList()), scope, env, _effect, {"start", "end"})
    return ActionSchema(name, tuple(params), value, tuple(conditions), tuple(effects))


def _parse_signatures(items, what: str):
    out = []
    i = 0
    while i < len(items):
        node = items[i]
        if not isinstance(node, list):
            if node == "-" and i + 1 < len(items):
                # "(:functions (f) - number)": only numeric functions exist here
                if items[i + 1] != "number":
                    raise UnsupportedConstructError(f"{what} type {items[i + 1]!r}", *where(node))
                i += 2
                continue
            raise PddlSyntaxError(f"expected a {what} signature", *where(node))
        if not node:
            raise PddlSyntaxError(f"empty {what} signature", *where(node))
        out.append((str(_expect_sym(node[0], f"a {what} name")), tuple(parse_typed_list(node[1:]))))
        i += 1
    names = [n for n, _ in out]
    if len(set(names)) != len(names):
        raise PddlSyntaxError(f"duplicate {what} declaration")
    return out


def parse_domain(text: str) -> DomainDef:
    root = read(text)
    name, sections = _sections(root, "domain")
    requirements: tuple[str, ...] = ()
    types: list[TypedParam] = []
    predicates: list = []
    functions: list = []
    action_nodes: list[SList] = []
    for sec in sections:
        sec = _expect_list(sec, "a domain section")
        if not sec:
            raise PddlSyntaxError("empty section", *where(sec))
        key = sec[0]
        if key == ":requirements":
            requirements = tuple(str(r) for r in sec[1:])
        elif key == ":types":
            types = parse_typed_list(sec[1:])
        elif key == ":predicates":
            predicates = _parse_signatures(sec[1:], "predicate")
        elif key == ":functions":
            functions = _parse_signatures(sec[1:], "function")
        elif key == ":durative-action":
            action_nodes.append(sec)
        else:
            raise UnsupportedConstructError(f"domain section {key!r}", *where(sec))
    parents = {t.name: t.type for t in types}
    for t in types:
        if t.type != "object" and t.type not in parents:
            raise UndeclaredSymbolError(f"undeclared parent type {t.type!r}")
    for _, params in predicates + functions:
        for p in params:
            if p.type != "object" and p.type not in parents:
                raise UndeclaredSymbolError(f"undeclared type {p.type!r}")
    scope = _Scope(dict(predicates), dict(functions), parents)
    actions = [_parse_action(a, scope) for a in action_nodes]
    names = [a.name for a in actions]
    if len(set(names)) != len(names):
        raise PddlSyntaxError("duplicate action names")
    return DomainDef(
        name=name,
        requirements=requirements,
        types=tuple(types),
        predicates=tuple(predicates),
        functions=tuple(functions),
        actions=tuple(actions),
    )


def _parse_attachments(sec: SList, functions: dict) -> Attachments:
    direct: list[str] = []
    indirect: list[tuple[str, str]] = []
    trigger: list[str] = []
    for part in sec[1:]:
        part = _expect_list(part, "an attachment declaration")
        if not part:
            raise PddlSyntaxError("empty attachment declaration", *where(part))
        kind = part[0]
        if kind == ":direct":
            direct.extend(str(_expect_sym(n, "a function name")) for n in part[1:])
        elif kind == ":trigger":
            trigger.extend(str(_expect_sym(n, "a function name")) for n in part[1:])
        elif kind == ":indirect":
            for item in part[1:]:
                item = _expect_list(item, "(<function> <role>)")
                if len(item) != 2 or item[1] not in INDIRECT_ROLES:
                    raise PddlSyntaxError(
                        f"indirect entries are (<function> <role>) with role in {INDIRECT_ROLES}", *where(item)
                    )
                indirect.append((str(item[0]), str(item[1])))
        else:
            raise PddlSyntaxError(f"unknown attachment kind {kind!r}", *where(part))
    for n in direct + trigger + [n for n, _ in indirect]:
        if n not in functions:
            raise UndeclaredSymbolError(f"attachment names undeclared function {n!r}")
    tagged = direct + trigger + [n for n, _ in indirect]
    if len(set(tagged)) != len(tagged):
        raise PddlSyntaxError("a function may carry only one attachment tag", *where(sec))
    return Attachments(tuple(direct), tuple(indirect), tuple(trigger))


def parse_problem(text: str, domain: DomainDef | None = None) -> ProblemDef:
    """Parse a problem; with ``domain`` given, symbols and types are checked too."""
    root = read(text)
    name, sections = _sections(root, "problem")
    domain_name = ""
    objects: list[TypedParam] = []
    init_facts: list[Atom] = []
    init_values: list = []
    goal = []
    metric = "act-cost"
    attachments = Attachments()
    deferred: dict[str, SList] = {}
    for sec in sections:
        sec = _expect_list(sec, "a problem section")
        if not sec:
            raise PddlSyntaxError("empty section", *where(sec))
        key = sec[0]
        if key == ":domain":
            domain_name = str(sec[1])
        elif key == ":objects":
            objects = parse_typed_list(sec[1:])
        elif key in (":init", ":goal", ":attachments"):
            deferred[str(key)] = sec
        elif key == ":metric":
            if len(sec) != 3 or sec[1] != "minimize" or not isinstance(sec[2], list) or len(sec[2]) != 1:
                raise UnsupportedConstructError("only (:metric minimize (<fluent>)) is supported", *where(sec))
            metric = str(sec[2][0])
        else:
            raise UnsupportedConstructError(f"problem section {key!r}", *where(sec))

    if domain is not None:
        if domain_name and domain_name != domain.name:
            raise UndeclaredSymbolError(f"problem refers to domain {domain_name!r}, not {domain.name!r}")
        parents = domain.type_parent()
        for o in objects:
            if o.type != "object" and o.type not in parents:
                raise UndeclaredSymbolError(f"object {o.name!r} has undeclared type {o.type!r}")
        scope = _Scope(dict(domain.predicates), dict(domain.functions), parents)
        env = {"__objects__": {o.name: o.type for o in objects}}
    else:
        scope = _PermissiveScope()
        env = None
    if len({o.name for o in objects}) != len(objects):
        raise PddlSyntaxError("duplicate object names")

    if ":init" in deferred:
        for item in deferred[":init"][1:]:
            item = _expect_list(item, "an initial fact")
            if item and item[0] == "=":
                value = _parse_number(item[2]) if len(item) == 3 else None
                if value is None:
                    raise PddlSyntaxError("initial fluent values are (= (<f> args) <number>)", *where(item))
                init_values.append((_fluent(item[1], scope, env), value))
            else:
                init_facts.append(_atom(item, scope, env))
    if ":goal" in deferred:
        node = _expect_list(deferred[":goal"][1], "a goal")
        parts = node[1:] if node and node[0] == "and" else [node]
        goal = [_condition(p, scope, env) for p in parts]
    if ":attachments" in deferred:
        attachments = _parse_attachments(deferred[":attachments"], scope.functions)

    return ProblemDef(
        name=name,
        domain=domain_name,
        objects=tuple(objects),
        init_facts=tuple(init_facts),
        init_values=tuple(init_values),
        goal=tuple(goal),
        metric=metric,
        attachments=attachments,
    )


class _PermissiveScope(_Scope):
    """Accepts any symbol; used when no domain is available for checking."""

    class _Any(dict):
        def __contains__(self, key):
            return True

        def __getitem__(self, key):
            return None

    def __init__(self):
        super().__init__(self._Any(), self._Any(), {})

    def check_args(self, *args, **kwargs):
        return None
