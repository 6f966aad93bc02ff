"""Parser for the STRIPS (+ typing) fragment of PDDL.

Produces a :class:`LiftedTask`; types are compiled away into static unary
predicates so that downstream code only ever sees plain STRIPS.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

SUPPORTED_REQUIREMENTS = frozenset({":strips", ":typing"})
ROOT_TYPE = "object"


class PddlError(ValueError):
    """Raised for malformed PDDL input; carries a source position when known."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        if line is not None:
            message = f"{message} (line {line}, column {column})"
        super().__init__(message)


class UnsupportedRequirement(PddlError):
    def __init__(self, requirement: str, line: int | None = None, column: int | None = None):
        self.requirement = requirement
        super().__init__(f"unsupported requirement {requirement}", line, column)


@dataclass(frozen=True)
class Atom:
    predicate: str
    args: tuple[str, ...]

    def __str__(self) -> str:
        return "(" + " ".join((self.predicate,) + self.args) + ")"


@dataclass(frozen=True)
class Predicate:
    name: str
    arity: int
    static_type: bool = False  # compiled from a :types declaration


@dataclass(frozen=True)
class ActionSchema:
    name: str
    parameters: tuple[str, ...]
    parameter_types: tuple[str, ...]
    pre: tuple[Atom, ...]
    add: tuple[Atom, ...]
    delete: tuple[Atom, ...]


@dataclass
class LiftedTask:
    domain_name: str
    problem_name: str
    objects: list[str]
    predicates: list[Predicate]
    actions: list[ActionSchema]
    init: list[Atom]
    goal: list[Atom]
    object_types: dict[str, str] = field(default_factory=dict)
    type_parents: dict[str, str] = field(default_factory=dict)

    def predicate(self, name: str) -> Predicate:
        for p in self.predicates:
            if p.name == name:
                return p
        raise KeyError(name)

    def subtypes(self, type_name: str) -> set[str]:
        """`type_name` and every type that (transitively) derives from it."""
        out = {type_name}
        changed = True
        while changed:
            changed = False
            for child, parent in self.type_parents.items():
                if parent in out and child not in out:
                    out.add(child)
                    changed = True
        return out

    def objects_of_type(self, type_name: str) -> list[str]:
        if type_name == ROOT_TYPE:
            return list(self.objects)
        allowed = self.subtypes(type_name)
        return [o for o in self.objects if self.object_types.get(o, ROOT_TYPE) in allowed]


# --- s-expressions ---------------------------------------------------------


class Token(str):
    line: int
    column: int

    def __new__(cls, text: str, line: int, column: int):
        tok = super().__new__(cls, text)
        tok.line = line
        tok.column = column
        return tok


class SList(list):
    line: int = 0
    column: int = 0


def _tokenize(text: str) -> Iterator[Token]:
    line, col = 1, 1
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch == "\n":
            line, col = line + 1, 1
            i += 1
        elif ch.isspace():
            i += 1
            col += 1
        elif ch == ";":
            while i < n and text[i] != "\n":
                i += 1
        elif ch in "()":
            yield Token(ch, line, col)
            i += 1
            col += 1
        else:
            start, start_col = i, col
            while i < n and not text[i].isspace() and text[i] not in "();":
                i += 1
                col += 1
            yield Token(text[start:i].lower(), line, start_col)


def parse_sexpr(text: str) -> SList:
    stack: list[SList] = []
    result: SList | None = None
    for tok in _tokenize(text):
        if tok == "(":
            node = SList()
            node.line, node.column = tok.line, tok.column
            if stack:
                stack[-1].append(node)
            elif result is not None:
                raise PddlError("content after the top-level expression", tok.line, tok.column)
            stack.append(node)
        elif tok == ")":
            if not stack:
                raise PddlError("unbalanced ')'", tok.line, tok.column)
            node = stack.pop()
            if not stack:
                result = node
        else:
            if not stack:
                raise PddlError(f"unexpected token {tok!r} outside of an expression", tok.line, tok.column)
            stack[-1].append(tok)
    if stack:
        raise PddlError("unbalanced '(' (unexpected end of input)", stack[-1].line, stack[-1].column)
    if result is None:
        raise PddlError("empty input")
    return result


def _pos(node) -> tuple[int | None, int | None]:
    return getattr(node, "line", None), getattr(node, "column", None)


def _expect_list(node, what: str) -> SList:
    if not isinstance(node, SList):
        raise PddlError(f"expected a list for {what}, got {node!r}", *_pos(node))
    return node


def _typed_list(items: list, where: str) -> list[tuple[str, str]]:
    """Parse ``a b - t1 c - t2 d`` into [(a,t1), (b,t1), (c,t2), (d,object)]."""
    out: list[tuple[str, str]] = []
    pending: list[str] = []
    i = 0
    while i < len(items):
        item = items[i]
        if isinstance(item, SList):
            raise PddlError(f"unexpected list in {where}", *_pos(item))
        if item == "-":
            if i + 1 >= len(items) or isinstance(items[i + 1], SList):
                raise PddlError(f"missing type name after '-' in {where}", *_pos(item))
            type_name = str(items[i + 1])
            if type_name == "either":
                raise UnsupportedRequirement("either-types", *_pos(item))
            out.extend((name, type_name) for name in pending)
            pending = []
            i += 2
        else:
            pending.append(str(item))
            i += 1
    out.extend((name, ROOT_TYPE) for name in pending)
    return out


_REJECTED_CONNECTIVES = {
    "not": ":negative-preconditions",
    "or": ":disjunctive-preconditions",
    "imply": ":disjunctive-preconditions",
    "exists": ":existential-preconditions",
    "forall": ":universal-preconditions",
    "when": ":conditional-effects",
    "=": ":equality",
    "increase": ":action-costs",
    "decrease": ":numeric-fluents",
    "assign": ":numeric-fluents",
}


def _conjunction(node, where: str) -> list[SList]:
    """Flatten ``(and a b (and c))`` into its atomic literals."""
    node = _expect_list(node, where)
    if not node:
        return []
    head = node[0]
    if head == "and":
        out = []
        for child in node[1:]:
            out.extend(_conjunction(child, where))
        return out
    return [node]


def _atom(node, where: str) -> Atom:
    node = _expect_list(node, where)
    if not node or isinstance(node[0], SList):
        raise PddlError(f"malformed atom in {where}", *_pos(node))
    head = str(node[0])
    if head in _REJECTED_CONNECTIVES:
        raise UnsupportedRequirement(_REJECTED_CONNECTIVES[head], *_pos(node))
    args = []
    for a in node[1:]:
        if isinstance(a, SList):
            raise UnsupportedRequirement(":object-fluents", *_pos(a))
        args.append(str(a))
    return Atom(head, tuple(args))


def _check_requirements(section: SList) -> None:
    for req in section[1:]:
        if str(req) not in SUPPORTED_REQUIREMENTS:
            raise UnsupportedRequirement(str(req), *_pos(req))


@dataclass
class _Domain:
    name: str
    predicates: list[Predicate]
    actions: list[ActionSchema]
    constants: list[tuple[str, str]]
    types: list[tuple[str, str]]


def _parse_domain(text: str) -> _Domain:
    root = parse_sexpr(text)
    if len(root) < 2 or root[0] != "define":
        raise PddlError("domain must start with (define ...)", root.line, root.column)
    header = _expect_list(root[1], "domain header")
    if len(header) != 2 or header[0] != "domain":
        raise PddlError("expected (domain <name>)", header.line, header.column)
    dom = _Domain(str(header[1]), [], [], [], [])
    for section in root[2:]:
        section = _expect_list(section, "domain section")
        key = str(section[0]) if section else ""
        if key == ":requirements":
            _check_requirements(section)
        elif key == ":types":
            dom.types = _typed_list(section[1:], ":types")
        elif key == ":constants":
            dom.constants = _typed_list(section[1:], ":constants")
        elif key == ":predicates":
            for decl in section[1:]:
                decl = _expect_list(decl, "predicate declaration")
                if not decl:
                    raise PddlError("empty predicate declaration", decl.line, decl.column)
                params = _typed_list(decl[1:], f"predicate {decl[0]}")
                dom.predicates.append(Predicate(str(decl[0]), len(params)))
        elif key == ":action":
            dom.actions.append(_parse_action(section))
        elif key in (":functions", ":derived", ":durative-action", ":axiom"):
            raise UnsupportedRequirement(key, section.line, section.column)
        else:
            raise PddlError(f"unknown domain section {key!r}", section.line, section.column)
    return dom


def _parse_action(section: SList) -> ActionSchema:
    if len(section) < 2:
        raise PddlError("action without a name", section.line, section.column)
    name = str(section[1])
    fields: dict[str, object] = {}
    i = 2
    while i < len(section):
        key = section[i]
        if isinstance(key, SList) or not str(key).startswith(":") or i + 1 >= len(section):
            raise PddlError(f"malformed action {name}", *_pos(key))
        fields[str(key)] = section[i + 1]
        i += 2
    unknown = set(fields) - {":parameters", ":precondition", ":effect"}
    if unknown:
        key = sorted(unknown)[0]
        raise PddlError(f"unknown action field {key} in {name}", section.line, section.column)
    params = _typed_list(_expect_list(fields.get(":parameters", SList()), ":parameters"), f"{name} parameters")
    pre = [_atom(a, f"{name} precondition") for a in _conjunction(fields.get(":precondition", SList()), "precondition")]
    add, delete = [], []
    for lit in _conjunction(fields.get(":effect", SList()), "effect"):
        if lit and lit[0] == "not":
            if len(lit) != 2:
                raise PddlError(f"malformed negative effect in {name}", lit.line, lit.column)
            delete.append(_atom(lit[1], f"{name} effect"))
        else:
            add.append(_atom(lit, f"{name} effect"))
    variables = {p for p, _ in params}
    for atom in pre + add + delete:
        for arg in atom.args:
            if arg.startswith("?") and arg not in variables:
                raise PddlError(f"undeclared parameter {arg} in action {name}", section.line, section.column)
    return ActionSchema(
        name=name,
        parameters=tuple(p for p, _ in params),
        parameter_types=tuple(t for _, t in params),
        pre=tuple(pre),
        add=tuple(add),
        delete=tuple(delete),
    )


def parse(domain_text: str, problem_text: str) -> LiftedTask:
    """Parse a domain/problem pair into a :class:`LiftedTask`.

    Types become static unary predicates (appended after the declared
    predicates, one per non-root type) whose facts are added to the initial
    state.
    """
    dom = _parse_domain(domain_text)
    root = parse_sexpr(problem_text)
    if len(root) < 2 or root[0] != "define":
        raise PddlError("problem must start with (define ...)", root.line, root.column)
    header = _expect_list(root[1], "problem header")
    if len(header) != 2 or header[0] != "problem":
        raise PddlError("expected (problem <name>)", header.line, header.column)
    problem_name = str(header[1])
    objects: list[tuple[str, str]] = []
    init_nodes: list = []
    goal_nodes: list = []
    for section in root[2:]:
        section = _expect_list(section, "problem section")
        key = str(section[0]) if section else ""
        if key == ":domain":
            if len(section) != 2 or str(section[1]) != dom.name:
                raise PddlError(f"problem refers to a different domain (expected {dom.name})", section.line, section.column)
        elif key == ":requirements":
            _check_requirements(section)
        elif key == ":objects":
            objects = _typed_list(section[1:], ":objects")
        elif key == ":init":
            init_nodes = list(section[1:])
        elif key == ":goal":
            if len(section) != 2:
                raise PddlError("malformed :goal", section.line, section.column)
            goal_nodes = _conjunction(section[1], ":goal")
        elif key == ":metric":
            raise UnsupportedRequirement(":action-costs", section.line, section.column)
        else:
            raise PddlError(f"unknown problem section {key!r}", section.line, section.column)

    type_parents = {t: parent for t, parent in dom.types}
    declared_types = {ROOT_TYPE} | set(type_parents) | set(type_parents.values())
    all_objects: list[str] = []
    object_types: dict[str, str] = {}
    for name, type_name in dom.constants + objects:
        if type_name not in declared_types:
            raise PddlError(f"object {name} has undeclared type {type_name}")
        if name in object_types:
            raise PddlError(f"duplicate object {name}")
        all_objects.append(name)
        object_types[name] = type_name

    predicates = list(dom.predicates)
    names = {p.name for p in predicates}
    if len(names) != len(predicates):
        raise PddlError("duplicate predicate declaration")
    type_order = [t for t, _ in dom.types] + [p for _, p in dom.types]
    type_preds: list[str] = []
    for t in type_order:
        if t != ROOT_TYPE and t not in type_preds:
            type_preds.append(t)
    for t in type_preds:
        if t in names:
            raise PddlError(f"type {t} clashes with a predicate of the same name")
        predicates.append(Predicate(t, 1, static_type=True))

    task = LiftedTask(
        domain_name=dom.name,
        problem_name=problem_name,
        objects=all_objects,
        predicates=predicates,
        actions=list(dom.actions),
        init=[],
        goal=[],
        object_types=object_types,
        type_parents=type_parents,
    )
    arity = {p.name: p.arity for p in predicates}
    object_set = set(all_objects)

    def check(atom: Atom, where: str, allow_vars: bool) -> Atom:
        if atom.predicate not in arity:
            raise PddlError(f"undeclared predicate {atom.predicate} in {where}")
        if arity[atom.predicate] != len(atom.args):
            raise PddlError(
                f"predicate {atom.predicate} used with {len(atom.args)} arguments in {where}, declared arity {arity[atom.predicate]}"
            )
        for arg in atom.args:
            if arg.startswith("?"):
                if not allow_vars:
                    raise PddlError(f"variable {arg} in {where}")
            elif arg not in object_set:
                raise PddlError(f"unknown object {arg} in {where}")
        return atom

    for schema in dom.actions:
        for atom in schema.pre + schema.add + schema.delete:
            check(atom, f"action {schema.name}", True)
            if atom.predicate in type_preds and atom in schema.add + schema.delete:
                raise PddlError(f"action {schema.name} modifies type predicate {atom.predicate}")

    seen = set()
    for node in init_nodes:
        atom = check(_atom(node, ":init"), ":init", False)
        if atom not in seen:
            seen.add(atom)
            task.init.append(atom)
    for t in type_preds:
        for o in task.objects_of_type(t):
            atom = Atom(t, (o,))
            if atom not in seen:
                seen.add(atom)
                task.init.append(atom)
    goal_seen = set()
    for node in goal_nodes:
        atom = check(_atom(node, ":goal"), ":goal", False)
        if atom not in goal_seen:
            goal_seen.add(atom)
            task.goal.append(atom)
    return task


def parse_files(domain_path, problem_path) -> LiftedTask:
    with open(domain_path, encoding="utf-8") as f:
        domain_text = f.read()
    with open(problem_path, encoding="utf-8") as f:
        problem_text = f.read()
    return parse(domain_text, problem_text)
