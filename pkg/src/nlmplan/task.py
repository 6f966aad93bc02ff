"""Grounded STRIPS tasks and their transition semantics.

States are Python ints used as bitsets over the proposition ids of one
task: bit ``i`` is set iff proposition ``i`` holds. Proposition ids are laid
out predicate by predicate (declaration order), each predicate owning a
row-major block of ``|O| ** arity`` ids, so the layout can be reshaped
directly into per-arity object tensors.
"""
from __future__ import annotations

import itertools
import random
from dataclasses import dataclass
from functools import cached_property

from .pddl import ActionSchema, Atom, LiftedTask, Predicate, parse, parse_files

State = int


class PreconditionError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class GroundAction:
    id: int
    name: str
    args: tuple[str, ...]
    pre: tuple[int, ...]
    add: tuple[int, ...]
    delete: tuple[int, ...]
    pre_mask: int
    add_mask: int
    del_mask: int

    def __str__(self) -> str:
        return "(" + " ".join((self.name,) + self.args) + ")"


def _mask(ids) -> int:
    m = 0
    for i in ids:
        m |= 1 << i
    return m


@dataclass(frozen=True, eq=False)
class GroundTask:
    name: str
    domain_name: str
    objects: tuple[str, ...]
    predicates: tuple[Predicate, ...]
    offsets: tuple[int, ...]
    num_props: int
    actions: tuple[GroundAction, ...]
    init: State
    goal: tuple[int, ...]

    @property
    def num_objects(self) -> int:
        return len(self.objects)

    @cached_property
    def goal_mask(self) -> int:
        return _mask(self.goal)

    @cached_property
    def signature(self) -> tuple[tuple[str, int], ...]:
        return tuple((p.name, p.arity) for p in self.predicates)

    @cached_property
    def _object_index(self) -> dict[str, int]:
        return {o: i for i, o in enumerate(self.objects)}

    @cached_property
    def _pre_masks(self) -> list[int]:
        return [a.pre_mask for a in self.actions]

    @cached_property
    def achievers(self) -> tuple[tuple[int, ...], ...]:
        out: list[list[int]] = [[] for _ in range(self.num_props)]
        for a in self.actions:
            for p in a.add:
                out[p].append(a.id)
        return tuple(tuple(x) for x in out)

    @cached_property
    def consumers(self) -> tuple[tuple[int, ...], ...]:
        """Actions having each proposition as a precondition."""
        out: list[list[int]] = [[] for _ in range(self.num_props)]
        for a in self.actions:
            for p in a.pre:
                out[p].append(a.id)
        return tuple(tuple(x) for x in out)

    def prop_id(self, predicate: str, args: tuple[str, ...] = ()) -> int:
        for k, p in enumerate(self.predicates):
            if p.name == predicate:
                if len(args) != p.arity:
                    raise ValueError(f"{predicate} has arity {p.arity}")
                idx = 0
                n = len(self.objects)
                for a in args:
                    idx = idx * n + self._object_index[a]
                return self.offsets[k] + idx
        raise KeyError(predicate)

    def prop_name(self, i: int) -> str:
        if not 0 <= i < self.num_props:
            raise IndexError(i)
        n = len(self.objects)
        for k, p in enumerate(self.predicates):
            if self.offsets[k] <= i < self.offsets[k] + n**p.arity:
                break
        rest = i - self.offsets[k]
        args = []
        for _ in range(p.arity):
            args.append(self.objects[rest % n])
            rest //= n
        return "(" + " ".join([p.name] + args[::-1]) + ")"

    def state_from_atoms(self, atoms) -> State:
        s = 0
        for atom in atoms:
            s |= 1 << self.prop_id(atom.predicate, atom.args)
        return s

    def atoms(self, s: State) -> list[str]:
        return [self.prop_name(i) for i in bits(s)]

    def action_by_name(self, text: str) -> GroundAction:
        text = text.strip().lower()
        for a in self.actions:
            if str(a) == text:
                return a
        raise KeyError(text)


def bits(s: int) -> list[int]:
    out = []
    while s:
        low = s & -s
        out.append(low.bit_length() - 1)
        s ^= low
    return out


def _static_predicates(task: LiftedTask) -> set[str]:
    touched = {atom.predicate for a in task.actions for atom in a.add + a.delete}
    return {p.name for p in task.predicates} - touched


def ground(task: LiftedTask) -> GroundTask:
    """Instantiate all predicates and actions of `task` on its objects.

    Every ``p(o1..on)`` receives an id, including statically true or false
    ones. Ground actions whose static preconditions are false in the initial
    state are dropped; this only affects action ids, never proposition ids.
    """
    objects = tuple(task.objects)
    n = len(objects)
    obj_index = {o: i for i, o in enumerate(objects)}
    offsets = []
    total = 0
    for p in task.predicates:
        offsets.append(total)
        total += n ** p.arity
    pred_index = {p.name: k for k, p in enumerate(task.predicates)}

    def pid(predicate: str, args) -> int:
        idx = 0
        for a in args:
            idx = idx * n + obj_index[a]
        return offsets[pred_index[predicate]] + idx

    init_atoms = set(task.init)
    static = _static_predicates(task)
    actions: list[GroundAction] = []
    seen: set[tuple[str, tuple[str, ...]]] = set()
    for schema in task.actions:
        candidates = [task.objects_of_type(t) for t in schema.parameter_types]
        for combo in itertools.product(*candidates):
            key = (schema.name, combo)
            if key in seen:
                continue
            binding = dict(zip(schema.parameters, combo))
            grounded = _instantiate(schema, binding)
            if grounded is None:
                continue
            pre, add, dele = grounded
            if any(a.predicate in static and a not in init_atoms for a in pre):
                continue
            seen.add(key)
            pre_ids = tuple(sorted({pid(a.predicate, a.args) for a in pre}))
            add_ids = tuple(sorted({pid(a.predicate, a.args) for a in add}))
            del_ids = tuple(sorted({pid(a.predicate, a.args) for a in dele}))
            actions.append(
                GroundAction(
                    id=len(actions),
                    name=schema.name,
                    args=combo,
                    pre=pre_ids,
                    add=add_ids,
                    delete=del_ids,
                    pre_mask=_mask(pre_ids),
                    add_mask=_mask(add_ids),
                    del_mask=_mask(del_ids),
                )
            )
    init = _mask(pid(a.predicate, a.args) for a in task.init)
    goal = tuple(sorted({pid(a.predicate, a.args) for a in task.goal}))
    return GroundTask(
        name=task.problem_name,
        domain_name=task.domain_name,
        objects=objects,
        predicates=tuple(task.predicates),
        offsets=tuple(offsets),
        num_props=total,
        actions=tuple(actions),
        init=init,
        goal=goal,
    )


def _instantiate(schema: ActionSchema, binding: dict[str, str]):
    def sub(atom: Atom) -> Atom:
        return Atom(atom.predicate, tuple(binding.get(a, a) for a in atom.args))

    return [sub(a) for a in schema.pre], [sub(a) for a in schema.add], [sub(a) for a in schema.delete]


def load(domain_path, problem_path) -> GroundTask:
    return ground(parse_files(domain_path, problem_path))


def from_text(domain_text: str, problem_text: str) -> GroundTask:
    return ground(parse(domain_text, problem_text))


# --- semantics -------------------------------------------------------------


def applicable(s: State, task: GroundTask) -> list[int]:
    return [i for i, m in enumerate(task._pre_masks) if s & m == m]


def successor(s: State, action: GroundAction | int, task: GroundTask | None = None) -> State:
    """Apply `action` to `s`: deletes first, then adds."""
    if isinstance(action, int):
        if task is None:
            raise TypeError("an action id requires the task")
        action = task.actions[action]
    if s & action.pre_mask != action.pre_mask:
        raise PreconditionError(f"{action} is not applicable")
    return (s & ~action.del_mask) | action.add_mask


def successors(s: State, task: GroundTask) -> list[tuple[int, State]]:
    out = []
    for a in task.actions:
        m = a.pre_mask
        if s & m == m:
            out.append((a.id, (s & ~a.del_mask) | a.add_mask))
    return out


def is_goal(s: State, task: GroundTask, goal_mask: int | None = None) -> bool:
    g = task.goal_mask if goal_mask is None else goal_mask
    return s & g == g


def is_dead_end(s: State, task: GroundTask) -> bool:
    return not any(s & m == m for m in task._pre_masks)


def validate_plan(task: GroundTask, plan) -> bool:
    s = task.init
    for a in plan:
        action = task.actions[a] if isinstance(a, int) else a
        if s & action.pre_mask != action.pre_mask:
            return False
        s = (s & ~action.del_mask) | action.add_mask
    return is_goal(s, task)


def random_walk(task: GroundTask, length: int, seed: int = 0) -> list[tuple[State, int | None]]:
    """Uniform random walk from the initial state; stops early at dead-ends."""
    rng = random.Random(seed)
    s = task.init
    trace: list[tuple[State, int | None]] = [(s, None)]
    for _ in range(length):
        acts = applicable(s, task)
        if not acts:
            break
        a = rng.choice(acts)
        s = successor(s, a, task)
        trace.append((s, a))
    return trace


def format_plan(task: GroundTask, plan) -> str:
    return "".join(str(task.actions[a]) + "\n" for a in plan)
