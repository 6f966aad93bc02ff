"""Delete-relaxation heuristics, their discounted form, and shaping potentials."""
from __future__ import annotations

import heapq
import math
from typing import Iterable, Sequence

from .task import GroundTask, State, bits

INF = math.inf
HEURISTIC_IDS = ("blind", "hadd", "hff")
SHAPING_IDS = ("none", "hadd", "hff")


def h_blind(s: State | None = None) -> float:
    # Constant 1, goal states included.
    return 1.0


def relaxed_costs(s: State, goal: Sequence[int], task: GroundTask):
    """Additive costs and best supporters under the delete relaxation.

    Generalized Dijkstra over propositions with unit action costs. Stops once
    every goal proposition is settled; all propositions cheaper than the
    costliest goal are final by then, as are their supporters. Among
    equal-cost achievers the lowest action id wins.

    Returns ``(cost, supporter)`` lists indexed by proposition id.
    """
    n = task.num_props
    cost = [INF] * n
    supporter = [-1] * n
    done = [False] * n
    actions = task.actions
    consumers = task.consumers
    remaining_pre = [len(a.pre) for a in actions]
    pre_sum = [0.0] * len(actions)
    pending_goals = set(goal)
    heap: list[tuple[float, int]] = []

    for p in bits(s):
        cost[p] = 0.0
        heap.append((0.0, p))
    heapq.heapify(heap)

    def fire(a: int, c: float) -> None:
        for q in actions[a].add:
            if c < cost[q] or (c == cost[q] and a < supporter[q] and not done[q]):
                cost[q] = c
                supporter[q] = a
                heapq.heappush(heap, (c, q))

    for a in actions:
        if not a.pre:
            fire(a.id, 1.0)

    while heap and pending_goals:
        c, p = heapq.heappop(heap)
        if done[p] or c > cost[p]:
            continue
        done[p] = True
        pending_goals.discard(p)
        for a in consumers[p]:
            remaining_pre[a] -= 1
            pre_sum[a] += c
            if remaining_pre[a] == 0:
                fire(a, pre_sum[a] + 1.0)
    return cost, supporter


def h_add(s: State, goal: Iterable[int], task: GroundTask) -> float:
    goal = tuple(goal)
    cost, _ = relaxed_costs(s, goal, task)
    total = 0.0
    for g in goal:
        total += cost[g]
    return total


def h_ff(s: State, goal: Iterable[int], task: GroundTask) -> tuple[float, frozenset[int]]:
    """Relaxed-plan heuristic: returns (value, relaxed plan action ids)."""
    goal = tuple(goal)
    cost, supporter = relaxed_costs(s, goal, task)
    if any(cost[g] == INF for g in goal):
        return INF, frozenset()
    plan: set[int] = set()
    open_goals = [g for g in goal if cost[g] > 0]
    marked = set(open_goals)
    actions = task.actions
    while open_goals:
        p = open_goals.pop()
        a = supporter[p]
        if a in plan:
            continue
        plan.add(a)
        for q in actions[a].pre:
            if cost[q] > 0 and q not in marked:
                marked.add(q)
                open_goals.append(q)
    return float(len(plan)), frozenset(plan)


def discounted(h: float, gamma: float) -> float:
    """Discounted cost of an h-step unit-cost path: (1 - gamma**h) / (1 - gamma)."""
    if not 0.0 <= gamma < 1.0:
        raise ValueError(f"gamma must lie in [0, 1), got {gamma}")
    if h < 0:
        raise ValueError(f"heuristic values are non-negative, got {h}")
    if h == INF:
        return 1.0 / (1.0 - gamma)
    if h == 0:
        return 0.0
    if gamma == 0.0:
        return 1.0
    return -math.expm1(h * math.log(gamma)) / (1.0 - gamma)


def evaluate(name: str, s: State, task: GroundTask, goal: Sequence[int] | None = None) -> float:
    if goal is None:
        goal = task.goal
    if name == "blind":
        return h_blind(s)
    if name == "hadd":
        return h_add(s, goal, task)
    if name == "hff":
        return h_ff(s, goal, task)[0]
    if name == "zero":
        return 0.0
    raise ValueError(f"unknown heuristic {name!r}; expected one of {HEURISTIC_IDS}")


def potential(s: State, base: str, gamma: float, task: GroundTask, goal: Sequence[int] | None = None) -> float:
    """Shaping potential: the negated discounted base heuristic ("none" gives 0)."""
    if base == "none":
        return 0.0
    return -discounted(evaluate(base, s, task, goal), gamma)


def shaped_reward(gamma: float, phi_s: float, phi_s2: float) -> float:
    """Unit-cost step reward (-1) plus the potential difference."""
    return -1.0 + gamma * phi_s2 - phi_s


class Heuristic:
    """State -> value callable used by the search algorithms."""

    name = "heuristic"

    def __call__(self, s: State) -> float:
        raise NotImplementedError

    def many(self, states: Sequence[State]) -> list[float]:
        return [self(s) for s in states]


class ClassicalHeuristic(Heuristic):
    def __init__(self, name: str, task: GroundTask):
        if name not in HEURISTIC_IDS + ("zero",):
            raise ValueError(f"unknown heuristic {name!r}; expected one of {HEURISTIC_IDS}")
        self.name = name
        self.task = task

    def __call__(self, s: State) -> float:
        return evaluate(self.name, s, self.task)


class FunctionHeuristic(Heuristic):
    def __init__(self, fn, name: str = "custom"):
        self.fn = fn
        self.name = name

    def __call__(self, s: State) -> float:
        return self.fn(s)


class PotentialCache:
    """Memoizes potentials of one task; purely an optimization."""

    def __init__(self, task: GroundTask, base: str, gamma: float, max_size: int = 200_000):
        self.task = task
        self.base = base
        self.gamma = gamma
        self.max_size = max_size
        self._cache: dict[State, float] = {}

    def __call__(self, s: State) -> float:
        v = self._cache.get(s)
        if v is None:
            if len(self._cache) >= self.max_size:
                self._cache.clear()
            v = potential(s, self.base, self.gamma, self.task)
            self._cache[s] = v
        return v
