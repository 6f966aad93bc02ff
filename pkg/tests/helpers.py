"""Fixture builders and independent oracles shared by the tests."""
from __future__ import annotations

import itertools
import math
from collections import deque

import numpy as np

from nlmplan import generators as G
from nlmplan.task import GroundTask, from_text, successors


def micro_domain(num_props: int, actions: list[tuple[list[int], list[int], list[int]]]) -> str:
    """Domain over nullary predicates p0..p{n-1}; actions a1.. given as
    (pre, add, del) index lists."""
    preds = " ".join(f"(p{i})" for i in range(num_props))
    parts = [f"(define (domain micro) (:requirements :strips) (:predicates {preds})"]
    for k, (pre, add, dele) in enumerate(actions, start=1):
        pre_s = " ".join(f"(p{i})" for i in pre)
        eff = " ".join([f"(p{i})" for i in add] + [f"(not (p{i}))" for i in dele])
        parts.append(f"(:action a{k} :parameters () :precondition (and {pre_s}) :effect (and {eff}))")
    return "\n".join(parts) + ")"


def micro_problem(init: list[int], goal: list[int]) -> str:
    i = " ".join(f"(p{x})" for x in init)
    g = " ".join(f"(p{x})" for x in goal)
    return f"(define (problem m) (:domain micro) (:init {i}) (:goal (and {g})))"


def micro_task(num_props, actions, init, goal) -> GroundTask:
    return from_text(micro_domain(num_props, actions), micro_problem(init, goal))


def chain_task(length: int, goal_at: list[int] | None = None) -> GroundTask:
    """p0 -a1-> p1 -a2-> ... -> p{length}; each step deletes its source."""
    acts = [([i], [i + 1], [i]) for i in range(length)]
    return micro_task(length + 1, acts, [0], goal_at or [length])


def generated(domain: str, seed: int, **size) -> GroundTask:
    return from_text(G.DOMAINS[domain], G.generate(domain, seed, **size))


# --- oracles ---------------------------------------------------------------


def hadd_fixpoint(task: GroundTask, s: int, goal) -> float:
    """h_add by Bellman-Ford style sweeps until nothing changes."""
    cost = [0.0 if s >> p & 1 else math.inf for p in range(task.num_props)]
    changed = True
    while changed:
        changed = False
        for a in task.actions:
            c = 1.0 + sum(cost[p] for p in a.pre)
            for q in a.add:
                if c < cost[q]:
                    cost[q] = c
                    changed = True
    return sum(cost[g] for g in goal)


def relaxed_reaches(task: GroundTask, s: int, plan, goal) -> bool:
    """Apply `plan` actions delete-free until a fixpoint; goal reached?"""
    acts = [task.actions[a] for a in plan]
    cur = s
    progress = True
    while progress:
        progress = False
        for a in acts:
            if cur & a.pre_mask == a.pre_mask and cur | a.add_mask != cur:
                cur |= a.add_mask
                progress = True
    return all(cur >> g & 1 for g in goal)


def bfs_plan_length(task: GroundTask, limit: int = 200_000) -> float:
    """Shortest plan length by breadth-first search (inf if unsolvable)."""
    gm = task.goal_mask
    if task.init & gm == gm:
        return 0
    dist = {task.init: 0}
    queue = deque([task.init])
    while queue:
        s = queue.popleft()
        for _, t in successors(s, task):
            if t not in dist:
                dist[t] = dist[s] + 1
                if t & gm == gm:
                    return dist[t]
                if len(dist) > limit:
                    raise RuntimeError("state space too large for the BFS oracle")
                queue.append(t)
    return math.inf


def central_difference(f, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        hi = f()
        x[i] = old - eps
        lo = f()
        x[i] = old
        g[i] = (hi - lo) / (2 * eps)
    return g


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """Max-norm relative error of a whole gradient tensor.

    Elementwise ratios are meaningless for entries near 1e-8, where the
    central difference itself carries roughly 1e-11 of roundoff.
    """
    scale = max(float(np.max(np.abs(a), initial=0.0)), float(np.max(np.abs(b), initial=0.0)))
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(a - b)) / scale)


def all_permutations(n: int):
    return list(itertools.permutations(range(n)))
