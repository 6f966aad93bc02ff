"""A*, greedy best-first search and greedy best-first lookahead search.

All three count heuristic evaluations exactly: one per distinct generated
state whose heuristic value is computed (the initial state included), and
stop with ``limit_reached`` the moment that counter hits ``eval_limit``.
OPEN ties are broken first-in first-out.
"""
from __future__ import annotations

import heapq
import math
import time
from dataclasses import dataclass, field

from .heuristics import Heuristic, h_ff
from .task import GroundTask, State, is_goal, successors

SOLVED = "solved"
EXHAUSTED = "exhausted"
LIMIT_REACHED = "limit_reached"
ALGORITHMS = ("astar", "gbfs", "gbfls")
DEFAULT_EVAL_LIMIT = 100_000


@dataclass
class SearchConfig:
    algorithm: str = "gbfs"
    eval_limit: int = DEFAULT_EVAL_LIMIT
    lookahead_factor: int = 5
    lookahead_fallback: int = 50

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown search algorithm {self.algorithm!r}")
        if self.eval_limit <= 0:
            raise ValueError("eval_limit must be positive")


@dataclass
class SearchResult:
    status: str
    plan: list[int] = field(default_factory=list)
    evaluations: int = 0
    expansions: int = 0
    seconds: float = 0.0
    lookahead_depth: int | None = None

    @property
    def plan_length(self) -> int:
        return len(self.plan) if self.status == SOLVED else 0

    @property
    def solved(self) -> bool:
        return self.status == SOLVED


class _LimitReached(Exception):
    pass


class _Evaluator:
    """Caches heuristic values and enforces the evaluation budget."""

    def __init__(self, h: Heuristic, limit: int):
        self.h = h
        self.limit = limit
        self.count = 0
        self.cache: dict[State, float] = {}

    def one(self, s: State) -> float:
        v = self.cache.get(s)
        if v is None:
            v = self.many([s])[0]
        return v

    def many(self, states: list[State]) -> list[float]:
        """Evaluate states in order; raises _LimitReached once the budget is
        used up (the states evaluated so far stay counted)."""
        todo = [s for s in dict.fromkeys(states) if s not in self.cache]
        budget = self.limit - self.count
        hit = len(todo) >= budget
        todo = todo[:budget]
        if todo:
            for s, v in zip(todo, self.h.many(todo)):
                self.cache[s] = v
            self.count += len(todo)
        if hit:
            raise _LimitReached
        return [self.cache[s] for s in states]


def _extract(parents: dict[State, tuple[State, int] | None], s: State) -> list[int]:
    plan = []
    while True:
        link = parents[s]
        if link is None:
            break
        s, a = link
        plan.append(a)
    plan.reverse()
    return plan


def astar(task: GroundTask, h: Heuristic, cfg: SearchConfig | None = None) -> SearchResult:
    """A* with per-state closed flags and reopening on g improvements."""
    cfg = cfg or SearchConfig("astar")
    start = time.perf_counter()
    ev = _Evaluator(h, cfg.eval_limit)
    res = SearchResult(EXHAUSTED)
    init = task.init
    g = {init: 0}
    parents: dict[State, tuple[State, int] | None] = {init: None}
    closed: set[State] = set()
    counter = 0
    try:
        open_list = [(ev.one(init), counter, init)]
        while open_list:
            f, _, s = heapq.heappop(open_list)
            if f > g[s] + ev.cache[s]:
                continue  # stale entry
            if is_goal(s, task):
                res.status = SOLVED
                res.plan = _extract(parents, s)
                break
            if s in closed:
                continue
            closed.add(s)
            res.expansions += 1
            improved = []
            gs = g[s] + 1
            for a, t in successors(s, task):
                if gs < g.get(t, math.inf):
                    g[t] = gs
                    parents[t] = (s, a)
                    closed.discard(t)  # reopening
                    improved.append(t)
            values = ev.many(improved)
            for t, ht in zip(improved, values):
                counter += 1
                heapq.heappush(open_list, (g[t] + ht, counter, t))
    except _LimitReached:
        res.status = LIMIT_REACHED
    res.evaluations = ev.count
    res.seconds = time.perf_counter() - start
    return res


def gbfs(task: GroundTask, h: Heuristic, cfg: SearchConfig | None = None) -> SearchResult:
    """Greedy best-first search ordered by h alone, with the goal test applied
    when a successor is generated."""
    cfg = cfg or SearchConfig("gbfs")
    start = time.perf_counter()
    res = SearchResult(EXHAUSTED)
    init = task.init
    if is_goal(init, task):
        res.status = SOLVED
        res.seconds = time.perf_counter() - start
        return res
    ev = _Evaluator(h, cfg.eval_limit)
    parents: dict[State, tuple[State, int] | None] = {init: None}
    closed: set[State] = set()
    counter = 0
    goal_mask = task.goal_mask
    try:
        open_list = [(ev.one(init), counter, init)]
        while open_list:
            _, _, s = heapq.heappop(open_list)
            if s in closed:
                continue
            closed.add(s)
            res.expansions += 1
            fresh = []
            found = None
            for a, t in successors(s, task):
                if t in parents:
                    continue
                parents[t] = (s, a)
                if t & goal_mask == goal_mask:
                    found = t
                    break
                fresh.append(t)
            # successors before the goal were evaluated by the time it was generated
            values = ev.many(fresh)
            if found is not None:
                res.status = SOLVED
                res.plan = _extract(parents, found)
                break
            for t, ht in zip(fresh, values):
                counter += 1
                heapq.heappush(open_list, (ht, counter, t))
    except _LimitReached:
        res.status = LIMIT_REACHED
    res.evaluations = ev.count
    res.seconds = time.perf_counter() - start
    return res


def lookahead_depth(task: GroundTask, factor: int = 5, fallback: int = 50) -> int:
    hff_init = h_ff(task.init, task.goal, task)[0]
    if hff_init == math.inf:
        return fallback
    return int(factor * hff_init)


def gbfls(task: GroundTask, h: Heuristic, cfg: SearchConfig | None = None) -> SearchResult:
    """GBFS plus a greedy depth-first lookahead after every expansion.

    Lookahead nodes are goal-tested and evaluated (and counted) but only the
    depth-0 successors enter OPEN.
    """
    cfg = cfg or SearchConfig("gbfls")
    start = time.perf_counter()
    res = SearchResult(EXHAUSTED)
    init = task.init
    depth_limit = lookahead_depth(task, cfg.lookahead_factor, cfg.lookahead_fallback)
    res.lookahead_depth = depth_limit
    if is_goal(init, task):
        res.status = SOLVED
        res.seconds = time.perf_counter() - start
        return res
    ev = _Evaluator(h, cfg.eval_limit)
    parents: dict[State, tuple[State, int] | None] = {init: None}
    closed: set[State] = set()
    counter = 0
    goal_mask = task.goal_mask
    try:
        open_list = [(ev.one(init), counter, init)]
        while open_list and res.status != SOLVED:
            _, _, s = heapq.heappop(open_list)
            if s in closed:
                continue
            closed.add(s)
            res.expansions += 1
            path: list[int] = _extract(parents, s)
            cur = s
            for d in range(max(depth_limit, 1)):
                succ = successors(cur, task)
                if not succ:
                    break
                found = None
                generated = []
                for a, t in succ:
                    if d == 0 and t not in parents:
                        parents[t] = (cur, a)
                    if t & goal_mask == goal_mask:
                        found = (a, t)
                        break
                    generated.append((a, t))
                values = ev.many([t for _, t in generated])
                if found is not None:
                    res.status = SOLVED
                    res.plan = path + [found[0]]
                    break
                if d == 0:
                    for (a, t), ht in zip(generated, values):
                        if parents[t] == (cur, a) and t not in closed:
                            counter += 1
                            heapq.heappush(open_list, (ht, counter, t))
                best = min(range(len(generated)), key=values.__getitem__)
                a, cur = generated[best]
                path.append(a)
    except _LimitReached:
        res.status = LIMIT_REACHED
    res.evaluations = ev.count
    res.seconds = time.perf_counter() - start
    return res


SEARCHES = {"astar": astar, "gbfs": gbfs, "gbfls": gbfls}


def run(task: GroundTask, h: Heuristic, cfg: SearchConfig) -> SearchResult:
    return SEARCHES[cfg.algorithm](task, h, cfg)
