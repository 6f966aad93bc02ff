"""Approximate RTDP with potential-based shaping and a bucketed replay buffer.

Episodes start at the initial state of a uniformly drawn training task.
At every step the agent scores all applicable actions with

    Q(s, a) = r(s, a, s') + gamma * V(s'),   V(goal) = 0,

where r is the shaped unit-cost reward, samples an action from
softmax(Q / tau), pushes the state's transition record into the replay
bucket for its object count and takes one gradient step towards the
expected (on-policy) Q value of a mini-batch drawn from a random bucket.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .heuristics import SHAPING_IDS, PotentialCache, shaped_reward
from .nlm import NlmModel, concat_maprs, encode_batch
from .task import GroundTask, State, is_goal, successors


@dataclass
class TrainConfig:
    steps: int = 50_000
    episode_cap: int = 40
    gamma: float = 0.999999
    batch: int = 25
    tau: float = 1.0
    buffer: int = 6000
    shaping: str = "none"
    seed: int = 0
    max_arity: int = 3
    layers: int = 6
    features: int = 8
    lr: float = 0.001
    # None bootstraps dead-end successors from the value function
    deadend_value: float | None = None

    def __post_init__(self):
        if self.shaping not in SHAPING_IDS:
            raise ValueError(f"unknown shaping {self.shaping!r}; expected one of {SHAPING_IDS}")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        for name in ("episode_cap", "batch", "buffer", "layers", "features"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.steps < 0:
            raise ValueError("steps must be non-negative")
        if self.tau <= 0:
            raise ValueError("tau must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


# --- replay buffer ---------------------------------------------------------


@dataclass(eq=False)
class BufferEntry:
    task: GroundTask
    state: State
    actions: tuple[int, ...]
    successors: tuple[State, ...]
    rewards: np.ndarray  # shaped reward per action
    goal: np.ndarray  # successor satisfies the goal
    deadend: np.ndarray  # successor has no applicable action
    phi: float
    phi_next: np.ndarray

    @property
    def objects(self) -> int:
        return self.task.num_objects


class ReplayBuffer:
    """Per-object-count FIFO buckets under one global capacity."""

    def __init__(self, capacity: int):
        if capacity <= 0:
            raise ValueError("buffer capacity must be positive")
        self.capacity = capacity
        self.buckets: dict[int, deque[BufferEntry]] = {}
        self._order: deque[int] = deque()  # bucket key of every entry, oldest first

    def __len__(self) -> int:
        return len(self._order)

    def push(self, entry: BufferEntry) -> None:
        if len(self._order) >= self.capacity:
            oldest = self._order.popleft()
            bucket = self.buckets[oldest]
            bucket.popleft()
            if not bucket:
                del self.buckets[oldest]
        key = entry.objects
        self.buckets.setdefault(key, deque()).append(entry)
        self._order.append(key)

    def sizes(self) -> dict[int, int]:
        return {k: len(v) for k, v in sorted(self.buckets.items())}


def buffer_sample(buffer: ReplayBuffer, batch: int, rng: np.random.Generator) -> list[BufferEntry]:
    """Uniform bucket, then `batch` entries uniformly with replacement from it."""
    if not len(buffer):
        raise ValueError("cannot sample from an empty replay buffer")
    keys = sorted(buffer.buckets)
    bucket = buffer.buckets[keys[int(rng.integers(len(keys)))]]
    idx = rng.integers(len(bucket), size=batch)
    return [bucket[int(i)] for i in idx]


# --- value functions -------------------------------------------------------


class ValueFunction:
    """What the trainer needs from a learner: batched prediction and a
    regression step towards fixed targets."""

    def predict(self, task: GroundTask, states: Sequence[State]) -> np.ndarray:
        raise NotImplementedError

    def update(self, items: Sequence[tuple[GroundTask, State]], targets: np.ndarray) -> float:
        raise NotImplementedError


class NlmValue(ValueFunction):
    def __init__(self, model: NlmModel, lr: float = 0.001):
        self.model = model
        self.adam = T.AdamState(lr=lr)

    def predict(self, task, states):
        if not states:
            return np.zeros(0)
        return self.model.predict(encode_batch(task, states, None, self.model.dtype))

    def predict_many(self, groups: list[tuple[GroundTask, list[State]]]) -> list[np.ndarray]:
        """One forward pass over several same-size tasks."""
        groups = [(t, s) for t, s in groups if s]
        if not groups:
            return []
        mapr = concat_maprs([encode_batch(t, s, None, self.model.dtype) for t, s in groups])
        flat = self.model.predict(mapr)
        out, i = [], 0
        for _, s in groups:
            out.append(flat[i : i + len(s)])
            i += len(s)
        return out

    def update(self, items, targets):
        order = _group_by_task(items)
        mapr = concat_maprs(
            [encode_batch(task, [items[i][1] for i in rows], None, self.model.dtype) for task, rows in order]
        )
        perm = [i for _, rows in order for i in rows]
        target = np.asarray(targets, dtype=np.float64)[perm].astype(self.model.dtype)
        params = self.model.params
        with T.Tape() as tape:
            loss = T.mse_loss(self.model.forward(mapr), T.Tensor(target))
        grads = T.backward(loss, tape)
        named = {name: grads[p] for name, p in params.items() if p in grads}
        T.adam_step(params, named, self.adam)
        return float(loss.data)


class TabularValue(ValueFunction):
    """Lookup table; ``lr=1`` assigns the target outright.

    Entries are keyed by ``key(task, state)``, by default the task's
    identity and the state. Tasks that differ only in their initial state
    can share one table by keying on the state alone.
    """

    def __init__(self, init: float = 0.0, lr: float = 1.0, key: Callable[[GroundTask, State], object] | None = None):
        self.init = init
        self.lr = lr
        self.key = key or (lambda task, s: (id(task), s))
        self.table: dict[object, float] = {}

    def get(self, task: GroundTask, s: State) -> float:
        return self.table.get(self.key(task, s), self.init)

    def predict(self, task, states):
        return np.array([self.get(task, s) for s in states], dtype=np.float64)

    def update(self, items, targets):
        loss = 0.0
        for (task, s), y in zip(items, targets):
            v = self.get(task, s)
            loss += 0.5 * (v - y) ** 2
            self.table[self.key(task, s)] = v + self.lr * (y - v)
        return loss / max(len(items), 1)


def _group_by_task(items) -> list[tuple[GroundTask, list[int]]]:
    groups: dict[int, tuple[GroundTask, list[int]]] = {}
    for i, (task, _) in enumerate(items):
        groups.setdefault(id(task), (task, []))[1].append(i)
    return list(groups.values())


# --- TD machinery ----------------------------------------------------------


def softmax(q: np.ndarray, tau: float) -> np.ndarray:
    z = (q - q.max()) / tau
    p = np.exp(z)
    return p / p.sum()


def q_values(entry: BufferEntry, succ_values: np.ndarray, gamma: float, deadend_value: float | None = None) -> np.ndarray:
    """Shaped one-step returns; goal successors contribute no future value."""
    v = np.where(entry.goal, 0.0, succ_values)
    if deadend_value is not None:
        v = np.where(entry.deadend & ~entry.goal, deadend_value, v)
    return entry.rewards + gamma * v


def expected_q(q: np.ndarray, tau: float) -> float:
    return float(np.dot(softmax(q, tau), q))


def td_target(entry: BufferEntry, vf: ValueFunction, tau: float, gamma: float, deadend_value: float | None = None) -> float:
    """``E_{a ~ softmax(Q/tau)} Q(s, a)`` under the current value function."""
    succ = vf.predict(entry.task, [t for t, g in zip(entry.successors, entry.goal) if not g])
    full = np.zeros(len(entry.successors))
    full[~entry.goal] = succ
    return expected_q(q_values(entry, full, gamma, deadend_value), tau)


def batch_targets(entries: Sequence[BufferEntry], vf: ValueFunction, tau: float, gamma: float, deadend_value=None) -> np.ndarray:
    """Targets for a mini-batch, evaluating every distinct successor once."""
    tasks: dict[int, tuple[GroundTask, dict[State, int]]] = {}
    for e in entries:
        _, index = tasks.setdefault(id(e.task), (e.task, {}))
        for t, g in zip(e.successors, e.goal):
            if not g and t not in index:
                index[t] = len(index)
    groups = [(task, list(index)) for task, index in tasks.values()]
    if isinstance(vf, NlmValue):
        values = vf.predict_many(groups)
    else:
        values = [vf.predict(task, states) for task, states in groups if states]
    lookup = {}
    it = iter(values)
    for task, states in groups:
        if states:
            lookup[id(task)] = next(it)
    out = np.empty(len(entries))
    for k, e in enumerate(entries):
        index = tasks[id(e.task)][1]
        vals = lookup.get(id(e.task))
        succ = np.array([0.0 if g else vals[index[t]] for t, g in zip(e.successors, e.goal)])
        out[k] = expected_q(q_values(e, succ, gamma, deadend_value), tau)
    return out


def make_entry(task: GroundTask, s: State, phi: Callable[[State], float], gamma: float) -> BufferEntry:
    succ = successors(s, task)
    if not succ:
        raise ValueError("dead-end states have no transition record")
    actions = tuple(a for a, _ in succ)
    states = tuple(t for _, t in succ)
    goal_mask = task.goal_mask
    goal = np.array([t & goal_mask == goal_mask for t in states], dtype=bool)
    dead = np.array([not successors(t, task) if not g else False for t, g in zip(states, goal)], dtype=bool)
    phi_s = phi(s)
    phi_next = np.array([phi(t) for t in states], dtype=np.float64)
    rewards = np.array([shaped_reward(gamma, phi_s, p) for p in phi_next], dtype=np.float64)
    return BufferEntry(task, s, actions, states, rewards, goal, dead, phi_s, phi_next)


def sample_action(q: np.ndarray, tau: float, rng: np.random.Generator) -> int:
    """Index drawn from softmax(q / tau)."""
    p = softmax(q, tau)
    i = int(np.searchsorted(np.cumsum(p), rng.random() * p.sum(), side="right"))
    return min(i, len(q) - 1)


def rollout_step(entry: BufferEntry, vf: ValueFunction, tau: float, gamma: float, rng, deadend_value=None):
    """Choose an action for the entry's state. Returns ``(action id,
    successor, shaped reward, reached goal)``."""
    succ = np.zeros(len(entry.successors))
    live = ~entry.goal
    if live.any():
        succ[live] = vf.predict(entry.task, [t for t, g in zip(entry.successors, entry.goal) if not g])
    q = q_values(entry, succ, gamma, deadend_value)
    i = sample_action(q, tau, rng)
    return entry.actions[i], entry.successors[i], float(entry.rewards[i]), bool(entry.goal[i])


# --- training loop ---------------------------------------------------------


@dataclass
class EpisodeStats:
    cumulative_goals: int = 0
    episodes: int = 0
    sgd_steps: int = 0
    episode_lengths: list[int] = field(default_factory=list)
    episode_goals: list[bool] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    bucket_sizes: dict[int, int] = field(default_factory=dict)


def filter_trivial(tasks: Sequence[GroundTask]) -> list[GroundTask]:
    return [t for t in tasks if not is_goal(t.init, t)]


def new_model(tasks: Sequence[GroundTask], cfg: TrainConfig) -> NlmModel:
    return NlmModel.initialize(
        tasks[0].signature,
        max_arity=cfg.max_arity,
        layers=cfg.layers,
        features=cfg.features,
        seed=cfg.seed,
        gamma=cfg.gamma,
        base=cfg.shaping,
        tau=cfg.tau,
    )


def train(
    tasks: Sequence[GroundTask],
    cfg: TrainConfig,
    vf: ValueFunction | None = None,
    on_step: Callable[[dict], None] | None = None,
    buffer: ReplayBuffer | None = None,
) -> tuple[ValueFunction, EpisodeStats]:
    """Run approximate RTDP for ``cfg.steps`` gradient steps.

    `vf` defaults to a freshly initialized NLM (an :class:`NlmValue`);
    `on_step` receives one metrics record per gradient step. Pass `buffer`
    to inspect the replay buffer afterwards.
    """
    if not tasks:
        raise ValueError("no training tasks")
    pool = filter_trivial(tasks)
    if not pool:
        raise ValueError("every training task is trivial (the initial state satisfies the goal)")
    sigs = {t.signature for t in pool}
    if len(sigs) > 1:
        raise ValueError("training tasks do not share one predicate signature")
    if vf is None:
        vf = NlmValue(new_model(pool, cfg), cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    if buffer is None:
        buffer = ReplayBuffer(cfg.buffer)
    stats = EpisodeStats()
    potentials = {id(t): PotentialCache(t, cfg.shaping, cfg.gamma) for t in pool}
    entries: dict[tuple[int, State], BufferEntry] = {}

    def entry_for(task: GroundTask, s: State) -> BufferEntry:
        key = (id(task), s)
        e = entries.get(key)
        if e is None:
            if len(entries) > 200_000:
                entries.clear()
            e = entries[key] = make_entry(task, s, potentials[id(task)], cfg.gamma)
        return e

    while stats.sgd_steps < cfg.steps:
        k = int(rng.integers(len(pool)))
        task = pool[k]
        s = task.init
        stats.episodes += 1
        t = 0
        reached = False
        while t < cfg.episode_cap and stats.sgd_steps < cfg.steps:
            if not successors(s, task):
                break
            entry = entry_for(task, s)
            _, s2, _, reached = rollout_step(entry, vf, cfg.tau, cfg.gamma, rng, cfg.deadend_value)
            buffer.push(entry)
            batch = buffer_sample(buffer, cfg.batch, rng)
            targets = batch_targets(batch, vf, cfg.tau, cfg.gamma, cfg.deadend_value)
            loss = vf.update([(e.task, e.state) for e in batch], targets)
            stats.sgd_steps += 1
            stats.losses.append(loss)
            t += 1
            s = s2
            if reached:
                stats.cumulative_goals += 1
            if on_step is not None:
                on_step(
                    {
                        "sgd_step": stats.sgd_steps,
                        "episode": stats.episodes,
                        "instance": task.name,
                        "objects": task.num_objects,
                        "episode_len": t,
                        "reached_goal": reached,
                        "loss": loss,
                        "cumulative_goals": stats.cumulative_goals,
                    }
                )
            if reached:
                break
        stats.episode_lengths.append(t)
        stats.episode_goals.append(reached)
    stats.bucket_sizes = buffer.sizes()
    return vf, stats
