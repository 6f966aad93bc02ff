"""Exact solvers for small deterministic MDPs.

Used to check shaping and the discounted heuristic against ground truth.
Terminal states are absorbing with value 0. Every non-terminal state has
at least one action; tasks converted with :func:`from_task` give dead-end
states a self-loop with reward -1, so their value is ``-1 / (1 - gamma)``.

Policy evaluation is exact rather than iterative: under a deterministic
policy every state's trajectory runs into a terminal or a cycle, and cycle
values have the closed form ``sum_t gamma**t r_t / (1 - gamma**L)``. This
keeps ``gamma = 0.999999`` tractable.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .task import GroundTask, State, successors


@dataclass
class DeterministicMDP:
    next_state: list[list[int]]  # per state, successor of each action
    rewards: list[list[float]]
    terminal: list[bool]

    def __post_init__(self):
        n = len(self.next_state)
        if len(self.rewards) != n or len(self.terminal) != n:
            raise ValueError("next_state, rewards and terminal must have one row per state")
        for s in range(n):
            if len(self.next_state[s]) != len(self.rewards[s]):
                raise ValueError(f"state {s}: action and reward counts differ")
            if not self.terminal[s] and not self.next_state[s]:
                raise ValueError(f"non-terminal state {s} has no action")

    @property
    def num_states(self) -> int:
        return len(self.next_state)


_EXT = np.longdouble


def evaluate_policy(mdp: DeterministicMDP, policy: list[int], gamma: float) -> np.ndarray:
    """Exact value of a deterministic policy, accumulated in extended
    precision and rounded once to float64."""
    n = mdp.num_states
    g = _EXT(gamma)
    value = [_EXT(0.0)] * n
    done = [False] * n
    for s0 in range(n):
        if done[s0]:
            continue
        path: list[int] = []
        pos: dict[int, int] = {}
        s = s0
        while True:
            if mdp.terminal[s] or done[s]:
                done[s] = True
                break
            if s in pos:
                cyc = path[pos[s]:]
                del path[pos[s]:]
                rs = [_EXT(mdp.rewards[c][policy[c]]) for c in cyc]
                # value of the cycle entry, then the rest by backing up around it
                acc, disc = _EXT(0.0), _EXT(1.0)
                for r in rs:
                    acc += disc * r
                    disc *= g
                entry = acc / (_EXT(1.0) - disc)
                value[cyc[0]] = entry
                done[cyc[0]] = True
                nxt = entry
                for c, r in zip(reversed(cyc[1:]), reversed(rs[1:])):
                    nxt = value[c] = r + g * nxt
                    done[c] = True
                break
            pos[s] = len(path)
            path.append(s)
            s = mdp.next_state[s][policy[s]]
        for s in reversed(path):
            a = policy[s]
            value[s] = _EXT(mdp.rewards[s][a]) + g * value[mdp.next_state[s][a]]
            done[s] = True
    return np.array(value, dtype=_EXT).astype(np.float64)


def q_values(mdp: DeterministicMDP, value: np.ndarray, gamma: float) -> list[np.ndarray]:
    return [
        np.array([r + gamma * value[t] for t, r in zip(mdp.next_state[s], mdp.rewards[s])])
        for s in range(mdp.num_states)
    ]


def policy_iteration(mdp: DeterministicMDP, gamma: float, max_iter: int = 10_000) -> tuple[np.ndarray, list[int]]:
    """Optimal values and a greedy policy (lowest action index among ties)."""
    policy = [0] * mdp.num_states
    for _ in range(max_iter):
        value = evaluate_policy(mdp, policy, gamma)
        changed = False
        for s, q in enumerate(q_values(mdp, value, gamma)):
            if mdp.terminal[s]:
                continue
            best = int(np.argmax(q))
            # switch only on a strict improvement, so the loop cannot cycle
            if q[best] > q[policy[s]] + 1e-12 * max(1.0, abs(q[best])):
                policy[s] = best
                changed = True
        if not changed:
            for s, q in enumerate(q_values(mdp, value, gamma)):
                if not mdp.terminal[s]:
                    policy[s] = int(np.argmax(q))
            return value, policy
    raise RuntimeError("policy iteration did not converge")


def greedy_sets(mdp: DeterministicMDP, value: np.ndarray, gamma: float, tol: float = 1e-8) -> list[frozenset[int]]:
    """Per state, the actions whose Q value is within `tol` of the best."""
    out = []
    for s, q in enumerate(q_values(mdp, value, gamma)):
        if mdp.terminal[s]:
            out.append(frozenset())
        else:
            out.append(frozenset(np.flatnonzero(q >= q.max() - tol).tolist()))
    return out


def shape(mdp: DeterministicMDP, phi, gamma: float) -> DeterministicMDP:
    """Rewards ``r + gamma * phi(s') - phi(s)``; `phi` must vanish on terminals.

    The shaped rewards are kept in extended precision: inside a cycle a
    rounding error is amplified by ``1 / (1 - gamma)``.
    """
    phi = np.asarray(phi, dtype=np.float64).astype(_EXT)
    g = _EXT(gamma)
    for s in range(mdp.num_states):
        if mdp.terminal[s] and phi[s] != 0.0:
            raise ValueError(f"potential of terminal state {s} must be 0, got {phi[s]}")
    rewards = [
        [_EXT(r) + g * phi[t] - phi[s] for t, r in zip(mdp.next_state[s], mdp.rewards[s])]
        for s in range(mdp.num_states)
    ]
    return DeterministicMDP(mdp.next_state, rewards, mdp.terminal)


def distances_to_goal(mdp: DeterministicMDP) -> np.ndarray:
    """Fewest steps from each state to a terminal state (inf if none)."""
    n = mdp.num_states
    preds: list[list[int]] = [[] for _ in range(n)]
    for s in range(n):
        if not mdp.terminal[s]:
            for t in mdp.next_state[s]:
                preds[t].append(s)
    dist = np.full(n, np.inf)
    queue = deque(s for s in range(n) if mdp.terminal[s])
    for s in queue:
        dist[s] = 0
    while queue:
        t = queue.popleft()
        for s in preds[t]:
            if dist[s] == np.inf:
                dist[s] = dist[t] + 1
                queue.append(s)
    return dist


def soft_value_iteration(
    mdp: DeterministicMDP, gamma: float, tau: float, tol: float = 1e-12, max_iter: int = 1_000_000
) -> np.ndarray:
    """Fixpoint of ``V(s) = E_{a ~ softmax(Q/tau)} Q(s, a)`` by iteration."""
    value = np.zeros(mdp.num_states)
    for _ in range(max_iter):
        new = value.copy()
        for s, q in enumerate(q_values(mdp, value, gamma)):
            if mdp.terminal[s]:
                continue
            p = np.exp((q - q.max()) / tau)
            p /= p.sum()
            new[s] = float(np.dot(p, q))
        delta = float(np.max(np.abs(new - value), initial=0.0))
        value = new
        if delta < tol:
            return value
    raise RuntimeError("soft value iteration did not converge")


@dataclass
class TaskMDP:
    mdp: DeterministicMDP
    states: list[State]
    index: dict[State, int]
    actions: list[list[int]]  # ground action id per MDP action (-1 for a dead-end self-loop)


def from_task(task: GroundTask, max_states: int = 100_000) -> TaskMDP:
    """Reachable state space of `task` with unit costs (reward -1 per step)."""
    states = [task.init]
    index = {task.init: 0}
    next_state: list[list[int]] = []
    actions: list[list[int]] = []
    terminal: list[bool] = []
    goal_mask = task.goal_mask
    i = 0
    while i < len(states):
        s = states[i]
        i += 1
        if s & goal_mask == goal_mask:
            next_state.append([])
            actions.append([])
            terminal.append(True)
            continue
        succ = successors(s, task)
        row, acts = [], []
        for a, t in succ:
            j = index.get(t)
            if j is None:
                if len(states) >= max_states:
                    raise ValueError(f"state space exceeds {max_states} states")
                j = index[t] = len(states)
                states.append(t)
            row.append(j)
            acts.append(a)
        if not row:
            row, acts = [index[s]], [-1]
        next_state.append(row)
        actions.append(acts)
        terminal.append(False)
    rewards = [[-1.0] * len(row) for row in next_state]
    return TaskMDP(DeterministicMDP(next_state, rewards, terminal), states, index, actions)


def random_mdp(
    rng: np.random.Generator,
    num_states: int,
    max_actions: int = 4,
    num_terminals: int = 2,
    rewards=(-1.0, -2.0, -3.0),
) -> DeterministicMDP:
    terminal = [s < num_terminals for s in range(num_states)]
    next_state, reward = [], []
    for s in range(num_states):
        if terminal[s]:
            next_state.append([])
            reward.append([])
            continue
        k = int(rng.integers(1, max_actions + 1))
        next_state.append([int(t) for t in rng.integers(num_states, size=k)])
        reward.append([float(r) for r in rng.choice(rewards, size=k)])
    return DeterministicMDP(next_state, reward, terminal)
