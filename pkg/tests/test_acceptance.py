"""Acceptance criteria, one test each, at the stated tolerances.

Every test prints a single ``criterion N: PASS|FAIL ...`` line (visible
even under output capture). Criteria 7 and 8 train real models and take
several minutes; they carry the ``slow`` marker.
"""
import json
import math
import time

import numpy as np
import pytest

from helpers import bfs_plan_length, central_difference, chain_task, generated, hadd_fixpoint, micro_task, relative_error, relaxed_reaches
from nlmplan import checkpoint, nlm, search
from nlmplan import generators as G
from nlmplan import mdp as M
from nlmplan import tensor as T
from nlmplan import trainer as TR
from nlmplan.cli import main
from nlmplan.heuristics import ClassicalHeuristic, FunctionHeuristic, discounted, h_add, h_ff
from nlmplan.task import from_text, is_goal, random_walk, validate_plan


@pytest.fixture
def report(capsys):
    def emit(number: int, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\ncriterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, f"criterion {number}: {detail}"

    return emit


# 1 -----------------------------------------------------------------------------


def test_criterion_1_shaping_preserves_optimal_values_and_policies(report):
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst, same_sets, cases = 0.0, True, 0
    for gamma in (0.9, 0.999999):
        for k in range(6):
            n = int(rng.integers(20, 501)) if k else 500
            mdp = M.random_mdp(rng, n, num_terminals=int(rng.integers(1, 4)))
            phi = rng.uniform(-50, 50, n)
            phi[np.array(mdp.terminal)] = 0.0
            v, _ = M.policy_iteration(mdp, gamma)
            shaped = M.shape(mdp, phi, gamma)
            vh, _ = M.policy_iteration(shaped, gamma)
            worst = max(worst, float(np.max(np.abs(v - (vh + phi)))))
            same_sets &= M.greedy_sets(mdp, v, gamma) == M.greedy_sets(shaped, vh, gamma)
            cases += 1
    elapsed = time.perf_counter() - start
    ok = cases >= 10 and worst <= 1e-9 and same_sets and elapsed < 10
    report(1, ok, f"{cases} MDPs, max |V*-(Vhat*+phi)| = {worst:.2e}, argmax sets equal: {same_sets}, {elapsed:.1f}s")


# 2 -----------------------------------------------------------------------------


def fixture_tasks():
    tasks = [chain_task(6)]
    tasks += [generated("blocks", s, blocks=n) for n in (3, 4) for s in range(2)]
    tasks += [generated("gripper", s, balls=b) for b in (2, 3) for s in range(2)]
    tasks += [generated("ferry", s, locations=3, cars=2) for s in range(2)]
    return tasks


def test_criterion_2_oracle_potential_zeroes_shaped_values(report):
    worst, states = 0.0, 0
    for gamma in (0.9, 0.999999):
        for task in fixture_tasks():
            tm = M.from_task(task)
            dist = M.distances_to_goal(tm.mdp)
            phi = np.array([-discounted(d, gamma) for d in dist])
            vh, _ = M.policy_iteration(M.shape(tm.mdp, phi, gamma), gamma)
            solvable = np.isfinite(dist)
            worst = max(worst, float(np.max(np.abs(vh[solvable]))))
            states += int(solvable.sum())
    report(2, worst <= 1e-9, f"max |Vhat*| = {worst:.2e} over {states} solvable states")


# 3 -----------------------------------------------------------------------------


def random_micro_task(rng):
    n = int(rng.integers(2, 13))
    prop = lambda k: [int(x) for x in rng.choice(n, size=min(k, n), replace=False)]
    actions = [(prop(int(rng.integers(0, 4))), prop(int(rng.integers(1, 4))), prop(int(rng.integers(0, 3))))
               for _ in range(int(rng.integers(1, 11)))]
    return micro_task(n, actions, prop(int(rng.integers(1, 4))), prop(int(rng.integers(1, 4))))


def test_criterion_3_hadd_oracle_and_hff_properties(report):
    rng = np.random.default_rng(3)
    checked, failures = 0, []
    while checked < 60:
        task = random_micro_task(rng)
        s, goal = task.init, task.goal
        ha = h_add(s, goal, task)
        if ha == math.inf or is_goal(s, task):
            continue  # keep the delete-free-reachable, non-trivial ones
        checked += 1
        hf, plan = h_ff(s, goal, task)
        if ha != hadd_fixpoint(task, s, goal):
            failures.append(f"h_add {ha} != oracle {hadd_fixpoint(task, s, goal)}")
        if not relaxed_reaches(task, s, plan, goal):
            failures.append("relaxed plan misses the goal")
        if not hf <= ha:
            failures.append(f"h_ff {hf} > h_add {ha}")
    report(3, not failures, f"{checked} reachable micro-tasks, {len(failures)} violations {failures[:3]}")


# 4 -----------------------------------------------------------------------------


def test_criterion_4_astar_is_optimal(report):
    tasks = [chain_task(n) for n in (1, 4, 9)]
    tasks += [generated("blocks", s, blocks=n) for n in (2, 3, 4) for s in range(3)]
    tasks += [generated("gripper", s, balls=b) for b in (1, 2, 3, 4) for s in range(2)]
    mismatches = []
    for task in tasks:
        res = search.astar(task, ClassicalHeuristic("blind", task))
        opt = bfs_plan_length(task)
        if not (res.solved and res.plan_length == opt and validate_plan(task, res.plan)):
            mismatches.append((task.name, res.plan_length, opt))
    report(4, not mismatches, f"{len(tasks)} tasks, mismatches: {mismatches}")


# 5 -----------------------------------------------------------------------------


def random_graph(rng):
    """A random float64 graph exercising every differentiable op."""
    o = int(rng.integers(2, 4))
    c = int(rng.integers(1, 4))
    q = int(rng.integers(1, 4))
    arrays = {
        "x": rng.uniform(0, 1, size=(2, o, o, c)),
        "w1": rng.normal(size=(2 * c, q)),
        "b1": rng.normal(size=(q,)),
        "w2": rng.normal(size=(2 * q + c, 2)),
        "b2": rng.normal(size=(2,)),
        "y": rng.normal(size=(2 * o * 2,)),
    }

    def fn(x, w1, b1, w2, b2, y):
        swapped = T.permute_axes(x, (0, 2, 1, 3))
        h = T.sigmoid(T.matmul_lastaxis(T.concat_lastaxis([x, swapped]), w1, b1))
        sym = T.permute_sum_blocks(T.concat_lastaxis([h, h]), [(0, 1, 2, 3), (0, 2, 1, 3)], q)
        r = T.max_reduce_axis(sym, 2)
        e = T.broadcast_expand(r, 2, o)
        z = T.concat_lastaxis([e, T.slice_axis(sym, 3, 0, q), x])
        out = T.add_bias(T.matmul_lastaxis(z, w2), b2)
        out = T.max_reduce_axis(T.sigmoid(out), 1)
        return T.mse_loss(T.reshape(out, (2 * o * 2,)), y)

    return fn, arrays


def test_criterion_5_gradient_check(report):
    start = time.perf_counter()
    rng = np.random.default_rng(5)
    worst, graphs = 0.0, 0
    for _ in range(20):
        fn, arrays = random_graph(rng)
        leaves = {k: T.Tensor(v, requires_grad=True) for k, v in arrays.items()}
        with T.Tape() as tape:
            loss = fn(**leaves)
        grads = T.backward(loss, tape)
        for k, leaf in leaves.items():
            numeric = central_difference(lambda: float(fn(**{n: T.Tensor(a) for n, a in arrays.items()}).data), arrays[k])
            worst = max(worst, relative_error(grads.get(leaf, np.zeros_like(arrays[k])), numeric))
        graphs += 1
    # the full network, float64, every parameter tensor
    task = generated("blocks", 1, blocks=3)
    model = nlm.NlmModel.initialize(task.signature, 3, 4, features=3, seed=5, dtype=np.float64)
    states = [s for s, _ in random_walk(task, 3, seed=5)]
    mapr = nlm.encode_batch(task, states, None, np.float64)
    target = rng.normal(size=len(states))
    with T.Tape() as tape:
        loss = T.mse_loss(model.forward(mapr), T.Tensor(target))
    grads = T.backward(loss, tape)
    for p in model.params.values():
        numeric = central_difference(lambda: float(T.mse_loss(model.forward(mapr), T.Tensor(target)).data), p.data)
        worst = max(worst, relative_error(grads[p], numeric))
    graphs += 1
    elapsed = time.perf_counter() - start
    ok = worst < 1e-4 and elapsed < 60
    report(5, ok, f"{graphs} graphs, max relative error {worst:.2e}, {elapsed:.1f}s")


# 6 -----------------------------------------------------------------------------


def stored_shapes(model):
    data = checkpoint.to_bytes(model)
    size = int.from_bytes(data[8:12], "little")
    return {t["name"]: t["shape"] for t in json.loads(data[12 : 12 + size])["tensors"]}


def test_criterion_6_permutation_invariance_and_size_generalization(report):
    task = generated("blocks", 0, blocks=3)
    model = nlm.NlmModel.initialize(task.signature, seed=6)
    states = [s for s, _ in random_walk(task, 12, seed=6)]
    worst = 0.0
    base = model.predict(nlm.encode_batch(task, states, task.goal, np.float32))
    plain = nlm.encode_batch(task, states, task.goal, np.float32)
    for perm in ((1, 0, 2), (2, 1, 0), (1, 2, 0), (2, 0, 1), (0, 2, 1)):
        mapr = plain.permute_objects(perm)
        assert any(not np.array_equal(a, b) for a, b in zip(mapr.arrays, plain.arrays))
        worst = max(worst, float(np.max(np.abs(model.predict(mapr) - base))))
    shapes = stored_shapes(model)
    finite, same_shapes = True, True
    for n in (10, 20):
        big = generated("blocks", 0, blocks=n)
        walk = [s for s, _ in random_walk(big, 3, seed=n)]
        v = model.predict(nlm.encode_batch(big, walk, big.goal, np.float32))
        finite &= v.shape == (len(walk),) and bool(np.all(np.isfinite(v)))
        other = nlm.NlmModel.initialize(big.signature, seed=6)
        same_shapes &= stored_shapes(other) == shapes
    ok = worst <= 1e-6 and finite and same_shapes
    report(6, ok, f"max relabeling change {worst:.2e}, O=10/20 ran: {finite}, weight shapes identical: {same_shapes}")


# 7 -----------------------------------------------------------------------------


def gripper_training_tasks():
    return [from_text(G.DOMAINS["gripper"], G.generate("gripper", s, balls=b)) for b in range(2, 7) for s in range(4)]


@pytest.mark.slow
def test_criterion_7_heuristic_shaping_beats_blind(report):
    start = time.perf_counter()
    tasks = gripper_training_tasks()
    wins, lines = 0, []
    for seed in range(3):
        goals = {}
        for shaping in ("hff", "none"):
            _, stats = TR.train(tasks, TR.TrainConfig(steps=2000, shaping=shaping, seed=seed))
            goals[shaping] = stats.cumulative_goals
        wins += goals["hff"] > goals["none"]
        lines.append(f"seed {seed}: hff {goals['hff']} vs blind {goals['none']}")
    elapsed = time.perf_counter() - start
    ok = wins >= 2 and elapsed < 20 * 60
    report(7, ok, f"h_FF ahead in {wins}/3 seeds ({'; '.join(lines)}), {elapsed / 60:.1f} min")


# 8 -----------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_8_learned_heuristic_helps_on_held_out_blocks(report):
    train_tasks = [from_text(G.DOMAINS["blocks"], t)
                   for _, t in G.generate_corpus("blocks", [{"blocks": n} for n in (2, 3, 4)], 10, seed=1)]
    held_out = [from_text(G.DOMAINS["blocks"], t) for _, t in G.generate_corpus("blocks", [{"blocks": 5}], 15, seed=7)]
    cfg = search.SearchConfig("gbfs", eval_limit=10_000)
    blind = [search.gbfs(t, ClassicalHeuristic("blind", t), cfg) for t in held_out]
    blind_evals = [r.evaluations if r.solved else math.inf for r in blind]
    wins, lines = 0, []
    for seed in range(3):
        vf, _ = TR.train(train_tasks, TR.TrainConfig(steps=5000, shaping="none", seed=seed))
        learned = [search.gbfs(t, nlm.LearnedHeuristic(vf.model, t), cfg) for t in held_out]
        evals = [r.evaluations if r.solved else math.inf for r in learned]
        extra = sum(r.solved and not b.solved for r, b in zip(learned, blind))
        mb, ml = float(np.median(blind_evals)), float(np.median(evals))
        reduced = ml <= 0.8 * mb
        wins += extra >= 1 or reduced
        lines.append(f"seed {seed}: median {ml:g} vs blind {mb:g}, extra solved {extra}")
    report(8, wins >= 2, f"success in {wins}/3 seeds ({'; '.join(lines)})")


# 9 -----------------------------------------------------------------------------


def test_criterion_9_eval_limit_and_lookahead_depth(report, monkeypatch):
    # 17 independent switches: 2^17 > 100k states, the goal proposition has no achiever
    n = 17
    task = micro_task(n + 2, [([n], [i], []) for i in range(n)], [n], [n + 1])
    flat = search.gbfs(task, ClassicalHeuristic("blind", task))
    limit_ok = flat.status == search.LIMIT_REACHED and flat.evaluations == 100_000

    def ring(goal_reachable: bool):
        # ring p0 -> ... -> p11 -> p0; detour p0 -> {r} is a dead end; goal g needs r and p5
        size = 12
        r, g = size, size + 1
        acts = [([i], [(i + 1) % size], [i]) for i in range(size)]
        acts.append(([0], [r], [0]))
        if goal_reachable:
            acts.append(([r, 5], [g], []))
        return micro_task(size + 2, acts, [0], [g]), size, r

    depth_lines, depth_ok = [], True
    for reachable in (True, False):
        task, size, r = ring(reachable)
        trace = []
        original = search.successors

        def spy(s, t):
            trace.append(s)
            return original(s, t)

        monkeypatch.setattr(search, "successors", spy)
        h = FunctionHeuristic(lambda s: 100.0 if s >> r & 1 else 1.0)
        res = search.gbfls(task, h)
        monkeypatch.setattr(search, "successors", original)
        pos = [s.bit_length() - 1 for s in trace]
        dive = next(i for i in range(1, len(pos)) if pos[i] != (pos[i - 1] + 1) % size)
        hff = h_ff(task.init, task.goal, task)[0]
        want = 50 if hff == math.inf else 5 * hff
        depth_ok &= dive == want == res.lookahead_depth
        depth_lines.append(f"h_FF(I)={hff}: dive {dive}, expected {want}")
    ok = limit_ok and depth_ok
    report(9, ok, f"gbfs {flat.status} after {flat.evaluations} evaluations; {'; '.join(depth_lines)}")


# 10 ----------------------------------------------------------------------------


def test_criterion_10_identical_manifests_give_identical_bytes(report, tmp_path):
    data = tmp_path / "data"
    data.mkdir()
    (data / "domain.pddl").write_text(G.DOMAINS["gripper"])
    for s in range(4):
        (data / f"p{s}.pddl").write_text(G.generate("gripper", s, balls=2))
    args = ["train", "--domain", str(data / "domain.pddl"), "--problems", str(data), "--shaping", "hff",
            "--steps", "150", "--seed", "7"]
    assert main(args + ["--out", str(tmp_path / "a.ckpt")]) == 0
    assert main(args + ["--out", str(tmp_path / "b.ckpt")]) == 0
    assert main(["replay", str(tmp_path / "a.ckpt.manifest.json"), "--out", str(tmp_path / "c.ckpt")]) == 0
    read = lambda name: (tmp_path / name).read_bytes()
    same = all(
        read(f"{x}.ckpt") == read("a.ckpt") and read(f"{x}.ckpt.metrics.jsonl") == read("a.ckpt.metrics.jsonl")
        for x in ("b", "c")
    )
    lines = len(read("a.ckpt.metrics.jsonl").splitlines())
    report(10, same and lines == 150, f"checkpoints and metrics byte-identical across 3 runs: {same} ({lines} metric lines)")
