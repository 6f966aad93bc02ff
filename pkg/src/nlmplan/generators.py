"""Problem generators for blocksworld (4 ops), gripper and ferry.

Sizes are capped at what the bundled searches handle in seconds; every
instance is non-trivial (the initial state does not satisfy the goal), and
instances up to ``VERIFY_CAP`` are additionally proven solvable by search.
"""
from __future__ import annotations

import hashlib
import random

BLOCKS_DOMAIN = """\
(define (domain blocksworld)
  (:requirements :strips)
  (:predicates (on ?x ?y) (ontable ?x) (clear ?x) (handempty) (holding ?x))
  (:action pick-up
    :parameters (?x)
    :precondition (and (clear ?x) (ontable ?x) (handempty))
    :effect (and (not (ontable ?x)) (not (clear ?x)) (not (handempty)) (holding ?x)))
  (:action put-down
    :parameters (?x)
    :precondition (holding ?x)
    :effect (and (not (holding ?x)) (clear ?x) (handempty) (ontable ?x)))
  (:action stack
    :parameters (?x ?y)
    :precondition (and (holding ?x) (clear ?y))
    :effect (and (not (holding ?x)) (not (clear ?y)) (clear ?x) (handempty) (on ?x ?y)))
  (:action unstack
    :parameters (?x ?y)
    :precondition (and (on ?x ?y) (clear ?x) (handempty))
    :effect (and (holding ?x) (clear ?y) (not (clear ?x)) (not (handempty)) (not (on ?x ?y)))))
"""

GRIPPER_DOMAIN = """\
(define (domain gripper-strips)
  (:requirements :strips)
  (:predicates (room ?r) (ball ?b) (gripper ?g) (at-robby ?r) (at ?b ?r) (free ?g) (carry ?o ?g))
  (:action move
    :parameters (?from ?to)
    :precondition (and (room ?from) (room ?to) (at-robby ?from))
    :effect (and (at-robby ?to) (not (at-robby ?from))))
  (:action pick
    :parameters (?obj ?room ?gripper)
    :precondition (and (ball ?obj) (room ?room) (gripper ?gripper) (at ?obj ?room) (at-robby ?room) (free ?gripper))
    :effect (and (carry ?obj ?gripper) (not (at ?obj ?room)) (not (free ?gripper))))
  (:action drop
    :parameters (?obj ?room ?gripper)
    :precondition (and (ball ?obj) (room ?room) (gripper ?gripper) (carry ?obj ?gripper) (at-robby ?room))
    :effect (and (at ?obj ?room) (free ?gripper) (not (carry ?obj ?gripper)))))
"""

FERRY_DOMAIN = """\
(define (domain ferry)
  (:requirements :strips :typing)
  (:types car location)
  (:predicates (not-eq ?x ?y - location) (at-ferry ?l - location) (at ?c - car ?l - location)
               (empty-ferry) (on ?c - car))
  (:action sail
    :parameters (?from ?to - location)
    :precondition (and (not-eq ?from ?to) (at-ferry ?from))
    :effect (and (at-ferry ?to) (not (at-ferry ?from))))
  (:action board
    :parameters (?car - car ?loc - location)
    :precondition (and (at ?car ?loc) (at-ferry ?loc) (empty-ferry))
    :effect (and (on ?car) (not (at ?car ?loc)) (not (empty-ferry))))
  (:action debark
    :parameters (?car - car ?loc - location)
    :precondition (and (on ?car) (at-ferry ?loc))
    :effect (and (at ?car ?loc) (empty-ferry) (not (on ?car)))))
"""

DOMAINS = {"blocks": BLOCKS_DOMAIN, "gripper": GRIPPER_DOMAIN, "ferry": FERRY_DOMAIN}

# (min, max) per size parameter
BOUNDS = {
    "blocks": {"blocks": (2, 50)},
    "gripper": {"balls": (1, 60)},
    "ferry": {"locations": (2, 30), "cars": (1, 30)},
}
VERIFY_CAP = {"blocks": 6, "gripper": 6, "ferry": 5}


class GeneratorError(ValueError):
    pass


def _check(domain: str, params: dict) -> None:
    if domain not in BOUNDS:
        raise GeneratorError(f"unknown domain {domain!r}; expected one of {sorted(BOUNDS)}")
    for key, (lo, hi) in BOUNDS[domain].items():
        if key not in params:
            raise GeneratorError(f"{domain} needs size parameter {key!r}")
        v = params[key]
        if not isinstance(v, int) or not lo <= v <= hi:
            raise GeneratorError(f"{domain} {key}={v!r} outside [{lo}, {hi}]")
    extra = set(params) - set(BOUNDS[domain])
    if extra:
        raise GeneratorError(f"unexpected size parameters for {domain}: {sorted(extra)}")


def _random_towers(rng: random.Random, names: list[str]) -> list[list[str]]:
    order = names[:]
    rng.shuffle(order)
    towers: list[list[str]] = []
    for b in order:
        # a new tower with probability 1/(k+1), k = current tower count
        k = rng.randrange(len(towers) + 1)
        if k == len(towers):
            towers.append([b])
        else:
            towers[k].append(b)
    return towers


def _blocks(n: int, rng: random.Random, name: str) -> str:
    names = [f"b{i}" for i in range(1, n + 1)]
    while True:
        start = _random_towers(rng, names)
        target = _random_towers(rng, names)
        goal = sorted((t[i + 1], t[i]) for t in target for i in range(len(t) - 1))
        init_on = {(t[i + 1], t[i]) for t in start for i in range(len(t) - 1)}
        if goal and not set(goal) <= init_on:
            break
    init = ["(handempty)"]
    for t in start:
        init.append(f"(ontable {t[0]})")
        init.extend(f"(on {t[i + 1]} {t[i]})" for i in range(len(t) - 1))
        init.append(f"(clear {t[-1]})")
    return _problem(name, "blocksworld", names, init, [f"(on {x} {y})" for x, y in goal])


def _gripper(balls: int, rng: random.Random, name: str) -> str:
    rooms = ["rooma", "roomb"]
    grippers = ["left", "right"]
    ball_names = [f"ball{i}" for i in range(1, balls + 1)]
    robot = rng.choice(rooms)
    init = [f"(room {r})" for r in rooms] + [f"(ball {b})" for b in ball_names]
    init += [f"(gripper {g})" for g in grippers] + [f"(free {g})" for g in grippers]
    init.append(f"(at-robby {robot})")
    goal = []
    for b in ball_names:
        src = rng.randrange(2)
        init.append(f"(at {b} {rooms[src]})")
        goal.append(f"(at {b} {rooms[1 - src]})")
    return _problem(name, "gripper-strips", rooms + grippers + ball_names, init, goal)


def _ferry(locations: int, cars: int, rng: random.Random, name: str) -> str:
    locs = [f"l{i}" for i in range(1, locations + 1)]
    car_names = [f"c{i}" for i in range(1, cars + 1)]
    while True:
        start = [rng.choice(locs) for _ in car_names]
        target = [rng.choice(locs) for _ in car_names]
        if start != target:
            break
    init = [f"(not-eq {a} {b})" for a in locs for b in locs if a != b]
    init += ["(empty-ferry)", f"(at-ferry {rng.choice(locs)})"]
    init += [f"(at {c} {l})" for c, l in zip(car_names, start)]
    goal = [f"(at {c} {l})" for c, l, l0 in zip(car_names, target, start) if l != l0]
    objects = " ".join(locs) + " - location " + " ".join(car_names) + " - car"
    return _problem(name, "ferry", None, init, goal, typed_objects=objects)


def _problem(name, domain, objects, init, goal, typed_objects=None) -> str:
    objs = typed_objects if typed_objects is not None else " ".join(objects)
    lines = [f"(define (problem {name})", f"  (:domain {domain})", f"  (:objects {objs})", "  (:init"]
    lines += [f"    {a}" for a in init]
    lines.append("  )")
    lines.append("  (:goal (and")
    lines += [f"    {a}" for a in goal]
    lines.append("  )))")
    return "\n".join(lines) + "\n"


def generate(domain: str, seed: int, verify: bool = True, **size) -> str:
    """Problem text for `domain` with the given size parameters; deterministic
    in (domain, size, seed)."""
    _check(domain, size)
    rng = random.Random(f"{domain}/{sorted(size.items())}/{seed}")
    tag = "-".join(str(v) for _, v in sorted(size.items()))
    name = f"{domain}-{tag}-s{seed}"
    if domain == "blocks":
        text = _blocks(size["blocks"], rng, name)
    elif domain == "gripper":
        text = _gripper(size["balls"], rng, name)
    else:
        text = _ferry(size["locations"], size["cars"], rng, name)
    if verify:
        _verify(domain, text, size)
    return text


def _verify(domain: str, text: str, size: dict) -> None:
    from .heuristics import ClassicalHeuristic
    from .search import EXHAUSTED, SearchConfig, gbfs
    from .task import from_text, is_goal

    task = from_text(DOMAINS[domain], text)
    if is_goal(task.init, task):
        raise GeneratorError("generated a trivial instance")
    if max(size.values()) <= VERIFY_CAP[domain]:
        res = gbfs(task, ClassicalHeuristic("blind", task), SearchConfig("gbfs", eval_limit=500_000))
        if res.status == EXHAUSTED:
            raise GeneratorError("generated an unsolvable instance")


def content_hash(text: str) -> str:
    return hashlib.md5(text.split("\n", 1)[1].encode()).hexdigest()


def generate_corpus(domain: str, sizes: list[dict], per_size: int, seed: int = 0, verify: bool = True) -> list[tuple[str, str]]:
    """``per_size`` instances per size dict, duplicates (same content apart
    from the problem name) removed. Returns ``[(name, text)]``."""
    seen: set[str] = set()
    out = []
    for size in sizes:
        for k in range(per_size):
            text = generate(domain, seed * 100_003 + k, verify=verify, **size)
            h = content_hash(text)
            if h in seen:
                continue
            seen.add(h)
            name = text.split("\n", 1)[0].split()[-1].rstrip(")")
            out.append((name, text))
    return out
