"""Run searches over instance sets and summarize coverage and evaluations."""
from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

from .heuristics import HEURISTIC_IDS, ClassicalHeuristic, Heuristic
from .search import SOLVED, SearchConfig, run
from .task import GroundTask, load

THREADS_ENV = "NLMPLAN_THREADS"
HeuristicFactory = Callable[[GroundTask], Heuristic]


@dataclass
class Row:
    instance: str
    objects: int
    algorithm: str
    heuristic: str
    status: str
    evaluations: int
    expansions: int
    plan_length: int
    seconds: float


COLUMNS = [f.name for f in fields(Row)]


@dataclass
class Report:
    rows: list[Row] = field(default_factory=list)
    errors: list[str] = field(default_factory=list)

    def coverage(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for r in self.rows:
            out.setdefault(r.heuristic, 0)
            out[r.heuristic] += r.status == SOLVED
        return out

    def heuristics(self) -> list[str]:
        return list(dict.fromkeys(r.heuristic for r in self.rows))


def thread_count() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def classical(name: str) -> HeuristicFactory:
    if name not in HEURISTIC_IDS + ("zero",):
        raise ValueError(f"unknown heuristic {name!r}; expected one of {HEURISTIC_IDS} or learned:PATH")
    return lambda task: ClassicalHeuristic(name, task)


def evaluate_suite(
    tasks: Sequence[GroundTask],
    heuristics: dict[str, HeuristicFactory],
    cfg: SearchConfig,
    threads: int | None = None,
) -> Report:
    """One search per (task, heuristic); rows come out task-major in input
    order whatever the thread count."""
    jobs = [(task, name, make) for task in tasks for name, make in heuristics.items()]

    def work(job) -> Row:
        task, name, make = job
        res = run(task, make(task), cfg)
        return Row(
            task.name,
            task.num_objects,
            cfg.algorithm,
            name,
            res.status,
            res.evaluations,
            res.expansions,
            res.plan_length,
            round(res.seconds, 6),
        )

    threads = thread_count() if threads is None else threads
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(threads) as pool:
            rows = list(pool.map(work, jobs))
    else:
        rows = [work(j) for j in jobs]
    return Report(rows)


def paired_tally(rows: Sequence[Row], a: str, b: str) -> dict[str, int]:
    """Instances where `a` needed fewer / more evaluations than `b`.

    A failed run counts as needing more evaluations than any solved one.
    Ties and instances both heuristics failed are reported separately and
    do not enter the better/worse counts.
    """
    by = {}
    for r in rows:
        by.setdefault(r.instance, {})[r.heuristic] = r
    out = {"better": 0, "worse": 0, "ties": 0, "both_failed": 0}
    for runs in by.values():
        if a not in runs or b not in runs:
            continue
        ra, rb = runs[a], runs[b]
        sa, sb = ra.status == SOLVED, rb.status == SOLVED
        if not sa and not sb:
            out["both_failed"] += 1
        elif sa and not sb:
            out["better"] += 1
        elif sb and not sa:
            out["worse"] += 1
        elif ra.evaluations < rb.evaluations:
            out["better"] += 1
        elif ra.evaluations > rb.evaluations:
            out["worse"] += 1
        else:
            out["ties"] += 1
    return out


def summary(report: Report) -> dict:
    names = report.heuristics()
    tallies = {}
    for i, a in enumerate(names):
        for b in names[i + 1 :]:
            tallies[f"{a} vs {b}"] = paired_tally(report.rows, a, b)
    counts: dict[str, int] = {}
    for r in report.rows:
        counts[r.heuristic] = counts.get(r.heuristic, 0) + 1
    return {
        "coverage": report.coverage(),
        "instances": counts,
        "paired": tallies,
        "errors": list(report.errors),
    }


def write_csv(rows: Sequence[Row], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow(asdict(r))


def read_csv(path) -> list[Row]:
    types = {f.name: f.type for f in fields(Row)}
    conv = {"int": int, "float": float, "str": str}
    with open(path, newline="") as fh:
        return [Row(**{k: conv[types[k]](v) for k, v in rec.items()}) for rec in csv.DictReader(fh)]


def problem_files(directory, domain_path=None) -> list[Path]:
    """PDDL files in `directory` (sorted), minus the domain file itself."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"problem directory {directory} does not exist")
    skip = Path(domain_path).resolve() if domain_path else None
    return [p for p in sorted(directory.glob("*.pddl")) if p.resolve() != skip]


def load_problems(domain_path, paths) -> tuple[list[GroundTask], list[str]]:
    """Ground every problem; failures are collected, not raised."""
    tasks, errors = [], []
    for p in paths:
        try:
            tasks.append(load(domain_path, p))
        except (OSError, ValueError) as exc:
            errors.append(f"{p}: {exc}")
    return tasks, errors
