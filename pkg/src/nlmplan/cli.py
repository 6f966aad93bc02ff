"""Command-line entry point: plan, train, replay, eval and generate.

Exit codes: 0 success (for ``plan``: solved), 1 unsolved, 2 usage, input
or model errors.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

from . import __version__
from . import checkpoint
from .evaluation import (
    Report,
    classical,
    evaluate_suite,
    load_problems,
    problem_files,
    summary,
    write_csv,
)
from .generators import BOUNDS, DOMAINS, GeneratorError, generate_corpus
from .heuristics import HEURISTIC_IDS, SHAPING_IDS
from .nlm import LearnedHeuristic, SignatureMismatch
from .pddl import PddlError
from .search import ALGORITHMS, DEFAULT_EVAL_LIMIT, SearchConfig, run
from .task import format_plan, load
from .trainer import NlmValue, TrainConfig, filter_trivial, new_model, train

EXIT_OK, EXIT_UNSOLVED, EXIT_ERROR = 0, 1, 2


class CliError(Exception):
    pass


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _heuristic_factory(ident: str):
    if ident.startswith("learned:"):
        path = ident[len("learned:") :]
        try:
            model = checkpoint.load(path)
        except (OSError, checkpoint.CheckpointError) as exc:
            raise CliError(f"cannot load model {path}: {exc}") from None
        return lambda task: LearnedHeuristic(model, task, name=ident)
    try:
        return classical(ident)
    except ValueError as exc:
        raise CliError(str(exc)) from None


# --- plan ------------------------------------------------------------------


def cmd_plan(args) -> int:
    task = load(args.domain, args.problem)
    make = _heuristic_factory(args.heuristic)
    h = make(task)  # raises SignatureMismatch for foreign models
    res = run(task, h, SearchConfig(args.search, eval_limit=args.eval_limit))
    row = {
        "instance": task.name,
        "objects": task.num_objects,
        "algorithm": args.search,
        "heuristic": args.heuristic,
        "status": res.status,
        "evaluations": res.evaluations,
        "expansions": res.expansions,
        "plan_length": res.plan_length,
        "seconds": round(res.seconds, 6),
    }
    print(",".join(row))
    print(",".join(str(v) for v in row.values()))
    if res.solved:
        text = format_plan(task, res.plan)
        sys.stdout.write(text)
        if args.plan_out:
            Path(args.plan_out).write_text(text)
        return EXIT_OK
    return EXIT_UNSOLVED


# --- train / replay --------------------------------------------------------


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        steps=args.steps,
        episode_cap=args.episode_cap,
        gamma=args.gamma,
        batch=args.batch,
        tau=args.tau,
        buffer=args.buffer,
        shaping=args.shaping,
        seed=args.seed,
        max_arity=args.max_arity,
        layers=args.layers,
        features=args.features,
        lr=args.lr,
    )


def _run_training(domain: Path, problems: list[Path], cfg: TrainConfig, out: Path, checkpoint_every: int) -> dict:
    tasks, errors = load_problems(domain, problems)
    if errors:
        raise CliError("; ".join(errors))
    if not tasks:
        raise CliError("no training problems found")
    if not filter_trivial(tasks):
        raise CliError("every training problem is trivial (its initial state satisfies the goal)")
    metrics_path = out.with_name(out.name + ".metrics.jsonl")
    manifest_path = out.with_name(out.name + ".manifest.json")
    manifest = {
        "tool": "nlmplan",
        "version": __version__,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "checkpoint_every": checkpoint_every,
        "domain": {"path": str(domain), "sha256": _sha256(domain)},
        "instances": [{"path": str(p), "sha256": _sha256(p)} for p in problems],
    }
    vf = NlmValue(new_model(filter_trivial(tasks), cfg), cfg.lr)
    with open(metrics_path, "w") as fh:

        def on_step(rec: dict) -> None:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
            if checkpoint_every and rec["sgd_step"] % checkpoint_every == 0:
                checkpoint.save(vf.model, out)

        _, stats = train(tasks, cfg, vf=vf, on_step=on_step)
    checkpoint.save(vf.model, out)
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return {
        "checkpoint": str(out),
        "metrics": str(metrics_path),
        "manifest": str(manifest_path),
        "sgd_steps": stats.sgd_steps,
        "episodes": stats.episodes,
        "cumulative_goals": stats.cumulative_goals,
    }


def cmd_train(args) -> int:
    cfg = _train_config(args)
    domain = Path(args.domain)
    problems = problem_files(args.problems, domain)
    result = _run_training(domain, problems, cfg, Path(args.out), args.checkpoint_every)
    print(json.dumps(result, sort_keys=True))
    return EXIT_OK


def cmd_replay(args) -> int:
    manifest = json.loads(Path(args.manifest).read_text())
    domain = Path(manifest["domain"]["path"])
    if _sha256(domain) != manifest["domain"]["sha256"]:
        raise CliError(f"domain file {domain} changed since the recorded run")
    problems = []
    for inst in manifest["instances"]:
        p = Path(inst["path"])
        if _sha256(p) != inst["sha256"]:
            raise CliError(f"problem file {p} changed since the recorded run")
        problems.append(p)
    cfg = TrainConfig(**manifest["config"])
    result = _run_training(domain, problems, cfg, Path(args.out), int(manifest.get("checkpoint_every", 0)))
    print(json.dumps(result, sort_keys=True))
    return EXIT_OK


# --- eval ------------------------------------------------------------------


def cmd_eval(args) -> int:
    idents = [s for s in args.heuristics.split(",") if s] if args.heuristics else []
    idents += [f"learned:{p}" for p in args.model or []]
    factories = {ident: _heuristic_factory(ident) for ident in idents}
    domain = Path(args.domain)
    tasks, errors = load_problems(domain, problem_files(args.problems, domain))
    for e in errors:
        print(f"warning: skipped {e}", file=sys.stderr)
    cfg = SearchConfig(args.search, eval_limit=args.eval_limit)
    report = evaluate_suite(tasks, factories, cfg) if factories else Report()
    report.errors = errors
    out = Path(args.out)
    write_csv(report.rows, out)
    summ = summary(report)
    out.with_name(out.name + ".summary.json").write_text(json.dumps(summ, indent=2, sort_keys=True) + "\n")
    for name, n in summ["coverage"].items():
        print(f"coverage {name}: {n}/{summ['instances'][name]}")
    for pair, t in summ["paired"].items():
        print(f"paired {pair}: better {t['better']} worse {t['worse']} (ties {t['ties']}, both failed {t['both_failed']})")
    return EXIT_OK


# --- generate --------------------------------------------------------------


def _size(text: str) -> tuple[str, int]:
    key, sep, value = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected KEY=VALUE, got {text!r}")
    try:
        return key, int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"size {key} must be an integer, got {value!r}") from None


def cmd_generate(args) -> int:
    size = dict(args.size or [])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        corpus = generate_corpus(args.domain, [size], args.count, seed=args.seed)
    except GeneratorError as exc:
        raise CliError(str(exc)) from None
    (out / "domain.pddl").write_text(DOMAINS[args.domain])
    for name, text in corpus:
        (out / f"{name}.pddl").write_text(text)
    print(f"wrote {len(corpus)} problems to {out}")
    return EXIT_OK


# --- parser ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nlmplan", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"nlmplan {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("plan", help="solve one problem")
    sp.add_argument("--domain", required=True)
    sp.add_argument("--problem", required=True)
    sp.add_argument("--search", choices=ALGORITHMS, default="gbfs")
    sp.add_argument("--heuristic", default="hff", help=f"one of {', '.join(HEURISTIC_IDS)} or learned:PATH")
    sp.add_argument("--eval-limit", type=int, default=DEFAULT_EVAL_LIMIT)
    sp.add_argument("--plan-out", help="also write the plan to this file")
    sp.set_defaults(func=cmd_plan)

    tp = sub.add_parser("train", help="learn a value function")
    tp.add_argument("--domain", required=True)
    tp.add_argument("--problems", required=True, help="directory of problem files")
    tp.add_argument("--shaping", choices=SHAPING_IDS, default="none")
    tp.add_argument("--steps", type=int, default=50_000)
    tp.add_argument("--seed", type=int, default=0)
    tp.add_argument("--out", required=True, help="checkpoint path")
    d = TrainConfig()
    tp.add_argument("--gamma", type=float, default=d.gamma)
    tp.add_argument("--tau", type=float, default=d.tau)
    tp.add_argument("--layers", type=int, default=d.layers)
    tp.add_argument("--max-arity", type=int, default=d.max_arity)
    tp.add_argument("--features", type=int, default=d.features)
    tp.add_argument("--batch", type=int, default=d.batch)
    tp.add_argument("--buffer", type=int, default=d.buffer)
    tp.add_argument("--episode-cap", type=int, default=d.episode_cap)
    tp.add_argument("--lr", type=float, default=d.lr)
    tp.add_argument("--checkpoint-every", type=int, default=0, help="also checkpoint every N steps")
    tp.set_defaults(func=cmd_train)

    rp = sub.add_parser("replay", help="rerun a training run from its manifest")
    rp.add_argument("manifest")
    rp.add_argument("--out", required=True)
    rp.set_defaults(func=cmd_replay)

    ep = sub.add_parser("eval", help="evaluate heuristics over a problem set")
    ep.add_argument("--domain", required=True)
    ep.add_argument("--problems", required=True)
    ep.add_argument("--heuristics", default="", help="comma-separated heuristic ids")
    ep.add_argument("--model", action="append", help="learned model checkpoint (repeatable)")
    ep.add_argument("--search", choices=ALGORITHMS, default="gbfs")
    ep.add_argument("--eval-limit", type=int, default=DEFAULT_EVAL_LIMIT)
    ep.add_argument("--out", required=True, help="CSV report path")
    ep.set_defaults(func=cmd_eval)

    gp = sub.add_parser("generate", help="write random problem instances")
    gp.add_argument("domain", choices=sorted(BOUNDS))
    gp.add_argument("--size", type=_size, action="append", help="KEY=VALUE, e.g. blocks=5")
    gp.add_argument("--count", type=int, default=1)
    gp.add_argument("--seed", type=int, default=0)
    gp.add_argument("--out", required=True)
    gp.set_defaults(func=cmd_generate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SignatureMismatch as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (CliError, PddlError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
