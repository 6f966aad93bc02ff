import csv
import json

import pytest

from nlmplan import checkpoint
from nlmplan.cli import main
from nlmplan.generators import DOMAINS, generate
from nlmplan.task import load, validate_plan

SMALL_NET = ["--layers", "3", "--max-arity", "2", "--features", "4", "--batch", "4"]


def write_problems(root, domain, count, **size):
    root.mkdir(parents=True, exist_ok=True)
    (root / "domain.pddl").write_text(DOMAINS[domain])
    for s in range(count):
        (root / f"p{s}.pddl").write_text(generate(domain, s, **size))
    return root / "domain.pddl", root


def train_args(domain, problems, out, steps=15, seed=0):
    return ["train", "--domain", str(domain), "--problems", str(problems), "--out", str(out),
            "--steps", str(steps), "--seed", str(seed), "--shaping", "hff", *SMALL_NET]


@pytest.fixture(scope="module")
def gripper(tmp_path_factory):
    return write_problems(tmp_path_factory.mktemp("gripper"), "gripper", 3, balls=1)


@pytest.fixture(scope="module")
def blocks(tmp_path_factory):
    return write_problems(tmp_path_factory.mktemp("blocks"), "blocks", 3, blocks=3)


@pytest.fixture(scope="module")
def gripper_model(gripper, tmp_path_factory):
    domain, problems = gripper
    out = tmp_path_factory.mktemp("model") / "g.ckpt"
    assert main(train_args(domain, problems, out)) == 0
    return out


def test_plan_solves_and_writes_valid_plan(gripper, tmp_path, capsys):
    domain, problems = gripper
    plan_file = tmp_path / "plan.txt"
    code = main(["plan", "--domain", str(domain), "--problem", str(problems / "p0.pddl"),
                 "--heuristic", "hff", "--plan-out", str(plan_file)])
    out = capsys.readouterr().out.splitlines()
    assert code == 0
    assert out[0] == "instance,objects,algorithm,heuristic,status,evaluations,expansions,plan_length,seconds"
    fields = dict(zip(out[0].split(","), out[1].split(",")))
    assert fields["status"] == "solved" and fields["heuristic"] == "hff"
    task = load(domain, problems / "p0.pddl")
    names = {str(a): i for i, a in enumerate(task.actions)}
    plan = [names[line] for line in plan_file.read_text().splitlines()]
    assert len(plan) == int(fields["plan_length"]) and validate_plan(task, plan)


def test_plan_hits_eval_limit(blocks, capsys):
    domain, problems = blocks
    code = main(["plan", "--domain", str(domain), "--problem", str(problems / "p0.pddl"),
                 "--heuristic", "blind", "--eval-limit", "1"])
    assert code == 1
    assert ",limit_reached," in capsys.readouterr().out


def test_plan_input_errors_exit_2(blocks, tmp_path, capsys):
    domain, problems = blocks
    bad = tmp_path / "bad.pddl"
    bad.write_text("(define (problem x) (:domain blocksworld) (:objects a) (:init (ontable a)")
    assert main(["plan", "--domain", str(domain), "--problem", str(bad)]) == 2
    assert main(["plan", "--domain", str(domain), "--problem", str(tmp_path / "missing.pddl")]) == 2
    assert main(["plan", "--domain", str(domain), "--problem", str(problems / "p0.pddl"),
                 "--heuristic", "hmax"]) == 2
    err = capsys.readouterr().err
    assert err.count("error:") == 3


def test_plan_with_learned_model(gripper, gripper_model, capsys):
    domain, problems = gripper
    code = main(["plan", "--domain", str(domain), "--problem", str(problems / "p1.pddl"),
                 "--heuristic", f"learned:{gripper_model}"])
    assert code == 0
    assert ",solved," in capsys.readouterr().out


def test_plan_with_foreign_model_fails_fast(blocks, gripper_model, capsys):
    domain, problems = blocks
    code = main(["plan", "--domain", str(domain), "--problem", str(problems / "p0.pddl"),
                 "--heuristic", f"learned:{gripper_model}"])
    assert code == 2
    err = capsys.readouterr().err
    assert checkpoint.load(gripper_model).fingerprint in err


def test_train_zero_steps_saves_initial_model(gripper, tmp_path):
    domain, problems = gripper
    out = tmp_path / "zero.ckpt"
    assert main(train_args(domain, problems, out, steps=0)) == 0
    assert out.exists()
    assert (tmp_path / "zero.ckpt.metrics.jsonl").read_text() == ""


def test_train_is_reproducible_and_replayable(gripper, tmp_path, capsys):
    domain, problems = gripper
    a, b, c = tmp_path / "a.ckpt", tmp_path / "b.ckpt", tmp_path / "c.ckpt"
    assert main(train_args(domain, problems, a, seed=3)) == 0
    assert main(train_args(domain, problems, b, seed=3)) == 0
    assert a.read_bytes() == b.read_bytes()
    metrics_a = (tmp_path / "a.ckpt.metrics.jsonl").read_text()
    assert metrics_a == (tmp_path / "b.ckpt.metrics.jsonl").read_text()
    records = [json.loads(line) for line in metrics_a.splitlines()]
    assert [r["sgd_step"] for r in records] == list(range(1, 16))
    manifest = json.loads((tmp_path / "a.ckpt.manifest.json").read_text())
    assert manifest["seed"] == 3 and manifest["config"]["shaping"] == "hff"
    assert len(manifest["instances"]) == 3
    assert main(["replay", str(tmp_path / "a.ckpt.manifest.json"), "--out", str(c)]) == 0
    assert c.read_bytes() == a.read_bytes()
    assert (tmp_path / "c.ckpt.metrics.jsonl").read_text() == metrics_a


def test_replay_refuses_changed_inputs(tmp_path, capsys):
    domain, problems = write_problems(tmp_path / "data", "gripper", 2, balls=1)
    out = tmp_path / "m.ckpt"
    assert main(train_args(domain, problems, out, steps=2)) == 0
    (problems / "p1.pddl").write_text(generate("gripper", 99, balls=1))
    assert main(["replay", str(tmp_path / "m.ckpt.manifest.json"), "--out", str(tmp_path / "r.ckpt")]) == 2
    assert "changed" in capsys.readouterr().err


def test_train_rejects_trivial_problem_sets(tmp_path, capsys):
    root = tmp_path / "triv"
    root.mkdir()
    (root / "domain.pddl").write_text(DOMAINS["blocks"])
    (root / "p.pddl").write_text(
        "(define (problem t) (:domain blocksworld) (:objects a) (:init (ontable a) (clear a) (handempty))"
        " (:goal (and (ontable a))))"
    )
    assert main(train_args(root / "domain.pddl", root, tmp_path / "m.ckpt")) == 2
    assert "trivial" in capsys.readouterr().err


def test_eval_writes_rows_and_summary(gripper, gripper_model, tmp_path, capsys):
    domain, problems = gripper
    report = tmp_path / "r.csv"
    code = main(["eval", "--domain", str(domain), "--problems", str(problems), "--heuristics", "blind",
                 "--model", str(gripper_model), "--out", str(report)])
    assert code == 0
    with open(report, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 6
    assert {r["heuristic"] for r in rows} == {"blind", f"learned:{gripper_model}"}
    summ = json.loads((tmp_path / "r.csv.summary.json").read_text())
    assert summ["coverage"]["blind"] == 3
    assert len(summ["paired"]) == 1
    out = capsys.readouterr().out
    assert "coverage blind: 3/3" in out and "paired " in out


def test_eval_with_no_heuristics_writes_header_only(gripper, tmp_path):
    domain, problems = gripper
    report = tmp_path / "empty.csv"
    assert main(["eval", "--domain", str(domain), "--problems", str(problems), "--out", str(report)]) == 0
    assert len(report.read_text().splitlines()) == 1


def test_generate_command(tmp_path, capsys):
    out = tmp_path / "gen"
    assert main(["generate", "ferry", "--size", "locations=3", "--size", "cars=2", "--count", "4",
                 "--seed", "1", "--out", str(out)]) == 0
    files = sorted(p.name for p in out.glob("*.pddl"))
    assert "domain.pddl" in files and len(files) >= 2
    assert main(["generate", "ferry", "--size", "locations=1", "--size", "cars=2", "--out", str(out)]) == 2


def test_usage_errors_exit_2():
    with pytest.raises(SystemExit) as exc:
        main(["plan"])
    assert exc.value.code == 2
