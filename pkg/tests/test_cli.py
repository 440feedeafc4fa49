import json
import shutil
import subprocess
import sys
from pathlib import Path

import pytest
import yaml

from targettrain import cli
from targettrain import evaluation as E
from targettrain.attacks import read_export
from targettrain.training import TrainConfig

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
SYNTH = {"name": "synth", "n_per_class": 40, "data_seed": 0}


def write(path, obj):
    path.write_text(yaml.safe_dump(obj))
    return str(path)


def run(capsys, *argv):
    code = cli.main(["-q", *map(str, argv)])
    out, err = capsys.readouterr()
    return code, out, err


def error_of(err):
    line = [ln for ln in err.splitlines() if ln.startswith("{")][-1]
    return json.loads(line)


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    """Trains a default and a target-clean synth model through the CLI once."""
    root = tmp_path_factory.mktemp("cli")
    models = {}
    for defense in ("none", "target-clean"):
        cfg = {"model": "synth", "dataset": SYNTH, "training": {"defense": defense, "epochs": 8, "batch_size": 32, "lr": 0.01}}
        out = root / defense
        assert cli.main(["-q", "train", write(root / f"{defense}.yaml", cfg), "--out", str(out), "--seed", "0"]) == 0
        models[defense] = out / "model.ttm"
    return root, models


def test_train_writes_model_and_report(trained, capsys):
    root, models = trained
    assert models["none"].exists()
    report = json.loads((root / "none" / "train_report.json").read_text())
    assert len(report["epochs"]) == 8


def test_train_ok_line(tmp_path, capsys):
    cfg = {"model": "synth", "dataset": SYNTH, "training": {"epochs": 1}}
    code, out, _ = run(capsys, "train", write(tmp_path / "c.yaml", cfg), "--out", tmp_path / "o", "--subset-size", 20)
    result = json.loads(out)
    assert code == 0 and result["status"] == "ok" and result["command"] == "train"


def test_attack_exports_batch(trained, tmp_path, capsys):
    _, models = trained
    cfg = {"model": str(models["none"]), "dataset": SYNTH, "attack": {"family": "pgd", "epsilon": 0.1}}
    code, out, _ = run(capsys, "attack", write(tmp_path / "a.yaml", cfg), "--out", tmp_path / "o", "--seed", 3, "--subset-size", 30)
    assert code == 0
    assert json.loads(out)["adversarials"].endswith("adversarials.npy")
    exported = read_export(tmp_path / "o" / "adversarials")
    assert exported["adversarials"].shape[0] == 30
    assert exported["linf"].max() <= 0.1 + 1e-6
    summary = json.loads((tmp_path / "o" / "attack_summary.json").read_text())
    assert summary["attack"]["seed"] == 3 and summary["n"] == 30


def test_evaluate_plan(trained, tmp_path, capsys):
    root, models = trained
    plan = {
        "name": "cli-eval",
        "dataset": SYNTH,
        "models": {"default": str(models["none"]), "target": str(models["target-clean"])},
        "cells": [
            {"kind": "clean", "model": "default", "table": "table4"},
            {"kind": "attack", "model": "target", "table": "table2", "attack": {"family": "deepfool"}},
        ],
    }
    code, out, _ = run(capsys, "evaluate", write(tmp_path / "p.yaml", plan), "--out", tmp_path / "o")
    assert code == 0 and json.loads(out)["failed_cells"] == []
    assert (tmp_path / "o" / "table4.csv").exists() and (tmp_path / "o" / "table2.csv").exists()


def test_transfer(trained, tmp_path, capsys):
    _, models = trained
    cfg = {
        "dataset": SYNTH,
        "source": str(models["none"]),
        "victim": str(models["target-clean"]),
        "attacks": [{"family": "fgsm", "epsilon": 0.2}, {"family": "deepfool"}],
    }
    code, _, _ = run(capsys, "transfer", write(tmp_path / "t.yaml", cfg), "--out", tmp_path / "o")
    report = E.read_report(tmp_path / "o" / "report.json")
    assert code == 0 and [c.kind for c in report.cells] == ["transfer", "transfer"]


def test_adaptive(trained, tmp_path, capsys):
    _, models = trained
    cfg = {"dataset": SYNTH, "model": str(models["target-clean"]), "attack": {"family": "cw", "cw_iterations": 10, "cw_binary_steps": 1}}
    code, _, _ = run(capsys, "adaptive", write(tmp_path / "d.yaml", cfg), "--out", tmp_path / "o")
    report = E.read_report(tmp_path / "o" / "report.json")
    assert code == 0 and report.cells[0].kind == "adaptive" and report.cells[0].status == "ok"


def test_adaptive_on_k_head_reports_failed_cell(trained, tmp_path, capsys):
    _, models = trained
    cfg = {"dataset": SYNTH, "model": str(models["none"]), "attack": {"family": "fgsm"}}
    code, out, _ = run(capsys, "adaptive", write(tmp_path / "d.yaml", cfg), "--out", tmp_path / "o")
    assert code == 0 and json.loads(out)["failed_cells"] == [0]


def test_evaluate_rerun_is_byte_identical(trained, tmp_path, capsys):
    _, models = trained
    plan = {
        "dataset": SYNTH,
        "models": {"default": str(models["none"])},
        "cells": [{"kind": "attack", "model": "default", "attack": {"family": "cw", "cw_iterations": 10, "cw_binary_steps": 2, "mode": "targeted"}}],
    }
    path = write(tmp_path / "p.yaml", plan)
    for out in ("a", "b"):
        assert run(capsys, "evaluate", path, "--out", tmp_path / out, "--seed", 11)[0] == 0
    for name in ("report.json", "report.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


@pytest.mark.parametrize(
    "cfg",
    [
        {"dataset": SYNTH, "training": {}},
        {"model": "resnet", "dataset": SYNTH},
        {"model": "synth", "dataset": {"name": "imagenet"}},
        {"model": "synth", "dataset": SYNTH, "training": {"defense": "magic"}},
        {"model": "synth", "dataset": SYNTH, "training": {"epochs": 1, "colour": "red"}},
    ],
)
def test_config_errors_exit_2(tmp_path, capsys, cfg):
    code, out, err = run(capsys, "train", write(tmp_path / "c.yaml", cfg), "--out", tmp_path / "o")
    assert code == 2 and out == ""
    line = error_of(err)
    assert line["status"] == "error" and line["code"] and line["message"]


def test_missing_config_file(tmp_path, capsys):
    code, _, err = run(capsys, "evaluate", tmp_path / "nope.yaml", "--out", tmp_path / "o")
    assert code == 2 and error_of(err)["status"] == "error"


def test_invalid_yaml(tmp_path, capsys):
    (tmp_path / "c.yaml").write_text("a: [1, 2\n")
    assert run(capsys, "evaluate", tmp_path / "c.yaml", "--out", tmp_path / "o")[0] == 2


def test_missing_model_file(tmp_path, capsys):
    cfg = {"model": str(tmp_path / "absent.ttm"), "dataset": SYNTH, "attack": {"family": "fgsm"}}
    code, _, err = run(capsys, "attack", write(tmp_path / "a.yaml", cfg), "--out", tmp_path / "o")
    assert code != 0 and error_of(err)["status"] == "error"


def test_usage_error(capsys):
    code, _, err = run(capsys, "fly")
    assert code != 0 and error_of(err)["code"] == "usage"


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "targettrain.cli", "evaluate", str(tmp_path / "x.yaml"), "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 2
    assert json.loads(proc.stderr.strip().splitlines()[-1])["status"] == "error"


def test_shipped_synth_configs_run_end_to_end(tmp_path, capsys):
    src = CONFIGS / "synth"
    cfg = tmp_path / "configs" / "synth"
    shutil.copytree(src, cfg)
    runs = tmp_path / "runs"
    assert run(capsys, "train", cfg / "train_default.yaml", "--out", runs / "synth-default")[0] == 0
    assert run(capsys, "train", cfg / "train_target.yaml", "--out", runs / "synth-target")[0] == 0
    for name in ("attack", "evaluate", "transfer", "adaptive"):
        code, out, err = run(capsys, name, cfg / f"{name}.yaml", "--out", runs / name, "--subset-size", 40)
        assert code == 0, err
        assert json.loads(out).get("failed_cells", []) == []


def test_shipped_mnist_configs_validate():
    root = CONFIGS / "mnist"
    for path in sorted(root.glob("train_*.yaml")):
        TrainConfig.from_dict(yaml.safe_load(path.read_text())["training"])
    E.ExperimentPlan.from_dict(yaml.safe_load((root / "evaluate.yaml").read_text()), base_dir=root)
    assert yaml.safe_load((root / "adaptive.yaml").read_text())["adaptive_label"] == "true"
