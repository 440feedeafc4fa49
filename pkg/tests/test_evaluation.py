import json

import numpy as np
import pytest

from targettrain import data as D
from targettrain import evaluation as E
from targettrain import model as M
from targettrain.attacks import AttackConfig
from targettrain.errors import ConfigurationError, ContractError

CW_FAST = {"family": "cw", "cw_iterations": 20, "cw_binary_steps": 2}


class Oracle:
    def __init__(self, labels):
        self.labels = labels

    def predict(self, x):
        return self.labels[: len(x)]


class Constant:
    def predict(self, x):
        return np.zeros(len(x), dtype=np.int64)


def ten_class_data(n_per_class=100):
    labels = np.repeat(np.arange(10), n_per_class)
    x = np.zeros((len(labels), 1, 1, 1), np.float32)
    return D.Dataset(x, labels, 10, "toy")


@pytest.fixture
def plan_dir(tmp_path, synth_model, synth_target_model, linear_model):
    M.save_model(synth_model, tmp_path / "default.ttm")
    M.save_model(synth_target_model, tmp_path / "target.ttm")
    M.save_model(linear_model, tmp_path / "linear.ttm")
    return tmp_path


def plan_dict(cells, seed=0):
    return {
        "name": "synth-smoke",
        "seed": seed,
        "dataset": {"name": "synth", "n_per_class": 60, "data_seed": 0},
        "models": {"default": "default.ttm", "target": "target.ttm", "linear": "linear.ttm"},
        "cells": cells,
    }


FULL_CELLS = [
    {"kind": "clean", "model": "default", "table": "table4"},
    {"kind": "clean", "model": "target", "table": "table4"},
    {"kind": "attack", "model": "default", "table": "table1", "attack": {"family": "fgsm", "epsilon": 0.1}},
    {"kind": "attack", "model": "default", "table": "table1", "attack": dict(CW_FAST, mode="targeted")},
    {"kind": "attack", "model": "target", "table": "table2", "attack": {"family": "deepfool"}},
    {"kind": "attack", "model": "target", "table": "table2", "attack": {"family": "pgd", "epsilon": 0.1}},
    {"kind": "attack", "model": "default", "table": "table3", "attack": {"family": "bim", "epsilon": 0.1}},
    {"kind": "transfer", "model": "default", "victim": "target", "table": "table5", "attack": {"family": "deepfool"}},
    {"kind": "adaptive", "model": "target", "table": "table6", "attack": dict(CW_FAST)},
]


# -- accuracy protocols -----------------------------------------------------------


def test_oracle_accuracy():
    d = ten_class_data()
    assert E.eval_accuracy(Oracle(d.labels), d) == 100.0


def test_constant_model_accuracy():
    assert E.eval_accuracy(Constant(), ten_class_data()) == pytest.approx(10.0)


def test_training_beats_untrained(synth_model, synth):
    untrained = M.build_model(M.synth_spec(), seed=0)
    assert E.eval_accuracy(synth_model, synth) > E.eval_accuracy(untrained, synth)


def test_empty_slice():
    empty = D.Dataset(np.zeros((0, 1, 1, 1), np.float32), np.zeros(0, np.int64), 2, "x")
    with pytest.raises(ContractError):
        E.eval_accuracy(Constant(), empty)


def test_eps_zero_attack_matches_clean(synth_model, synth):
    clean = E.eval_clean(synth_model, synth)
    cell, _ = E.eval_under_attack(synth_model, synth, AttackConfig("fgsm", epsilon=0.0))
    assert cell.accuracy == clean.accuracy


def test_accuracy_counts_failed_samples(synth_model, synth):
    cell, batch = E.eval_under_attack(synth_model, synth, AttackConfig("fgsm", epsilon=0.05))
    expected = 100.0 * (synth_model.predict(batch.adversarials) == synth.labels).mean()
    assert cell.accuracy == pytest.approx(expected) and cell.n == len(synth)


def test_self_transfer_identity(synth_model, synth):
    cfg = AttackConfig.from_dict(dict(CW_FAST, seed=3))
    direct, b1 = E.eval_under_attack(synth_model, synth, cfg)
    moved, b2 = E.eval_transferability(synth_model, synth_model, synth, cfg)
    np.testing.assert_array_equal(b1.adversarials, b2.adversarials)
    assert (direct.accuracy, direct.success_rate, direct.mean_l2) == (moved.accuracy, moved.success_rate, moved.mean_l2)


def test_transfer_reuses_source_batch(synth_model, synth_target_model, synth):
    cfg = AttackConfig("deepfool")
    _, batch = E.eval_under_attack(synth_model, synth, cfg)
    a, _ = E.eval_transferability(synth_model, synth_target_model, synth, cfg)
    b, _ = E.eval_transferability(synth_model, synth_target_model, synth, cfg, source_batch=batch)
    assert a == b
    with pytest.raises(ContractError):
        E.eval_transferability(synth_model, synth_target_model, synth, AttackConfig("fgsm"), source_batch=batch)


def test_transfer_dataset_mismatch(synth_model):
    mnist_like = M.build_model(M.mnist_spec())
    with pytest.raises(ContractError):
        E.eval_transferability(synth_model, mnist_like, D.synth_gaussians(5), AttackConfig("fgsm"))


def test_adaptive_needs_2k_head(synth_model, synth):
    with pytest.raises(ContractError):
        E.eval_adaptive(synth_model, synth, AttackConfig("fgsm"))


def test_adaptive_scores_on_full_model(synth_target_model, synth):
    cell, batch = E.eval_adaptive(synth_target_model, synth, AttackConfig("pgd", epsilon=0.2))
    expected = 100.0 * (synth_target_model.predict(batch.adversarials) == synth.labels).mean()
    assert cell.kind == "adaptive" and cell.accuracy == pytest.approx(expected)
    dup, dbatch = E.eval_adaptive(synth_target_model, synth, AttackConfig("pgd", epsilon=0.2), label="duplicate")
    assert (dbatch.labels == synth.labels + 2).all()


# -- plans --------------------------------------------------------------------


def test_plan_validation_is_fail_fast(tmp_path):
    plan = E.ExperimentPlan.from_dict(plan_dict([{"kind": "clean", "model": "default"}]), base_dir=tmp_path)
    with pytest.raises(ConfigurationError):
        E.run_plan(plan)
    with pytest.raises(ConfigurationError):
        E.ExperimentPlan.from_dict(plan_dict([{"kind": "clean", "model": "nope"}]), base_dir=tmp_path).validate()


@pytest.mark.parametrize(
    "cell",
    [
        {"kind": "clean", "model": "default", "attack": {"family": "fgsm"}},
        {"kind": "attack", "model": "default"},
        {"kind": "transfer", "model": "default", "attack": {"family": "fgsm"}},
        {"kind": "boom", "model": "default"},
        {"kind": "clean", "model": "default", "colour": "red"},
        {"kind": "attack", "model": "default", "attack": {"family": "deepfool", "mode": "targeted"}},
    ],
)
def test_malformed_cells(cell):
    with pytest.raises(ConfigurationError):
        E.ExperimentPlan.from_dict(plan_dict([cell]))


def test_plan_seed_override():
    d = plan_dict([{"kind": "attack", "model": "default", "attack": {"family": "fgsm", "seed": 4}}], seed=1)
    assert E.ExperimentPlan.from_dict(d).cells[0].attack.seed == 4
    forced = E.ExperimentPlan.from_dict(d, seed=9, subset=20)
    assert forced.seed == 9 and forced.cells[0].attack.seed == 9 and forced.dataset["subset"] == 20


def test_empty_plan_has_metadata_only(plan_dir):
    report = E.run_plan(E.ExperimentPlan.from_dict(plan_dict([]), base_dir=plan_dir))
    assert report.cells == [] and report.plan["name"] == "synth-smoke"


def test_failed_cell_is_isolated(plan_dir):
    cells = [
        {"kind": "clean", "model": "default"},
        {"kind": "adaptive", "model": "default", "attack": {"family": "fgsm"}},
        {"kind": "clean", "model": "target"},
    ]
    report = E.run_plan(E.ExperimentPlan.from_dict(plan_dict(cells), base_dir=plan_dir))
    assert [c.status for c in report.cells] == ["ok", "failed", "ok"]
    assert "ContractError" in report.cells[1].error or "contract" in report.cells[1].error
    assert report.cells[1].accuracy is None


def test_full_plan_rerun_is_byte_identical(plan_dir, tmp_path_factory):
    outs = []
    for _ in range(2):
        report = E.run_plan(E.ExperimentPlan.from_dict(plan_dict(FULL_CELLS, seed=5), base_dir=plan_dir))
        out = tmp_path_factory.mktemp("run")
        E.write_outputs(report, out)
        outs.append(out)
    names = sorted(p.name for p in outs[0].iterdir())
    assert names == ["report.csv", "report.json", "table1.csv", "table2.csv", "table3.csv", "table4.csv", "table5.csv", "table6.csv", "timing.json"]
    for name in names:
        if name != "timing.json":
            assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    report = E.read_report(outs[0] / "report.json")
    assert all(c.status == "ok" for c in report.cells)


def test_plan_shares_crafted_batches(plan_dir, monkeypatch):
    calls = []
    real = E.run_attack

    def counting(*a, **k):
        calls.append(a[-1])
        return real(*a, **k)

    monkeypatch.setattr(E, "run_attack", counting)
    cells = [
        {"kind": "attack", "model": "default", "attack": {"family": "deepfool"}},
        {"kind": "transfer", "model": "default", "victim": "target", "attack": {"family": "deepfool"}},
        {"kind": "transfer", "model": "default", "victim": "linear", "attack": {"family": "deepfool"}},
    ]
    report = E.run_plan(E.ExperimentPlan.from_dict(plan_dict(cells), base_dir=plan_dir))
    assert len(calls) == 1
    assert [c.kind for c in report.cells] == ["attack", "transfer", "transfer"]


# -- report formats -----------------------------------------------------------------


def _cell(**kw):
    base = dict(
        table="table1", kind="attack", dataset="mnist", defense="none", attack="cw-l2", norm="L2", mode="untargeted",
        kappa=0.0, epsilon=None, accuracy=84.756, success_rate=15.0, mean_l2=1.23456789, mean_linf=None, n=1000, seed=0,
    )
    base.update(kw)
    return E.CellResult(**base)


def test_csv_header_and_formatting(tmp_path):
    report = E.EvaluationReport({"name": "x"}, [_cell()])
    path = E.write_report(report, tmp_path / "r.csv", fmt="csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "table-tag,dataset,defense,attack,norm,mode,kappa,epsilon,accuracy-pct,success-rate-pct,mean-l2,mean-linf,n,seed"
    assert lines[1] == "table1,mnist,none,cw-l2,L2,untargeted,0,,84.76,15.00,1.234568,,1000,0"


def test_accuracy_two_decimals():
    assert _cell(accuracy=84.76).csv_row()[8] == "84.76"


def test_structured_round_trip(tmp_path):
    report = E.EvaluationReport({"name": "x", "seed": 1}, [_cell(), _cell(kind="clean", accuracy=99.1, status="ok")])
    path = E.write_report(report, tmp_path / "r.json")
    back = E.read_report(path)
    assert back == report
    assert json.loads(path.read_text())["format"] == "targettrain-report"


def test_report_rejects_unknown_format(tmp_path):
    with pytest.raises(ConfigurationError):
        E.write_report(E.EvaluationReport({}), tmp_path / "x", fmt="xml")
    (tmp_path / "bad.json").write_text("{}")
    with pytest.raises(ConfigurationError):
        E.read_report(tmp_path / "bad.json")


def test_unwritable_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(OSError):
        E.write_report(E.EvaluationReport({}), blocker / "r.json")
