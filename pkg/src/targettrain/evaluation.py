"""Evaluation protocols and deterministic reports.

A plan names a dataset slice, a set of model files and an ordered list of
cells. Each cell is one of ``clean``, ``attack``, ``transfer`` or
``adaptive``. Cells run in plan order; a failing cell is recorded with its
error code and the run continues.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .attacks import AdversarialBatch, AttackConfig, run_attack
from .data import Dataset, balanced_subset, load_cifar10, load_mnist, synth_gaussians
from .errors import ConfigurationError, ContractError, WorkbenchError
from .model import Model, TruncatedView, load_model

CELL_KINDS = ("clean", "attack", "transfer", "adaptive")
CSV_COLUMNS = (
    "table-tag",
    "dataset",
    "defense",
    "attack",
    "norm",
    "mode",
    "kappa",
    "epsilon",
    "accuracy-pct",
    "success-rate-pct",
    "mean-l2",
    "mean-linf",
    "n",
    "seed",
)


# --------------------------------------------------------------------------
# plans
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Cell:
    kind: str
    model: str
    table: str = ""
    victim: str | None = None
    attack: AttackConfig | None = None
    adaptive_label: str = "true"

    def __post_init__(self):
        if self.kind not in CELL_KINDS:
            raise ConfigurationError(f"unknown cell kind {self.kind!r}")
        if self.kind == "clean" and self.attack is not None:
            raise ConfigurationError("clean cells take no attack")
        if self.kind != "clean" and self.attack is None:
            raise ConfigurationError(f"{self.kind} cells need an attack")
        if self.kind == "transfer" and not self.victim:
            raise ConfigurationError("transfer cells need a victim model")
        if self.adaptive_label not in ("true", "duplicate"):
            raise ConfigurationError("adaptive_label must be 'true' or 'duplicate'")

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["attack"] = None if self.attack is None else self.attack.to_dict()
        return d


@dataclass(frozen=True)
class ExperimentPlan:
    dataset: dict[str, Any]
    models: dict[str, str]
    cells: tuple[Cell, ...] = ()
    seed: int = 0
    name: str = "plan"
    base_dir: str = "."

    @classmethod
    def from_dict(cls, d: dict[str, Any], base_dir=".", seed: int | None = None, subset: int | None = None):
        """Parse a plan mapping; ``seed`` and ``subset`` override the file's values."""
        if not isinstance(d, dict):
            raise ConfigurationError("a plan must be a mapping")
        extra = set(d) - {"name", "seed", "dataset", "models", "cells"}
        if extra:
            raise ConfigurationError(f"unknown plan keys: {sorted(extra)}")
        plan_seed = int(d.get("seed", 0) if seed is None else seed)
        dataset = dict(d.get("dataset") or {})
        if "name" not in dataset:
            raise ConfigurationError("plan dataset needs a name")
        if subset is not None:
            dataset["subset"] = int(subset)
        cells = []
        for i, raw in enumerate(d.get("cells") or []):
            raw = dict(raw)
            atk = raw.pop("attack", None)
            if atk is not None:
                atk = dict(atk)
                if seed is not None or "seed" not in atk:
                    atk["seed"] = plan_seed
                atk = AttackConfig.from_dict(atk)
            try:
                cells.append(Cell(attack=atk, **raw))
            except TypeError as exc:
                raise ConfigurationError(f"cell {i}: {exc}") from None
        return cls(dataset, dict(d.get("models") or {}), tuple(cells), plan_seed, str(d.get("name", "plan")), str(base_dir))

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "seed": self.seed,
            "dataset": self.dataset,
            "models": self.models,
            "cells": [c.to_dict() for c in self.cells],
        }

    def model_path(self, ref: str) -> Path:
        if ref not in self.models:
            raise ConfigurationError(f"cell references unknown model {ref!r}")
        p = Path(self.models[ref])
        return p if p.is_absolute() else Path(self.base_dir) / p

    def validate(self) -> None:
        """Fail fast: every cell must resolve to existing model files."""
        for i, cell in enumerate(self.cells):
            refs = [cell.model] + ([cell.victim] if cell.victim else [])
            for ref in refs:
                path = self.model_path(ref)
                if not path.exists():
                    raise ConfigurationError(f"cell {i}: model file {path} does not exist")


def load_plan_dataset(spec: dict[str, Any], seed: int, base_dir=".") -> Dataset:
    name = spec["name"]
    split = spec.get("split", "test")
    root = spec.get("path")
    if root is not None and not Path(root).is_absolute():
        root = Path(base_dir) / root
    if name == "mnist":
        d = load_mnist(root, split)
    elif name == "cifar10":
        if root is None:
            raise ConfigurationError("cifar10 datasets need a path")
        d = load_cifar10(root, split)
    elif name == "synth":
        d = synth_gaussians(int(spec.get("n_per_class", 500)), sigma=float(spec.get("sigma", 0.05)), seed=int(spec.get("data_seed", seed)))
    else:
        raise ConfigurationError(f"unknown dataset {name!r}")
    if spec.get("subset"):
        d = balanced_subset(d, int(spec["subset"]), seed=seed)
    return d


# --------------------------------------------------------------------------
# reports
# --------------------------------------------------------------------------


@dataclass
class CellResult:
    table: str
    kind: str
    dataset: str
    defense: str
    attack: str
    norm: str
    mode: str
    kappa: float | None
    epsilon: float | None
    accuracy: float | None
    success_rate: float | None
    mean_l2: float | None
    mean_linf: float | None
    n: int
    seed: int
    status: str = "ok"
    error: str | None = None
    source_defense: str | None = None

    def csv_row(self) -> list[str]:
        return [
            self.table,
            self.dataset,
            self.defense,
            self.attack,
            self.norm,
            self.mode,
            _fmt(self.kappa, "g"),
            _fmt(self.epsilon, "g"),
            _fmt(self.accuracy, ".2f"),
            _fmt(self.success_rate, ".2f"),
            _fmt(self.mean_l2, ".6f"),
            _fmt(self.mean_linf, ".6f"),
            str(self.n),
            str(self.seed),
        ]


def _fmt(v, spec: str) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return format(v, spec)


@dataclass
class EvaluationReport:
    plan: dict[str, Any]
    cells: list[CellResult] = field(default_factory=list)
    version: str = __version__
    wall_time: dict[str, float] = field(default_factory=dict)

    def to_dict(self, timing: bool = False) -> dict[str, Any]:
        d = {"format": "targettrain-report", "version": self.version, "plan": self.plan, "cells": [dataclasses.asdict(c) for c in self.cells]}
        if timing:
            d["wall_time"] = self.wall_time
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "EvaluationReport":
        if d.get("format") != "targettrain-report":
            raise ConfigurationError("not a targettrain report")
        return cls(d["plan"], [CellResult(**c) for c in d["cells"]], d["version"], d.get("wall_time", {}))

    def tables(self) -> list[str]:
        return sorted({c.table for c in self.cells})

    def csv_text(self, table: str | None = None) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(CSV_COLUMNS)
        for c in self.cells:
            if table is None or c.table == table:
                wr.writerow(c.csv_row())
        return buf.getvalue()


def write_report(report: EvaluationReport, path, fmt: str = "structured") -> Path:
    """Write ``csv`` or ``structured`` (sorted JSON with the full plan echo)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "csv":
        path.write_text(report.csv_text())
    elif fmt == "structured":
        path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    else:
        raise ConfigurationError(f"unknown report format {fmt!r}")
    return path


def read_report(path) -> EvaluationReport:
    return EvaluationReport.from_dict(json.loads(Path(path).read_text()))


def write_outputs(report: EvaluationReport, out_dir) -> list[Path]:
    """The structured report, an all-cells CSV, one CSV per table tag and a timing sidecar."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [write_report(report, out / "report.json"), write_report(report, out / "report.csv", "csv")]
    for tag in report.tables():
        if tag:
            p = out / f"{tag}.csv"
            p.write_text(report.csv_text(tag))
            paths.append(p)
    (out / "timing.json").write_text(json.dumps(report.wall_time, indent=2, sort_keys=True) + "\n")
    return paths


# --------------------------------------------------------------------------
# protocols
# --------------------------------------------------------------------------


def eval_accuracy(model, data: Dataset) -> float:
    if len(data) == 0:
        raise ContractError("cannot evaluate on an empty slice")
    return 100.0 * float((model.predict(data.samples) == data.labels).mean())


def _defense(model) -> str:
    return str(model.metadata.get("defense", "none"))


def _mean(v: np.ndarray) -> float | None:
    return float(v.mean()) if v.size else None


def _attack_cell(table, data, defense, cfg: AttackConfig, batch: AdversarialBatch, scorer, seed) -> CellResult:
    acc = 100.0 * float((scorer.predict(batch.adversarials) == data.labels).mean())
    ok = batch.success
    return CellResult(
        table=table,
        kind="attack",
        dataset=data.name,
        defense=defense,
        attack=cfg.name,
        norm=cfg.norm,
        mode=cfg.mode,
        kappa=float(cfg.kappa) if cfg.family == "cw" else None,
        epsilon=float(cfg.epsilon) if cfg.family in ("fgsm", "pgd", "bim") else None,
        accuracy=acc,
        success_rate=100.0 * batch.success_rate,
        mean_l2=_mean(batch.l2[ok]),
        mean_linf=_mean(batch.linf[ok]),
        n=len(data),
        seed=int(seed),
    )


def eval_clean(model, data: Dataset, table: str = "", seed: int = 0) -> CellResult:
    return CellResult(table, "clean", data.name, _defense(model), "none", "", "", None, None, eval_accuracy(model, data), None, None, None, len(data), int(seed))


def eval_under_attack(model, data: Dataset, cfg: AttackConfig, table: str = "") -> tuple[CellResult, AdversarialBatch]:
    """Attack ``model`` on ``data`` and score its predictions on the returned samples."""
    if len(data) == 0:
        raise ContractError("cannot evaluate on an empty slice")
    batch = run_attack(model, data.samples, data.labels, cfg)
    return _attack_cell(table, data, _defense(model), cfg, batch, model, cfg.seed), batch


def eval_transferability(
    source, victim, data: Dataset, cfg: AttackConfig, table: str = "", source_batch: AdversarialBatch | None = None
) -> tuple[CellResult, AdversarialBatch]:
    """Craft adversarials on ``source``; score them on ``victim``.

    ``source_batch`` reuses adversarials already crafted on ``source`` for
    this ``data`` and ``cfg`` (one source batch scored on several victims).
    """
    if source.spec.dataset != victim.spec.dataset or source.spec.input_shape != victim.spec.input_shape:
        raise ContractError("source and victim models were built for different datasets")
    if len(data) == 0:
        raise ContractError("cannot evaluate on an empty slice")
    if source_batch is None:
        batch = run_attack(source, data.samples, data.labels, cfg)
    else:
        if source_batch.config != cfg or not np.array_equal(source_batch.originals, data.samples):
            raise ContractError("the supplied batch was not crafted for this data and attack config")
        batch = source_batch
    cell = _attack_cell(table, data, _defense(victim), cfg, batch, victim, cfg.seed)
    cell.kind = "transfer"
    cell.source_defense = _defense(source)
    return cell, batch


def eval_adaptive(model: Model, data: Dataset, cfg: AttackConfig, table: str = "", label: str = "true") -> tuple[CellResult, AdversarialBatch]:
    """Attack the truncated ``2k``-softmax surface; score on the full model.

    ``label='true'`` takes the attack loss at the true-label index; ``'duplicate'``
    uses the paired index ``y + k`` instead.
    """
    if not getattr(model, "is_target", False):
        raise ContractError("the adaptive attack needs a model with a 2k-class head")
    if len(data) == 0:
        raise ContractError("cannot evaluate on an empty slice")
    view = TruncatedView(model, wide_labels=label == "duplicate")
    labels = data.labels + model.num_classes if label == "duplicate" else data.labels
    batch = run_attack(view, data.samples, labels, cfg)
    cell = _attack_cell(table, data, _defense(model), cfg, batch, model, cfg.seed)
    cell.kind = "adaptive"
    return cell, batch


def _failed_cell(plan: ExperimentPlan, cell: Cell, exc: Exception, n: int, dataset: str) -> CellResult:
    cfg = cell.attack
    code = getattr(exc, "code", type(exc).__name__)
    return CellResult(
        cell.table,
        cell.kind,
        dataset,
        "",
        cfg.name if cfg else "none",
        cfg.norm if cfg else "",
        cfg.mode if cfg else "",
        None,
        None,
        None,
        None,
        None,
        None,
        n,
        plan.seed,
        status="failed",
        error=f"{code}: {exc}",
    )


def run_plan(plan: ExperimentPlan, log=None) -> EvaluationReport:
    plan.validate()
    report = EvaluationReport(plan.to_dict())
    if not plan.cells:
        return report
    data = load_plan_dataset(plan.dataset, plan.seed, plan.base_dir)
    cache: dict[str, Model] = {}
    # batches crafted directly on a model, keyed by (model ref, attack config)
    crafted: dict[tuple[str, AttackConfig], AdversarialBatch] = {}

    def get(ref: str) -> Model:
        if ref not in cache:
            cache[ref] = load_model(plan.model_path(ref))
        return cache[ref]

    for i, cell in enumerate(plan.cells):
        started = time.perf_counter()
        try:
            m = get(cell.model)
            if cell.kind == "clean":
                res = eval_clean(m, data, cell.table, plan.seed)
            elif cell.kind == "attack":
                res, crafted[cell.model, cell.attack] = eval_under_attack(m, data, cell.attack, cell.table)
            elif cell.kind == "transfer":
                key = (cell.model, cell.attack)
                res, crafted[key] = eval_transferability(
                    m, get(cell.victim), data, cell.attack, cell.table, source_batch=crafted.get(key)
                )
            else:
                res, _ = eval_adaptive(m, data, cell.attack, cell.table, cell.adaptive_label)
        except WorkbenchError as exc:
            res = _failed_cell(plan, cell, exc, len(data), data.name)
        report.cells.append(res)
        report.wall_time[str(i)] = time.perf_counter() - started
        if log is not None:
            acc = "failed" if res.accuracy is None else f"{res.accuracy:.2f}%"
            log(f"cell {i} [{cell.table}] {cell.kind} {res.attack}: {acc}")
    return report
