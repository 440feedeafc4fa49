"""Command line: ``targettrain {train,attack,evaluate,transfer,adaptive} CONFIG``.

Every subcommand reads a YAML (or JSON) config and accepts ``--seed``,
``--out`` and ``--subset-size``. Failures exit nonzero after printing one
JSON line ``{"status": "error", "code": ..., "message": ...}`` to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any

import yaml

from . import __version__
from .attacks import AttackConfig, export_batch, run_attack
from .errors import ConfigurationError, WorkbenchError
from .evaluation import ExperimentPlan, load_plan_dataset, run_plan, write_outputs
from .model import TruncatedView, load_model, save_model, spec_for
from .training import TrainConfig, run_training

log = logging.getLogger("targettrain")


def _load_config(path: str) -> dict[str, Any]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        cfg = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"config {path} is not valid YAML: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigurationError(f"config {path} must be a mapping")
    return cfg


def _take(cfg: dict, key: str, required: bool = True):
    if key not in cfg:
        if required:
            raise ConfigurationError(f"config is missing {key!r}")
        return None
    return cfg[key]


def _write_json(path: Path, obj) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


def cmd_train(args, cfg) -> dict:
    base = Path(args.config).parent
    ds = dict(_take(cfg, "dataset"))
    ds.setdefault("split", "train")
    seed = int(cfg.get("seed", 0) if args.seed is None else args.seed)
    if args.subset_size is not None:
        ds["subset"] = args.subset_size
    data = load_plan_dataset(ds, seed, base)
    eval_spec = cfg.get("eval_dataset")
    eval_data = load_plan_dataset(dict(eval_spec), seed, base) if eval_spec else None
    train = dict(cfg.get("training") or {})
    train["seed"] = seed
    tcfg = TrainConfig.from_dict(train)
    spec = spec_for(str(_take(cfg, "model")), target=tcfg.defense.startswith("target"))
    model, report = run_training(spec, data, tcfg, eval_data=eval_data, log=log.info)
    out = Path(args.out)
    model_path = save_model(model, out / "model.ttm")
    report.model_path = model_path.name
    report.write(out / "train_report.json")
    return {"model": str(model_path), "final_accuracy": report.epochs[-1]["clean_accuracy"] if report.epochs else None}


def _attack_cfg(cfg: dict, seed: int) -> AttackConfig:
    atk = dict(_take(cfg, "attack"))
    atk["seed"] = seed
    return AttackConfig.from_dict(atk)


def cmd_attack(args, cfg) -> dict:
    base = Path(args.config).parent
    seed = int(cfg.get("seed", 0) if args.seed is None else args.seed)
    ds = dict(_take(cfg, "dataset"))
    if args.subset_size is not None:
        ds["subset"] = args.subset_size
    data = load_plan_dataset(ds, seed, base)
    mpath = Path(_take(cfg, "model"))
    model = load_model(mpath if mpath.is_absolute() else base / mpath)
    surface = TruncatedView(model) if cfg.get("surface", "inference") == "softmax2k" else model
    acfg = _attack_cfg(cfg, seed)
    batch = run_attack(surface, data.samples, data.labels, acfg)
    out = Path(args.out)
    npy, sidecar = export_batch(batch, out / "adversarials")
    acc = 100.0 * float((model.predict(batch.adversarials) == data.labels).mean())
    summary = {
        "attack": acfg.to_dict(),
        "n": len(batch),
        "accuracy_pct": acc,
        "success_rate_pct": 100.0 * batch.success_rate,
        "mean_l2": float(batch.l2[batch.success].mean()) if batch.success.any() else None,
    }
    _write_json(out / "attack_summary.json", summary)
    return {"adversarials": str(npy), "sidecar": str(sidecar), "accuracy_pct": acc}


def _run(args, plan_dict: dict) -> dict:
    plan = ExperimentPlan.from_dict(plan_dict, Path(args.config).parent, seed=args.seed, subset=args.subset_size)
    report = run_plan(plan, log=log.info)
    paths = write_outputs(report, args.out)
    failed = [i for i, c in enumerate(report.cells) if c.status != "ok"]
    return {"report": str(paths[0]), "cells": len(report.cells), "failed_cells": failed}


def cmd_evaluate(args, cfg) -> dict:
    return _run(args, cfg)


def cmd_transfer(args, cfg) -> dict:
    plan = {
        "name": cfg.get("name", "transfer"),
        "seed": cfg.get("seed", 0),
        "dataset": _take(cfg, "dataset"),
        "models": {"source": _take(cfg, "source"), "victim": _take(cfg, "victim")},
        "cells": [
            {"table": cfg.get("table", "transfer"), "kind": "transfer", "model": "source", "victim": "victim", "attack": a}
            for a in _attacks(cfg)
        ],
    }
    return _run(args, plan)


def cmd_adaptive(args, cfg) -> dict:
    plan = {
        "name": cfg.get("name", "adaptive"),
        "seed": cfg.get("seed", 0),
        "dataset": _take(cfg, "dataset"),
        "models": {"defended": _take(cfg, "model")},
        "cells": [
            {
                "table": cfg.get("table", "adaptive"),
                "kind": "adaptive",
                "model": "defended",
                "attack": a,
                "adaptive_label": cfg.get("adaptive_label", "true"),
            }
            for a in _attacks(cfg)
        ],
    }
    return _run(args, plan)


def _attacks(cfg: dict) -> list:
    if "attacks" in cfg:
        return list(cfg["attacks"])
    return [_take(cfg, "attack")]


COMMANDS = {
    "train": (cmd_train, "train a model (spec + defense + dataset -> model file)"),
    "attack": (cmd_attack, "attack a model and export the adversarial samples"),
    "evaluate": (cmd_evaluate, "run an experiment plan and write reports"),
    "transfer": (cmd_transfer, "craft adversarials on a source model, score on a victim"),
    "adaptive": (cmd_adaptive, "attack the truncated 2k-softmax surface of a defended model"),
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="targettrain", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"targettrain {__version__}")
    p.add_argument("-q", "--quiet", action="store_true", help="only print the result line")
    sub = p.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("config", help="YAML or JSON config file")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--subset-size", type=int, default=None, help="override the dataset subset size")
    return p


def _error_line(code: str, message: str) -> None:
    print(json.dumps({"status": "error", "code": code, "message": message}), file=sys.stderr)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if exc.code not in (0, None):
            _error_line("usage", "invalid command line")
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s", stream=sys.stderr)
    fn = COMMANDS[args.command][0]
    try:
        result = fn(args, _load_config(args.config))
    except WorkbenchError as exc:
        _error_line(exc.code, str(exc))
        return 2 if isinstance(exc, ConfigurationError) else 1
    except (OSError, KeyError, TypeError, ValueError) as exc:
        _error_line(type(exc).__name__, str(exc))
        return 1
    print(json.dumps({"status": "ok", "command": args.command, **result}, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
