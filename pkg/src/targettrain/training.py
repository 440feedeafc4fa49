"""Default training, Adversarial Training and the two Target Training regimes."""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import tensor as T
from .attacks import AttackConfig, run_attack
from .data import BatchPlan, Dataset, batch_indices
from .errors import ConfigurationError, ContractError
from .model import Model, ModelSpec, build_model, l2_penalty
from .optim import OptimizerState, optimizer_step
from .tensor import Tape, Tensor

DEFENSES = ("none", "adversarial", "target-clean", "target-adv")
NEEDS_ATTACK = ("adversarial", "target-adv")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 5
    batch_size: int = 64
    optimizer: str = "adam"
    lr: float = 1e-3
    seed: int = 0
    defense: str = "none"
    attack: AttackConfig | None = None
    # Second attack for the experimental three-band batch of target-adv training.
    attack2: AttackConfig | None = None

    def __post_init__(self):
        if self.defense not in DEFENSES:
            raise ConfigurationError(f"unknown defense {self.defense!r}")
        if self.epochs < 0:
            raise ConfigurationError("epochs must be non-negative")
        if self.batch_size < 1:
            raise ConfigurationError("batch size must be at least 1")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigurationError(f"unknown optimizer {self.optimizer!r}")
        if self.defense in NEEDS_ATTACK and self.attack is None:
            raise ConfigurationError(f"defense {self.defense!r} needs an attack config")
        if self.defense not in NEEDS_ATTACK and (self.attack is not None or self.attack2 is not None):
            raise ConfigurationError(f"defense {self.defense!r} does not take an attack config")
        if self.attack2 is not None and self.defense != "target-adv":
            raise ConfigurationError("a second attack is only supported for target-adv training")

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["attack"] = None if self.attack is None else self.attack.to_dict()
        d["attack2"] = None if self.attack2 is None else self.attack2.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "TrainConfig":
        d = dict(d)
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigurationError(f"unknown training config keys: {sorted(extra)}")
        for key in ("attack", "attack2"):
            if d.get(key) is not None:
                d[key] = AttackConfig.from_dict(d[key])
        return cls(**d)


@dataclass
class TrainReport:
    config: dict[str, Any]
    spec: dict[str, Any]
    dataset: str
    n_train: int
    epochs: list[dict[str, Any]] = field(default_factory=list)
    attack_failures: int = 0
    wall_time: float = 0.0
    model_path: str | None = None

    def to_dict(self, timing: bool = False) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        if not timing:
            d.pop("wall_time")
        return d

    def write(self, path) -> Path:
        """Deterministic JSON report; wall time goes to a ``.timing.json`` sidecar."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        path.with_suffix(".timing.json").write_text(json.dumps({"wall_time": self.wall_time}) + "\n")
        return path


# --------------------------------------------------------------------------
# batch construction (pure)
# --------------------------------------------------------------------------


def default_batch(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return x, np.asarray(y, dtype=np.int64)


def target_clean_batch(x: np.ndarray, y: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Originals with ``y`` followed by identical duplicates labelled ``y + k``."""
    y = np.asarray(y, dtype=np.int64)
    return np.concatenate([x, x]), np.concatenate([y, y + k])


def adversarial_batch(x: np.ndarray, y: np.ndarray, adv: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Originals and adversarial samples, both with the ground truth."""
    y = np.asarray(y, dtype=np.int64)
    return np.concatenate([x, adv]), np.concatenate([y, y])


def target_adv_batch(x: np.ndarray, y: np.ndarray, advs, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Originals with ``y``, then each adversarial set labelled ``y + k``."""
    y = np.asarray(y, dtype=np.int64)
    if isinstance(advs, np.ndarray):
        advs = [advs]
    return np.concatenate([x, *advs]), np.concatenate([y] + [y + k] * len(advs))


# --------------------------------------------------------------------------
# steps
# --------------------------------------------------------------------------


def make_optimizer(cfg: TrainConfig) -> OptimizerState:
    return OptimizerState(cfg.optimizer, lr=cfg.lr)


def fit_step(model: Model, opt: OptimizerState, x: np.ndarray, y: np.ndarray, rng: np.random.Generator) -> float:
    """One optimizer step of softmax cross-entropy (plus kernel L2) on ``(x, y)``."""
    leaves = {name: Tensor(arr) for name, arr in model.params.items()}
    with Tape() as tape:
        tape.watch(*leaves.values())
        probs = model.forward_softmax(Tensor(x), train=True, rng=rng, leaves=leaves)
        ce = T.cross_entropy(probs, y)
        reg = l2_penalty(model, leaves)
        loss = ce if reg is None else ce + reg
        grads = tape.backward(loss)
    named = {name: grads[leaf] for name, leaf in leaves.items()}
    model.set_params(optimizer_step(opt, model.params, named))
    return float(ce.data)


def _require_head(model: Model, target: bool) -> None:
    if target and not model.is_target:
        raise ContractError("this training step needs a model with a 2k-class head")
    if not target and model.is_target:
        raise ContractError("this training step needs a model with a k-class head")


def _attack(model: Model, x: np.ndarray, y: np.ndarray, cfg: AttackConfig) -> tuple[np.ndarray, int]:
    batch = run_attack(model, x, y, cfg)
    return batch.adversarials, int((~batch.success).sum())


def default_step(model, opt, x, y, rng) -> tuple[float, int]:
    _require_head(model, False)
    return fit_step(model, opt, *default_batch(x, y), rng), 0


def target_training_clean_step(model, opt, x, y, rng) -> tuple[float, int]:
    _require_head(model, True)
    T._check_labels(y, model.num_classes, len(y))
    return fit_step(model, opt, *target_clean_batch(x, y, model.num_classes), rng), 0


def adversarial_training_step(model, opt, x, y, attack: AttackConfig, rng) -> tuple[float, int]:
    _require_head(model, False)
    adv, failed = _attack(model, x, y, attack)
    return fit_step(model, opt, *adversarial_batch(x, y, adv), rng), failed


def target_training_adv_step(model, opt, x, y, attacks, rng) -> tuple[float, int]:
    _require_head(model, True)
    T._check_labels(y, model.num_classes, len(y))
    if isinstance(attacks, AttackConfig):
        attacks = [attacks]
    advs, failed = [], 0
    for cfg in attacks:
        adv, f = _attack(model, x, y, cfg)
        advs.append(adv)
        failed += f
    return fit_step(model, opt, *target_adv_batch(x, y, advs, model.num_classes), rng), failed


# --------------------------------------------------------------------------
# drivers
# --------------------------------------------------------------------------


def _check_consistency(spec: ModelSpec, data: Dataset, cfg: TrainConfig) -> None:
    target = cfg.defense.startswith("target")
    if target != spec.is_target:
        raise ConfigurationError(
            f"defense {cfg.defense!r} needs a {'2k' if target else 'k'}-class head, spec has {spec.head_classes}"
        )
    if spec.num_classes != data.k:
        raise ConfigurationError(f"spec has {spec.num_classes} classes, dataset {data.name!r} has {data.k}")
    if data.input_shape != spec.input_shape:
        raise ConfigurationError(f"spec expects inputs {spec.input_shape}, dataset has {data.input_shape}")


def accuracy(model, x: np.ndarray, y: np.ndarray) -> float:
    if not len(y):
        raise ContractError("accuracy of an empty slice is undefined")
    return 100.0 * float((model.predict(x) == y).mean())


def run_training(
    spec: ModelSpec,
    data: Dataset,
    cfg: TrainConfig,
    eval_data: Dataset | None = None,
    log=None,
) -> tuple[Model, TrainReport]:
    """Train for a fixed epoch budget, dispatching each batch to the matching step."""
    _check_consistency(spec, data, cfg)
    if len(data) == 0:
        raise ConfigurationError("cannot train on an empty dataset")
    started = time.perf_counter()
    model = build_model(spec, cfg.seed)
    opt = make_optimizer(cfg)
    rng = np.random.default_rng([cfg.seed, 1])
    plan = BatchPlan(cfg.batch_size, seed=cfg.seed)
    report = TrainReport(cfg.to_dict(), spec.to_dict(), data.name, len(data))
    check = eval_data if eval_data is not None else data
    step_no = 0
    for epoch in range(cfg.epochs):
        losses, failures = [], 0
        for idx in batch_indices(len(data), plan, epoch):
            x, y = data.samples[idx], data.labels[idx]
            if cfg.defense == "none":
                loss, failed = default_step(model, opt, x, y, rng)
            elif cfg.defense == "target-clean":
                loss, failed = target_training_clean_step(model, opt, x, y, rng)
            elif cfg.defense == "adversarial":
                attack = dataclasses.replace(cfg.attack, seed=cfg.attack.seed + step_no)
                loss, failed = adversarial_training_step(model, opt, x, y, attack, rng)
            else:
                attacks = [dataclasses.replace(a, seed=a.seed + step_no) for a in (cfg.attack, cfg.attack2) if a]
                loss, failed = target_training_adv_step(model, opt, x, y, attacks, rng)
            losses.append(loss)
            failures += failed
            step_no += 1
        acc = accuracy(model, check.samples, check.labels)
        report.epochs.append(
            {"epoch": epoch + 1, "loss": float(np.mean(losses)), "clean_accuracy": acc, "attack_failures": failures}
        )
        report.attack_failures += failures
        if log is not None:
            log(f"epoch {epoch + 1}/{cfg.epochs} loss={np.mean(losses):.4f} acc={acc:.2f}%")
    model.metadata.update({"seed": cfg.seed, "epochs": cfg.epochs, "defense": cfg.defense, "dataset": data.name})
    model.freeze()
    report.wall_time = time.perf_counter() - started
    return model, report


def train_default(spec: ModelSpec, data: Dataset, cfg: TrainConfig | None = None, **kw) -> tuple[Model, TrainReport]:
    cfg = cfg or TrainConfig()
    if spec.is_target:
        raise ContractError("default training needs a k-class head")
    if spec.num_classes != data.k:
        raise ContractError(f"head has {spec.num_classes} classes but labels span {data.k}")
    if cfg.defense != "none":
        cfg = dataclasses.replace(cfg, defense="none", attack=None, attack2=None)
    return run_training(spec, data, cfg, **kw)
