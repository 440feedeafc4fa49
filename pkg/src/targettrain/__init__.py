"""Target Training and Adversarial Training workbench on a small numpy autodiff engine."""

__version__ = "0.1.0"

from .attacks import AdversarialBatch, AttackConfig, run_attack
from .data import BatchPlan, Dataset, balanced_subset, load_mnist, synth_gaussians
from .errors import WorkbenchError
from .model import Model, ModelSpec, TruncatedView, build_model, load_model, predict_label, save_model
from .training import TrainConfig, TrainReport, run_training

__all__ = [
    "AdversarialBatch",
    "AttackConfig",
    "BatchPlan",
    "Dataset",
    "Model",
    "ModelSpec",
    "TrainConfig",
    "TrainReport",
    "TruncatedView",
    "WorkbenchError",
    "balanced_subset",
    "build_model",
    "load_mnist",
    "load_model",
    "predict_label",
    "run_attack",
    "run_training",
    "save_model",
    "synth_gaussians",
]
