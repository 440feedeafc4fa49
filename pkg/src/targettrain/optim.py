"""SGD and Adam over named numpy parameter arrays."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import ConfigurationError, DimensionError


@dataclass
class OptimizerState:
    algorithm: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.algorithm not in ("sgd", "adam"):
            raise ConfigurationError(f"unknown optimizer {self.algorithm!r}")
        if self.lr <= 0:
            raise ConfigurationError("learning rate must be positive")

    def select(self, keep: np.ndarray) -> None:
        """Keep only rows ``keep`` of every moment accumulator (per-sample attack loops)."""
        for acc in (self.m, self.v):
            for name in acc:
                acc[name] = acc[name][keep]


def sgd(lr: float = 1e-3) -> OptimizerState:
    return OptimizerState("sgd", lr=lr)


def adam(lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> OptimizerState:
    return OptimizerState("adam", lr=lr, beta1=beta1, beta2=beta2, eps=eps)


def optimizer_step(
    state: OptimizerState,
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
) -> dict[str, np.ndarray]:
    """Apply one update and return new parameter arrays (inputs are not modified)."""
    for name, p in params.items():
        if name not in grads:
            raise DimensionError(f"no gradient for parameter {name!r}")
        if grads[name].shape != p.shape:
            raise DimensionError(f"gradient shape {grads[name].shape} does not match parameter {name!r} {p.shape}")
    state.step += 1
    out = {}
    if state.algorithm == "sgd":
        for name, p in params.items():
            out[name] = (p - state.lr * grads[name]).astype(p.dtype)
        return out
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1**t
    c2 = 1 - b2**t
    for name, p in params.items():
        g = grads[name]
        m = state.m.get(name)
        if m is None or m.shape != p.shape:
            m = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * (g * g)
        state.m[name] = m.astype(p.dtype)
        state.v[name] = v.astype(p.dtype)
        update = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        out[name] = (p - update).astype(p.dtype)
    return out
