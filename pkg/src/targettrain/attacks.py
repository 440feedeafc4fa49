"""White-box gradient attacks: FGSM, PGD/BIM, DeepFool and Carlini-Wagner (L2 and Linf).

Every attack works against an *attack surface*: any object exposing
``surface_probs``, ``surface_logits``, ``predict``, ``num_outputs`` and
``label_classes`` (a :class:`~targettrain.model.Model` or a
:class:`~targettrain.model.TruncatedView`). Inputs are processed in chunks of
``cfg.chunk`` samples; results are merged in input order.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, ContractError, NumericError
from .optim import adam, optimizer_step
from .tensor import Tape, Tensor

FAMILIES = ("fgsm", "pgd", "bim", "deepfool", "cw")
NORMS = ("L2", "Linf")
MODES = ("untargeted", "targeted")
TANH_SHRINK = 1 - 1e-6
C_LOWER, C_UPPER = 1e-5, 1e10


@dataclass(frozen=True)
class AttackConfig:
    family: str
    # None picks the family's natural norm: L2 for deepfool and cw, Linf otherwise.
    norm: str | None = None
    mode: str = "untargeted"
    epsilon: float = 0.3
    alpha: float = 0.01
    steps: int = 40
    kappa: float = 0.0
    cw_binary_steps: int = 5
    cw_iterations: int = 100
    cw_initial_c: float = 1e-2
    cw_lr: float = 0.1
    deepfool_overshoot: float = 0.02
    deepfool_max_iter: int = 50
    seed: int = 0
    chunk: int = 100

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigurationError(f"unknown attack family {self.family!r}")
        if self.norm is None:
            object.__setattr__(self, "norm", "L2" if self.family in ("deepfool", "cw") else "Linf")
        if self.norm not in NORMS:
            raise ConfigurationError(f"unknown norm {self.norm!r}")
        if self.mode not in MODES:
            raise ConfigurationError(f"unknown attack mode {self.mode!r}")
        if self.epsilon < 0:
            raise ConfigurationError("epsilon must be non-negative")
        if self.kappa < 0:
            raise ConfigurationError("kappa must be non-negative")
        if self.family in ("fgsm", "pgd", "bim") and self.norm != "Linf":
            raise ConfigurationError(f"{self.family} is implemented for the Linf norm only")
        if self.family in ("pgd", "bim"):
            if not self.alpha > 0:
                raise ConfigurationError("alpha must be positive")
            if self.steps < 1:
                raise ConfigurationError("steps must be at least 1")
        if self.family == "deepfool":
            if self.mode == "targeted":
                raise ConfigurationError("targeted attacks are not applicable to deepfool")
            if self.norm != "L2":
                raise ConfigurationError("deepfool is an L2 attack")
            if self.deepfool_max_iter < 1 or self.deepfool_overshoot < 0:
                raise ConfigurationError("deepfool needs max_iter >= 1 and overshoot >= 0")
        if self.family == "cw":
            if self.cw_binary_steps < 1 or self.cw_iterations < 1:
                raise ConfigurationError("cw needs at least one round and one iteration")
            if not C_LOWER <= self.cw_initial_c <= C_UPPER:
                raise ConfigurationError(f"cw initial c must lie in [{C_LOWER}, {C_UPPER}]")
            if not self.cw_lr > 0:
                raise ConfigurationError("cw learning rate must be positive")
        if self.chunk < 1:
            raise ConfigurationError("chunk must be at least 1")

    @property
    def targeted(self) -> bool:
        return self.mode == "targeted"

    @property
    def name(self) -> str:
        if self.family == "cw":
            return f"cw-{self.norm.lower()}"
        return self.family

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "AttackConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigurationError(f"unknown attack config keys: {sorted(extra)}")
        if "family" not in d:
            raise ConfigurationError("attack config needs a family")
        return cls(**d)


@dataclass
class AdversarialBatch:
    originals: np.ndarray
    adversarials: np.ndarray
    labels: np.ndarray
    targets: np.ndarray | None
    success: np.ndarray
    l2: np.ndarray
    linf: np.ndarray
    config: AttackConfig | None = None
    info: dict[str, Any] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def success_rate(self) -> float:
        return float(self.success.mean()) if len(self) else 0.0


def perturbation_norms(orig: np.ndarray, adv: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    d = (adv.astype(np.float64) - orig.astype(np.float64)).reshape(len(orig), -1)
    if not d.size:
        return np.zeros(len(orig)), np.zeros(len(orig))
    return np.sqrt((d * d).sum(axis=1)), np.abs(d).max(axis=1)


def select_target_label(true_label: int, k: int, seed: int) -> int:
    """One target drawn uniformly from the ``k - 1`` labels other than ``true_label``."""
    return int(select_targets(np.array([true_label]), k, np.random.default_rng(seed))[0])


def select_targets(labels: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    if k < 2:
        raise ConfigurationError("targeted attacks need at least two classes")
    labels = np.asarray(labels, dtype=np.int64)
    return (labels + rng.integers(1, k, size=labels.shape)) % k


# --------------------------------------------------------------------------
# gradients on the attack surface
# --------------------------------------------------------------------------


def _ce_grad(model, x: np.ndarray, labels: np.ndarray) -> np.ndarray:
    xt = Tensor(x)
    with Tape() as tape:
        tape.watch(xt)
        loss = T.cross_entropy(model.surface_probs(xt), labels)
        return tape.backward(loss)[xt]


def _logits_grad(model, x: np.ndarray, weights_fn):
    """Surface logits ``Z`` and the input gradient of ``sum(Z * W)`` where ``W = weights_fn(Z)``."""
    xt = Tensor(x)
    with Tape() as tape:
        tape.watch(xt)
        z = model.surface_logits(xt)
        w = weights_fn(z.data)
        g = tape.backward(T.weighted_sum(z, w))[xt]
    return z.data, g


def _sign(g: np.ndarray) -> np.ndarray:
    return np.sign(g).astype(g.dtype)


def fgsm_step(model, x: np.ndarray, labels: np.ndarray, epsilon: float, targeted: bool = False) -> np.ndarray:
    """The raw FGSM point ``clip(x +/- eps * sign(grad))`` with no failure policy applied."""
    g = _sign(_ce_grad(model, x, labels))
    step = -g if targeted else g
    return np.clip(x + np.float32(epsilon) * step, 0.0, 1.0).astype(x.dtype)


def pgd_iterates(model, x: np.ndarray, labels: np.ndarray, cfg: AttackConfig, keep: bool = False):
    """Projected sign-gradient iterates from the clean input (no random start).

    Returns the final iterate, or the list of all iterates when ``keep``.
    """
    eps = np.float32(cfg.epsilon)
    alpha = np.float32(cfg.alpha)
    lo = np.maximum(x - eps, 0.0)
    hi = np.minimum(x + eps, 1.0)
    cur = x.copy()
    trail = []
    for _ in range(cfg.steps):
        g = _sign(_ce_grad(model, cur, labels))
        cur = cur - alpha * g if cfg.targeted else cur + alpha * g
        cur = np.minimum(np.maximum(cur, lo), hi).astype(x.dtype)
        if keep:
            trail.append(cur)
    return trail if keep else cur


# --------------------------------------------------------------------------
# per-chunk attack kernels
# --------------------------------------------------------------------------


def _fgsm_chunk(model, x, labels, targets, cfg):
    goal = targets if cfg.targeted else labels
    return fgsm_step(model, x, goal, cfg.epsilon, cfg.targeted), {}


def _pgd_chunk(model, x, labels, targets, cfg):
    goal = targets if cfg.targeted else labels
    return pgd_iterates(model, x, goal, cfg), {}


def _deepfool_chunk(model, x, labels, targets, cfg):
    n = len(x)
    k = model.num_outputs
    ref = labels
    r_tot = np.zeros(x.shape, dtype=np.float64)
    cur = x.copy()  # linearization point x + r_tot
    adv = x.copy()  # emitted point x + (1 + overshoot) * r_tot
    active = model.predict(x) == ref
    scale = 1.0 + cfg.deepfool_overshoot
    iters = np.zeros(n, dtype=np.int64)
    for _ in range(cfg.deepfool_max_iter):
        idx = np.flatnonzero(active)
        if not idx.size:
            break
        xi = cur[idx]
        ri = ref[idx]
        rows = np.arange(len(idx))
        fdiff = np.empty((len(idx), k))
        grads = np.empty((k,) + xi.shape)
        for j in range(k):

            def weights(z, j=j):
                w = np.zeros_like(z)
                w[:, j] += 1
                w[rows, ri] -= 1
                return w

            z, g = _logits_grad(model, xi, weights)
            fdiff[:, j] = z[:, j].astype(np.float64) - z[rows, ri]
            grads[j] = g
        if not np.isfinite(grads).all():
            raise NumericError("deepfool produced non-finite gradients")
        # Only coordinates that can still move in the step direction count:
        # pixels sitting on a bound of [0, 1] and pushed outward are frozen.
        at_lo = xi <= 0
        at_hi = xi >= 1
        grads[(at_lo & (grads < 0)) | (at_hi & (grads > 0))] = 0
        gflat = grads.reshape(k, len(idx), -1)
        norms = np.sqrt((gflat * gflat).sum(axis=2)).T
        ratio = np.full((len(idx), k), np.inf)
        usable = norms > 0
        usable[rows, ri] = False
        ratio[usable] = np.abs(fdiff[usable]) / norms[usable]
        best = np.argmin(ratio, axis=1)
        stuck = ~np.isfinite(ratio[rows, best])
        coef = np.where(stuck, 0.0, np.abs(fdiff[rows, best]) / np.where(stuck, 1.0, norms[rows, best] ** 2))
        step = coef.reshape((-1,) + (1,) * (x.ndim - 1)) * grads[best, rows]
        r_tot[idx] += step
        cur[idx] = np.clip(x[idx] + r_tot[idx], 0.0, 1.0).astype(x.dtype)
        adv[idx] = np.clip(x[idx] + scale * r_tot[idx], 0.0, 1.0).astype(x.dtype)
        iters[idx] += 1
        still = model.predict(adv[idx]) == ri
        active[idx] = still & ~stuck
    return adv, {"iterations": iters}


def _cw_hits(z: np.ndarray, goal: np.ndarray, kappa: float, targeted: bool):
    """Margin, the strongest competing class and the success mask under confidence ``kappa``."""
    rows = np.arange(len(z))
    other = z.copy()
    other[rows, goal] = -np.inf
    jstar = np.argmax(other, axis=1)
    zg = z[rows, goal].astype(np.float64)
    zo = z[rows, jstar].astype(np.float64)
    margin = zo - zg if targeted else zg - zo
    top = np.argmax(z, axis=1)
    hit = (margin <= -kappa) & ((top == goal) if targeted else (top != goal))
    return margin, jstar, hit


def _cw_chunk(model, x, labels, targets, cfg):
    targeted = cfg.targeted
    goal = targets if targeted else labels
    kappa = float(cfg.kappa)
    linf = cfg.norm == "Linf"
    n = len(x)
    flat_axes = tuple(range(1, x.ndim))
    bshape = (-1,) + (1,) * (x.ndim - 1)

    x64 = x.astype(np.float64)
    best_adv = x.copy()
    best_score = np.full(n, np.inf)
    z0 = model.surface_logits(x).data
    _, _, done = _cw_hits(z0, goal, kappa, targeted)
    best_score[done] = 0.0

    w0 = np.arctanh((2 * x64 - 1) * TANH_SHRINK)
    const = np.full(n, float(cfg.cw_initial_c))
    lower = np.full(n, C_LOWER)
    upper = np.full(n, C_UPPER)
    tau = np.ones(n)
    window = max(1, cfg.cw_iterations // 10)
    todo = np.flatnonzero(~done)
    iterations_run = 0

    for _ in range(cfg.cw_binary_steps):
        if not todo.size:
            break
        live = todo.copy()
        w = w0[live].copy()
        opt = adam(lr=cfg.cw_lr)
        prev = np.full(len(live), np.inf)
        round_hit = np.zeros(n, dtype=bool)
        round_best = np.full(n, np.inf)
        for it in range(cfg.cw_iterations):
            if not live.size:
                break
            iterations_run += 1
            th = np.tanh(w)
            xa = 0.5 * (th + 1)
            xf = xa.astype(x.dtype)
            g_live = goal[live]
            c_live = const[live]
            rows = np.arange(len(live))
            state = {}

            def weights(z):
                margin, jstar, hit = _cw_hits(z, g_live, kappa, targeted)
                on = (margin > -kappa).astype(np.float64) * c_live
                wts = np.zeros(z.shape, dtype=np.float64)
                sign = -1.0 if targeted else 1.0
                wts[rows, g_live] += sign * on
                wts[rows, jstar] -= sign * on
                state.update(margin=margin, hit=hit)
                return wts

            _, gz = _logits_grad(model, xf, weights)
            margin, hit = state["margin"], state["hit"]
            delta = xa - x64[live]
            if linf:
                excess = np.abs(delta) - tau[live].reshape(bshape)
                dist = np.maximum(excess, 0).sum(axis=flat_axes)
                gdist = np.sign(delta) * (excess > 0)
                score = np.abs(xf.astype(np.float64) - x64[live]).max(axis=flat_axes)
            else:
                dist = (delta * delta).sum(axis=flat_axes)
                gdist = 2 * delta
                df = xf.astype(np.float64) - x64[live]
                score = (df * df).sum(axis=flat_axes)
            loss = dist + c_live * np.maximum(margin, -kappa)
            if not np.isfinite(loss).all():
                raise NumericError("cw objective became non-finite")

            better = hit & (score < best_score[live])
            if better.any():
                best_score[live[better]] = score[better]
                best_adv[live[better]] = xf[better]
            round_hit[live[hit]] = True
            upd = hit & (score < round_best[live])
            round_best[live[upd]] = score[upd]

            gw = (gdist + gz.astype(np.float64)) * 0.5 * (1 - th * th)
            w = optimizer_step(opt, {"w": w}, {"w": gw})["w"]

            if (it + 1) % window == 0:
                keep = ~(loss > prev * 0.9999)
                prev = loss
                if not keep.all():
                    live, w, prev = live[keep], w[keep], prev[keep]
                    opt.select(keep)

        # binary search on c, per sample
        succ = round_hit[todo]
        t_ok, t_bad = todo[succ], todo[~succ]
        upper[t_ok] = np.minimum(upper[t_ok], const[t_ok])
        const[t_ok] = (lower[t_ok] + upper[t_ok]) / 2
        lower[t_bad] = np.maximum(lower[t_bad], const[t_bad])
        bounded = upper[t_bad] < C_UPPER
        const[t_bad] = np.where(bounded, (lower[t_bad] + upper[t_bad]) / 2, const[t_bad] * 10)
        np.clip(const, C_LOWER, C_UPPER, out=const)
        if linf:
            shrink = todo[round_hit[todo] & (round_best[todo] < tau[todo])]
            tau[shrink] *= 0.9
    return best_adv, {"cw_iterations": iterations_run, "final_c": const}


_KERNELS = {
    "fgsm": _fgsm_chunk,
    "pgd": _pgd_chunk,
    "bim": _pgd_chunk,
    "deepfool": _deepfool_chunk,
    "cw": _cw_chunk,
}


def run_attack(model, x, labels=None, cfg: AttackConfig | None = None) -> AdversarialBatch:
    """Attack ``x`` and apply the failure policy: failed samples come back unchanged.

    Success means ``predict(adv) != label`` (untargeted) or ``== target``
    (targeted), recomputed on the returned samples. DeepFool accepts
    ``labels=None`` and then uses the model's own predictions as reference.
    """
    if cfg is None:
        raise ConfigurationError("run_attack needs an attack config")
    x = np.asarray(x.data if isinstance(x, Tensor) else x)
    if x.dtype != np.float32:
        x = x.astype(np.float32)
    if labels is None:
        if cfg.family != "deepfool":
            raise ContractError(f"{cfg.family} needs labels")
        labels = model.predict(x)
    labels = T._check_labels(labels, model.label_classes, len(x))
    targets = None
    if cfg.targeted:
        targets = select_targets(labels, model.label_classes, np.random.default_rng(cfg.seed))
    kernel = _KERNELS[cfg.family]
    advs = []
    info: dict[str, Any] = {}
    for s in range(0, len(x), cfg.chunk):
        sl = slice(s, s + cfg.chunk)
        adv, extra = kernel(model, x[sl], labels[sl], None if targets is None else targets[sl], cfg)
        advs.append(np.clip(adv, 0.0, 1.0).astype(x.dtype))
        for key, val in extra.items():
            info.setdefault(key, []).append(val)
    adv = np.concatenate(advs) if advs else x.copy()
    return finalize_batch(model, x, adv, labels, targets, cfg, info)


def finalize_batch(model, x, adv, labels, targets, cfg, info=None) -> AdversarialBatch:
    pred = model.predict(adv)
    ok = pred == targets if targets is not None else pred != labels
    if not ok.all():
        adv = adv.copy()
        adv[~ok] = x[~ok]
        pred[~ok] = model.predict(x[~ok])
    success = pred == targets if targets is not None else pred != labels
    l2, linf = perturbation_norms(x, adv)
    return AdversarialBatch(x, adv, labels, targets, success, l2, linf, cfg, info or {})


def fgsm(model, x, labels, cfg: AttackConfig) -> AdversarialBatch:
    return run_attack(model, x, labels, _as_family(cfg, "fgsm"))


def pgd(model, x, labels, cfg: AttackConfig) -> AdversarialBatch:
    return run_attack(model, x, labels, _as_family(cfg, "pgd"))


def bim(model, x, labels, cfg: AttackConfig) -> AdversarialBatch:
    return run_attack(model, x, labels, _as_family(cfg, "bim"))


def deepfool(model, x, cfg: AttackConfig, labels=None) -> AdversarialBatch:
    return run_attack(model, x, labels, _as_family(cfg, "deepfool"))


def cw(model, x, labels, cfg: AttackConfig) -> AdversarialBatch:
    return run_attack(model, x, labels, _as_family(cfg, "cw"))


def _as_family(cfg: AttackConfig, family: str) -> AttackConfig:
    if cfg.family != family:
        raise ConfigurationError(f"{family} called with a {cfg.family} config")
    return cfg


# --------------------------------------------------------------------------
# export
# --------------------------------------------------------------------------

EXPORT_COLUMNS = ("index", "true-label", "target-label", "success", "l2", "linf")


def export_batch(batch: AdversarialBatch, prefix) -> tuple[Path, Path]:
    """Write ``<prefix>.npy`` (adversarial inputs) and a ``<prefix>.csv`` sidecar."""
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    npy = prefix.with_name(prefix.name + ".npy")
    sidecar = prefix.with_name(prefix.name + ".csv")
    np.save(npy, batch.adversarials, allow_pickle=False)
    with open(sidecar, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(EXPORT_COLUMNS)
        for i in range(len(batch)):
            tgt = "" if batch.targets is None else int(batch.targets[i])
            wr.writerow([i, int(batch.labels[i]), tgt, int(bool(batch.success[i])), f"{batch.l2[i]:.9g}", f"{batch.linf[i]:.9g}"])
    return npy, sidecar


def read_export(prefix) -> dict[str, np.ndarray]:
    prefix = Path(prefix)
    adv = np.load(prefix.with_name(prefix.name + ".npy"), allow_pickle=False)
    with open(prefix.with_name(prefix.name + ".csv"), newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {
        "adversarials": adv,
        "labels": np.array([int(r["true-label"]) for r in rows], dtype=np.int64),
        "success": np.array([r["success"] == "1" for r in rows]),
        "l2": np.array([float(r["l2"]) for r in rows]),
        "linf": np.array([float(r["linf"]) for r in rows]),
    }
