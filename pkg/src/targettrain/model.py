"""Layer-stack classifiers with a k-class head or a 2k-class head plus pair summation.

A Target-Training model trains a softmax over ``2k`` classes (original label
``i`` and duplicate label ``i + k``). At inference a weightless layer folds
the head back to ``k`` classes with ``y_i = s_i + s_{i+k}``. Default and
Adversarial-Training models end at a ``k``-class softmax.

Every model doubles as an *attack surface*: ``surface_probs``,
``surface_logits`` and ``predict`` describe what an attack sees. For a model
that is the inference head; :class:`TruncatedView` instead exposes the raw
``2k`` softmax of a Target-Training model.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, ContractError, DimensionError, FormatError
from .tensor import Tape, Tensor

LAYER_KINDS = ("conv", "batchnorm", "maxpool", "dropout", "dense", "softmax", "summation")
MODEL_MAGIC = b"TTMODEL1\n"
MODEL_FORMAT = "targettrain-model"
MODEL_VERSION = 1
L2_KERNEL_COEF = 1e-4
BN_MOMENTUM = 0.99
BN_EPS = 1e-5
LOG_FLOOR = float(np.log(T.PROB_FLOOR))


@dataclass(frozen=True)
class Layer:
    kind: str
    units: int = 0
    kernel: int = 3
    activation: str | None = None
    rate: float = 0.0
    padding: str = "valid"

    def describe(self) -> str:
        if self.kind == "conv":
            return f"Conv.{(self.activation or 'linear').title()} {self.kernel}x{self.kernel}x{self.units}"
        if self.kind == "dense":
            return f"Dense {self.units}"
        if self.kind == "softmax":
            return f"Dense.Softmax {self.units}"
        if self.kind == "summation":
            return f"Lambda Summation {self.units}"
        if self.kind == "dropout":
            return f"Dropout {self.rate}"
        return {"batchnorm": "BatchNorm", "maxpool": "MaxPool 2x2"}[self.kind]


@dataclass(frozen=True)
class ModelSpec:
    layers: tuple[Layer, ...]
    input_shape: tuple[int, int, int]
    num_classes: int
    dataset: str = "synth"

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        self.validate()

    @property
    def head_classes(self) -> int:
        return self.layers[self._softmax_index()].units

    @property
    def is_target(self) -> bool:
        return self.layers[-1].kind == "summation"

    def _softmax_index(self) -> int:
        return len(self.layers) - (2 if self.is_target else 1)

    def validate(self) -> None:
        k = self.num_classes
        if k < 2:
            raise ConfigurationError("a classifier needs at least two classes")
        if not self.layers:
            raise ConfigurationError("empty layer list")
        for layer in self.layers:
            if layer.kind not in LAYER_KINDS:
                raise ConfigurationError(f"unknown layer kind {layer.kind!r}")
            if layer.kind in ("conv", "dense", "softmax", "summation") and layer.units < 1:
                raise ConfigurationError(f"{layer.kind} layer needs positive units")
            if layer.kind in ("conv", "dense") and layer.activation not in ("relu", "elu", None):
                raise ConfigurationError(f"unknown activation {layer.activation!r}")
            if layer.kind == "dropout" and not 0 <= layer.rate < 1:
                raise ConfigurationError("dropout rate must be in [0, 1)")
            if layer.kind == "conv" and layer.padding not in ("same", "valid"):
                raise ConfigurationError(f"unknown padding {layer.padding!r}")
        last = self.layers[-1]
        if last.kind == "summation":
            head = self.layers[-2] if len(self.layers) > 1 else None
            if head is None or head.kind != "softmax" or head.units != 2 * k or last.units != k:
                raise ConfigurationError(
                    f"a summation head must follow a softmax of {2 * k} outputs and produce {k}"
                )
        elif last.kind != "softmax" or last.units != k:
            raise ConfigurationError(f"the final layer must be a softmax with {k} outputs")
        body = self.layers[: self._softmax_index()]
        if any(layer.kind in ("softmax", "summation") for layer in body):
            raise ConfigurationError("softmax/summation may only appear at the end")

    def to_dict(self) -> dict[str, Any]:
        return {
            "dataset": self.dataset,
            "input_shape": list(self.input_shape),
            "num_classes": self.num_classes,
            "layers": [{k: v for k, v in asdict(layer).items()} for layer in self.layers],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ModelSpec":
        try:
            layers = tuple(Layer(**layer) for layer in d["layers"])
            return cls(layers, tuple(d["input_shape"]), int(d["num_classes"]), d.get("dataset", "synth"))
        except (KeyError, TypeError) as exc:
            raise ConfigurationError(f"malformed model spec: {exc}") from exc

    def summary(self) -> list[str]:
        return [layer.describe() for layer in self.layers]


def _head(k: int, target: bool) -> tuple[Layer, ...]:
    if target:
        return (Layer("softmax", 2 * k), Layer("summation", k))
    return (Layer("softmax", k),)


def mnist_spec(target: bool = False, k: int = 10) -> ModelSpec:
    body = (
        Layer("conv", 32, activation="relu"),
        Layer("batchnorm"),
        Layer("conv", 64, activation="relu"),
        Layer("batchnorm"),
        Layer("maxpool"),
        Layer("dropout", rate=0.25),
        Layer("dense", 128, activation="relu"),
        Layer("dropout", rate=0.5),
    )
    return ModelSpec(body + _head(k, target), (28, 28, 1), k, "mnist")


def cifar10_spec(target: bool = False, k: int = 10) -> ModelSpec:
    body: list[Layer] = []
    for filters, rate in ((32, 0.2), (64, 0.3), (128, 0.4)):
        for _ in range(2):
            body += [Layer("conv", filters, activation="elu", padding="same"), Layer("batchnorm")]
        body += [Layer("maxpool"), Layer("dropout", rate=rate)]
    return ModelSpec(tuple(body) + _head(k, target), (32, 32, 3), k, "cifar10")


def synth_spec(target: bool = False, k: int = 2, hidden: int = 32) -> ModelSpec:
    return ModelSpec((Layer("dense", hidden, activation="relu"),) + _head(k, target), (1, 1, 2), k, "synth")


def linear_spec(k: int = 2, input_shape=(1, 1, 2), target: bool = False) -> ModelSpec:
    return ModelSpec(_head(k, target), input_shape, k, "synth")


def spec_for(name: str, target: bool = False) -> ModelSpec:
    builders = {"mnist": mnist_spec, "cifar10": cifar10_spec, "synth": synth_spec, "linear": linear_spec}
    if name not in builders:
        raise ConfigurationError(f"unknown model spec {name!r}")
    return builders[name](target=target)


def _param_shapes(spec: ModelSpec) -> list[tuple[str, str, tuple[int, ...], str]]:
    """``(name, role, shape, init)`` for every array; role is ``param`` or ``state``."""
    h, w, c = spec.input_shape
    flat: int | None = None
    out = []
    for i, layer in enumerate(spec.layers):
        p = f"{i:02d}.{layer.kind}"
        if layer.kind == "conv":
            if flat is not None:
                raise ConfigurationError("conv layer after a dense layer")
            kk = layer.kernel
            out.append((f"{p}.kernel", "param", (kk, kk, c, layer.units), "he"))
            out.append((f"{p}.bias", "param", (layer.units,), "zeros"))
            if layer.padding == "valid":
                h, w = h - kk + 1, w - kk + 1
                if h < 1 or w < 1:
                    raise ConfigurationError("conv kernel larger than its input")
            c = layer.units
        elif layer.kind == "batchnorm":
            ch = flat if flat is not None else c
            out.append((f"{p}.gamma", "param", (ch,), "ones"))
            out.append((f"{p}.beta", "param", (ch,), "zeros"))
            out.append((f"{p}.running_mean", "state", (ch,), "zeros"))
            out.append((f"{p}.running_var", "state", (ch,), "ones"))
        elif layer.kind == "maxpool":
            if flat is not None or h % 2 or w % 2:
                raise ConfigurationError(f"maxpool needs an even spatial input, got {(h, w)}")
            h, w = h // 2, w // 2
        elif layer.kind in ("dense", "softmax"):
            fan_in = flat if flat is not None else h * w * c
            init = "glorot" if layer.kind == "softmax" else "he"
            out.append((f"{p}.weight", "param", (fan_in, layer.units), init))
            out.append((f"{p}.bias", "param", (layer.units,), "zeros"))
            flat = layer.units
    return out


class Model:
    """A classifier's spec, parameters, frozen normalization statistics and metadata."""

    def __init__(self, spec: ModelSpec, params: dict[str, np.ndarray], state: dict[str, np.ndarray], metadata=None):
        self.spec = spec
        self.params = params
        self.state = state
        self.metadata: dict[str, Any] = dict(metadata or {})
        self.frozen = False

    # -- structure -------------------------------------------------------

    @property
    def num_classes(self) -> int:
        return self.spec.num_classes

    @property
    def head_classes(self) -> int:
        return self.spec.head_classes

    @property
    def is_target(self) -> bool:
        return self.spec.is_target

    @property
    def num_outputs(self) -> int:
        return self.num_classes

    @property
    def label_classes(self) -> int:
        return self.num_classes

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def copy(self) -> "Model":
        m = Model(
            self.spec,
            {k: v.copy() for k, v in self.params.items()},
            {k: v.copy() for k, v in self.state.items()},
            json.loads(json.dumps(self.metadata)),
        )
        return m

    def freeze(self) -> "Model":
        for arr in list(self.params.values()) + list(self.state.values()):
            arr.setflags(write=False)
        self.frozen = True
        return self

    def set_params(self, new: dict[str, np.ndarray]) -> None:
        if self.frozen:
            raise ContractError("model parameters are immutable after training")
        for name, arr in new.items():
            if name not in self.params or self.params[name].shape != arr.shape:
                raise DimensionError(f"parameter {name!r} does not match the model")
            self.params[name] = arr

    # -- forward ---------------------------------------------------------

    def _check_input(self, x: Tensor) -> None:
        if x.ndim != 4 or tuple(x.shape[1:]) != self.spec.input_shape:
            raise DimensionError(f"model expects (n, {', '.join(map(str, self.spec.input_shape))}), got {x.shape}")

    def forward_logits(
        self,
        x,
        train: bool = False,
        rng: np.random.Generator | None = None,
        leaves: dict[str, Tensor] | None = None,
    ) -> Tensor:
        """Pre-activation of the softmax head (``k`` or ``2k`` columns)."""
        x = T.as_tensor(x)
        self._check_input(x)
        if train and self.frozen:
            raise ContractError("cannot run a frozen model in train mode")

        def p(name):
            if leaves is not None and name in leaves:
                return leaves[name]
            return Tensor(self.params[name])

        h = x
        layers = self.spec.layers
        fused = set()
        for i, layer in enumerate(layers):
            pre = f"{i:02d}.{layer.kind}"
            kind = layer.kind
            if i in fused:
                continue
            if kind == "conv":
                affine = None
                nxt = f"{i + 1:02d}.batchnorm"
                if not train and i + 1 < len(layers) and layers[i + 1].kind == "batchnorm" and not (
                    leaves and (f"{nxt}.gamma" in leaves or f"{nxt}.beta" in leaves)
                ):
                    affine = self._frozen_affine(nxt)
                    fused.add(i + 1)
                h = T.conv2d(
                    h, p(f"{pre}.kernel"), layer.padding, bias=p(f"{pre}.bias"), activation=layer.activation, affine=affine
                )
            elif kind == "batchnorm":
                h = T.batchnorm(
                    h,
                    p(f"{pre}.gamma"),
                    p(f"{pre}.beta"),
                    self.state[f"{pre}.running_mean"],
                    self.state[f"{pre}.running_var"],
                    train=train,
                    momentum=BN_MOMENTUM,
                    eps=BN_EPS,
                )
            elif kind == "maxpool":
                h = T.maxpool2d(h)
            elif kind == "dropout":
                h = T.dropout(h, layer.rate, rng, train)
            elif kind in ("dense", "softmax"):
                if h.ndim != 2:
                    h = T.flatten(h)
                h = T.matmul(h, p(f"{pre}.weight")) + p(f"{pre}.bias")
                if kind == "dense" and layer.activation:
                    h = T.activation(h, layer.activation)
                if kind == "softmax":
                    return h
        raise ConfigurationError("spec has no softmax head")  # unreachable after validation

    def _frozen_affine(self, pre: str) -> tuple[np.ndarray, np.ndarray]:
        """Inference batchnorm as ``x * scale + shift``, same arithmetic as the unfused op."""
        dtype = self.params[f"{pre}.gamma"].dtype
        mu = self.state[f"{pre}.running_mean"].astype(dtype)
        var = self.state[f"{pre}.running_var"].astype(dtype)
        inv = (1.0 / np.sqrt(var + BN_EPS)).astype(dtype)
        scale = inv * self.params[f"{pre}.gamma"]
        return scale, self.params[f"{pre}.beta"] - mu * scale

    def forward_softmax(self, x, train: bool = False, rng=None, leaves=None) -> Tensor:
        return T.softmax(self.forward_logits(x, train=train, rng=rng, leaves=leaves))

    def infer_probs(self, x) -> Tensor:
        if not self.is_target:
            raise ContractError("infer_probs needs a model with a 2k-class head")
        return T.pair_sum(self.forward_softmax(x), self.num_classes)

    # -- attack surface ----------------------------------------------------

    def surface_probs(self, x) -> Tensor:
        """Inference-head probabilities over ``k`` classes."""
        return self.infer_probs(x) if self.is_target else self.forward_softmax(x)

    def surface_logits(self, x) -> Tensor:
        """Scores for margin-based attacks.

        The softmax pre-activation on a k-class head. On a 2k-class head the
        summation layer has no pre-activation, so ``log(infer_probs + 1e-12)``
        stands in, evaluated through log-softmax for stability.
        """
        z = self.forward_logits(x)
        if not self.is_target:
            return z
        k = self.num_classes
        ls = T.log_softmax(z)
        return T.logaddexp(T.logaddexp(ls[:, :k], ls[:, k:]), LOG_FLOOR)

    def predict(self, x, batch_size: int = 500) -> np.ndarray:
        x = np.asarray(x.data if isinstance(x, Tensor) else x)
        out = [np.argmax(self.surface_probs(x[i : i + batch_size]).data, axis=1) for i in range(0, len(x), batch_size)]
        return np.concatenate(out).astype(np.int64) if out else np.zeros(0, dtype=np.int64)


class TruncatedView:
    """A Target-Training model cut before its summation layer.

    The attack surface is the ``2k``-class softmax. By default labels remain
    in ``[0, k)`` and index the original half of the head; ``wide_labels``
    admits the full ``[0, 2k)`` range so the duplicate half can be targeted.
    Parameters are shared with the wrapped model, not copied.
    """

    def __init__(self, model: Model, wide_labels: bool = False):
        if not model.is_target:
            raise ContractError("a truncated view needs a model with a 2k-class head")
        self.model = model
        self.wide_labels = wide_labels

    @property
    def spec(self) -> ModelSpec:
        return self.model.spec

    @property
    def params(self) -> dict[str, np.ndarray]:
        return self.model.params

    @property
    def num_outputs(self) -> int:
        return self.model.head_classes

    @property
    def label_classes(self) -> int:
        return self.model.head_classes if self.wide_labels else self.model.num_classes

    @property
    def metadata(self) -> dict[str, Any]:
        return self.model.metadata

    def surface_probs(self, x) -> Tensor:
        return self.model.forward_softmax(x)

    def surface_logits(self, x) -> Tensor:
        return self.model.forward_logits(x)

    def predict(self, x, batch_size: int = 500) -> np.ndarray:
        return Model.predict(self, x, batch_size)  # type: ignore[arg-type]


def build_model(spec: ModelSpec, seed: int = 0, dtype=np.float32) -> Model:
    """Untrained model: He-uniform for relu/elu layers, Glorot-uniform for the softmax head."""
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    state: dict[str, np.ndarray] = {}
    for name, role, shape, init in _param_shapes(spec):
        if init == "he":
            fan_in = int(np.prod(shape[:-1]))
            lim = np.sqrt(6.0 / fan_in)
            arr = rng.uniform(-lim, lim, size=shape)
        elif init == "glorot":
            lim = np.sqrt(6.0 / (shape[0] + shape[1]))
            arr = rng.uniform(-lim, lim, size=shape)
        elif init == "ones":
            arr = np.ones(shape)
        else:
            arr = np.zeros(shape)
        (params if role == "param" else state)[name] = arr.astype(dtype)
    return Model(spec, params, state, {"seed": int(seed)})


# -- module-level operations ---------------------------------------------------


def forward_softmax(m: Model, x, train: bool = False, rng=None) -> np.ndarray:
    return m.forward_softmax(x, train=train, rng=rng).data


def infer_probs(m: Model, x) -> np.ndarray:
    return m.infer_probs(x).data


def predict_label(m, x) -> np.ndarray:
    """Argmax over the inference probabilities; ties go to the lowest index."""
    return m.predict(x)


def input_gradient(m: Model, x, labels, head: str = "inference") -> np.ndarray:
    """Gradient of the batch-mean cross-entropy of the chosen head w.r.t. ``x``."""
    if head == "inference":
        probs_fn = m.surface_probs
    elif head == "softmax2k":
        if not getattr(m, "is_target", False):
            raise ContractError("the softmax2k head only exists on 2k-class models")
        probs_fn = m.forward_softmax
    else:
        raise ConfigurationError(f"unknown head {head!r}")
    xt = Tensor(np.asarray(x.data if isinstance(x, Tensor) else x))
    with Tape() as tape:
        tape.watch(xt)
        loss = T.cross_entropy(probs_fn(xt), labels)
        grads = tape.backward(loss)
    return grads[xt]


def l2_penalty(m: Model, leaves: dict[str, Tensor]) -> Tensor | None:
    """Kernel L2 regularizer on the conv layers (``coef * sum(kernel**2)``)."""
    total = None
    for name, leaf in leaves.items():
        if name.endswith(".conv.kernel"):
            term = T.tsum(T.square(leaf))
            total = term if total is None else total + term
    return None if total is None else total * L2_KERNEL_COEF


# -- serialization ------------------------------------------------------------


def save_model(m: Model, path) -> Path:
    """Write ``TTMODEL1`` magic, a one-line JSON header, then little-endian float32 data."""
    path = Path(path)
    entries = []
    blobs = []
    offset = 0
    for role, arrays in (("param", m.params), ("state", m.state)):
        for name, arr in arrays.items():
            raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
            entries.append({"name": name, "role": role, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
            blobs.append(raw)
            offset += len(raw)
    header = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "dtype": "float32-le",
        "spec": m.spec.to_dict(),
        "metadata": m.metadata,
        "tensors": entries,
    }
    text = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(text + b"\n")
        for raw in blobs:
            fh.write(raw)
    return path


def load_model(path, freeze: bool = True) -> Model:
    blob = Path(path).read_bytes()
    if not blob.startswith(MODEL_MAGIC):
        raise FormatError(f"{path} is not a model file")
    end = blob.index(b"\n", len(MODEL_MAGIC))
    header = json.loads(blob[len(MODEL_MAGIC) : end])
    if header.get("format") != MODEL_FORMAT or header.get("version") != MODEL_VERSION:
        raise FormatError(f"unsupported model format {header.get('format')} v{header.get('version')}")
    data = memoryview(blob)[end + 1 :]
    spec = ModelSpec.from_dict(header["spec"])
    params, state = {}, {}
    for e in header["tensors"]:
        chunk = data[e["offset"] : e["offset"] + e["nbytes"]]
        if len(chunk) != e["nbytes"]:
            raise FormatError(f"model file truncated in tensor {e['name']!r}")
        arr = np.frombuffer(chunk, dtype="<f4").astype(np.float32).reshape(e["shape"])
        (params if e["role"] == "param" else state)[e["name"]] = arr
    expected = {name for name, *_ in _param_shapes(spec)}
    if expected != set(params) | set(state):
        raise FormatError("model file tensors do not match its spec")
    m = Model(spec, params, state, header.get("metadata", {}))
    return m.freeze() if freeze else m
