"""Dense tensors with tape-based reverse-mode differentiation.

Operations run eagerly on numpy arrays. When a :class:`Tape` is active and
at least one operand has ``requires_grad``, the operation appends a node to
the tape holding the operands and whatever forward values its backward rule
needs. :meth:`Tape.backward` walks the nodes in reverse recording order,
which is a valid reverse topological order because a node can only consume
tensors that already exist.

Production code runs in float32; every op preserves its input dtype so the
same graph can be evaluated in float64 for gradient checks.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from . import _kernels
from .errors import (
    ConfigurationError,
    ContractError,
    DimensionError,
    EmptyBatchError,
    LabelError,
    NumericError,
    TapeReuseError,
)

PROB_FLOOR = 1e-12

_local = threading.local()


class Tensor:
    """An n-dimensional float array that can take part in a recorded computation."""

    __slots__ = ("data", "requires_grad", "grad", "_tape", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._tape is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self):
        return mean(self)


class _Node:
    __slots__ = ("out", "inputs", "needs", "backward")

    def __init__(self, out, inputs, needs, backward):
        self.out = out
        self.inputs = inputs
        self.needs = needs
        self.backward = backward


class Tape:
    """Ordered record of primitive operations for one backward pass.

    Use as a context manager; tapes nest per thread. A tape can be replayed
    backward exactly once.
    """

    def __init__(self):
        self._nodes: list[_Node] = []
        self._leaves: dict[int, Tensor] = {}
        self.consumed = False

    def __enter__(self) -> "Tape":
        stack = getattr(_local, "stack", None)
        if stack is None:
            stack = _local.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _local.stack.pop()

    def __len__(self) -> int:
        return len(self._nodes)

    def watch(self, *tensors: Tensor) -> None:
        for t in tensors:
            t.requires_grad = True
            if t.is_leaf:
                self._leaves.setdefault(id(t), t)

    @property
    def leaves(self) -> list[Tensor]:
        return list(self._leaves.values())

    def _record(self, out: Tensor, inputs: Sequence[Tensor], needs, backward) -> None:
        for t, need in zip(inputs, needs):
            if need and t.is_leaf:
                self._leaves.setdefault(id(t), t)
        out._tape = self
        self._nodes.append(_Node(out, tuple(inputs), needs, backward))

    def backward(self, loss: Tensor) -> dict[Tensor, np.ndarray]:
        if self.consumed:
            raise TapeReuseError("backward was already run on this tape")
        if loss._tape is not self:
            raise ContractError("loss was not produced under this tape")
        if loss.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self._nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            in_grads = node.backward(g, node.needs)
            for t, need, gi in zip(node.inputs, node.needs, in_grads):
                if not need or gi is None:
                    continue
                key = id(t)
                prev = grads.get(key)
                grads[key] = gi if prev is None else prev + gi
        result: dict[Tensor, np.ndarray] = {}
        for leaf in self._leaves.values():
            g = grads.get(id(leaf))
            if g is None:
                g = np.zeros_like(leaf.data)
            else:
                g = np.asarray(g, dtype=leaf.data.dtype).reshape(leaf.shape)
            leaf.grad = g
            result[leaf] = g
        self.consumed = True
        self._nodes.clear()
        return result


def current_tape() -> Tape | None:
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


def backward(loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Gradients of a scalar ``loss`` for every tracked leaf of its tape."""
    if loss._tape is None:
        raise ContractError("loss was not produced under a recording tape")
    return loss._tape.backward(loss)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _check_finite(arr: np.ndarray, op: str) -> None:
    # A finite sum implies finite entries; only a non-finite sum needs the full scan.
    if not np.isfinite(arr.sum()) and not np.isfinite(arr).all():
        raise NumericError(f"non-finite values produced by {op}")


def _emit(data: np.ndarray, op: str, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    _check_finite(data, op)
    out = Tensor(data)
    tape = current_tape()
    if tape is not None:
        needs = tuple(t.requires_grad for t in inputs)
        if any(needs):
            out.requires_grad = True
            tape._record(out, inputs, needs, backward)
    return out


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    return as_tensor(a), as_tensor(b)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# --------------------------------------------------------------------------
# elementwise and structural ops
# --------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape

    def bw(g, needs):
        return (_unbroadcast(g, sa) if needs[0] else None, _unbroadcast(g, sb) if needs[1] else None)

    return _emit(a.data + b.data, "add", (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape

    def bw(g, needs):
        return (_unbroadcast(g, sa) if needs[0] else None, _unbroadcast(-g, sb) if needs[1] else None)

    return _emit(a.data - b.data, "sub", (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    ad, bd = a.data, b.data

    def bw(g, needs):
        return (
            _unbroadcast(g * bd, ad.shape) if needs[0] else None,
            _unbroadcast(g * ad, bd.shape) if needs[1] else None,
        )

    return _emit(ad * bd, "mul", (a, b), bw)


def neg(a: Tensor) -> Tensor:
    return _emit(-a.data, "neg", (a,), lambda g, needs: (-g,))


def square(a: Tensor) -> Tensor:
    ad = a.data
    return _emit(ad * ad, "square", (a,), lambda g, needs: (2 * ad * g,))


def tsum(a: Tensor, axis=None) -> Tensor:
    shape = a.shape

    def bw(g, needs):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _emit(np.asarray(a.data.sum(axis=axis)), "sum", (a,), bw)


def mean(a: Tensor) -> Tensor:
    n = a.size
    shape = a.shape
    return _emit(
        np.asarray(a.data.mean()), "mean", (a,), lambda g, needs: (np.full(shape, g / n, dtype=a.dtype),)
    )


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    old = a.shape
    return _emit(a.data.reshape(shape), "reshape", (a,), lambda g, needs: (g.reshape(old),))


def flatten(a: Tensor) -> Tensor:
    return reshape(a, (a.shape[0], -1))


def getitem(a: Tensor, index) -> Tensor:
    shape = a.shape

    def bw(g, needs):
        out = np.zeros(shape, dtype=g.dtype)
        out[index] = g
        return (out,)

    return _emit(np.ascontiguousarray(a.data[index]), "getitem", (a,), bw)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def bw(g, needs):
        parts = []
        for i, need in enumerate(needs):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(bounds[i], bounds[i + 1])
            parts.append(g[tuple(sl)] if need else None)
        return tuple(parts)

    return _emit(np.concatenate([t.data for t in tensors], axis=axis), "concat", tensors, bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def bw(g, needs):
        return (g @ bd.T if needs[0] else None, ad.T @ g if needs[1] else None)

    return _emit(ad @ bd, "matmul", (a, b), bw)


# --------------------------------------------------------------------------
# activations
# --------------------------------------------------------------------------


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0)
    # derivative at 0 is 0
    return _emit(out, "relu", (a,), lambda g, needs: (g * (out > 0),))


def elu(a: Tensor, alpha: float = 1.0) -> Tensor:
    x = a.data
    neg_part = alpha * np.expm1(np.minimum(x, 0))
    out = np.where(x >= 0, x, neg_part).astype(a.dtype)
    deriv = np.where(x >= 0, 1, neg_part + alpha).astype(a.dtype)
    return _emit(out, "elu", (a,), lambda g, needs: (g * deriv,))


def activation(a: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return relu(a)
    if kind == "elu":
        return elu(a)
    raise ConfigurationError(f"unknown activation {kind!r}")


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    return _emit(t, "tanh", (a,), lambda g, needs: (g * (1 - t * t),))


def logaddexp(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = np.logaddexp(a.data, b.data)
    ad, bd = a.data, b.data

    def bw(g, needs):
        return (
            _unbroadcast(g * np.exp(ad - out), ad.shape) if needs[0] else None,
            _unbroadcast(g * np.exp(bd - out), bd.shape) if needs[1] else None,
        )

    return _emit(out, "logaddexp", (a, b), bw)


# --------------------------------------------------------------------------
# convolution, pooling, normalization, dropout
# --------------------------------------------------------------------------


_CONV_CHUNK_FLOATS = 1 << 17


def _conv_chunk(floats_per_sample: int) -> int:
    # im2col buffers of ~512 KB stay in L2; larger ones are memory bound.
    return max(1, _CONV_CHUNK_FLOATS // max(1, floats_per_sample))


def _same_pads(k: int) -> tuple[int, int]:
    lo = (k - 1) // 2
    return lo, k - 1 - lo


def conv2d(
    x: Tensor,
    kernel: Tensor,
    padding: str = "valid",
    bias: Tensor | None = None,
    activation: str | None = None,
    affine: tuple[np.ndarray, np.ndarray] | None = None,
) -> Tensor:
    """Unit-stride cross-correlation of ``(n, h, w, cin)`` with ``(kh, kw, cin, cout)``.

    ``bias`` (shape ``(cout,)``) is added in place of a separate broadcast op.
    ``activation`` and a constant per-channel ``affine = (scale, shift)`` are
    applied chunk by chunk while the output is still in cache; this is how a
    frozen batchnorm after a conv layer runs at inference. The affine terms
    are constants: no gradient flows to them.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    bias = as_tensor(bias) if bias is not None else Tensor(np.zeros(kernel.shape[-1], dtype=kernel.dtype))
    if x.ndim != 4 or kernel.ndim != 4:
        raise DimensionError(f"conv2d expects 4-d input and kernel, got {x.shape} and {kernel.shape}")
    n, h, w, cin = x.shape
    kh, kw, kcin, cout = kernel.shape
    if kcin != cin:
        raise DimensionError(f"conv2d channel mismatch: input {x.shape}, kernel {kernel.shape}")
    if padding == "same":
        (pt, pb), (pl, pr) = _same_pads(kh), _same_pads(kw)
    elif padding == "valid":
        pt = pb = pl = pr = 0
    else:
        raise ConfigurationError(f"unknown padding {padding!r}")
    hp, wp = h + pt + pb, w + pl + pr
    if kh > hp or kw > wp:
        raise DimensionError(f"kernel {kernel.shape[:2]} larger than padded input {(hp, wp)}")
    xd = x.data
    if pt or pb or pl or pr:
        xd = np.pad(xd, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    if bias.shape != (cout,):
        raise DimensionError(f"conv2d bias shape {bias.shape} does not match {cout} filters")
    ho, wo = hp - kh + 1, wp - kw + 1
    kk = kh * kw * cin
    k2 = kernel.data.reshape(kk, cout)
    if activation not in (None, "relu", "elu"):
        raise ConfigurationError(f"unknown activation {activation!r}")
    step = _conv_chunk(ho * wo * kk)
    dtype = np.result_type(xd, k2)
    out = np.empty((n, ho, wo, cout), dtype=dtype)
    # d(out)/d(pre-activation), stored only when something sits after the matmul
    deriv = np.empty((n, ho, wo, cout), dtype=bool if activation == "relu" else dtype) if activation else None
    if affine is not None:
        scale, shift = (np.asarray(a, dtype=dtype) for a in affine)
    for b in range(0, n, step):
        cols = _kernels.im2col(xd[b : b + step], kh, kw)
        o = out[b : b + step]
        np.matmul(cols.reshape(-1, kk), k2, out=o.reshape(-1, cout))
        o += bias.data
        if activation == "relu":
            np.greater(o, 0, out=deriv[b : b + step])
            np.maximum(o, 0, out=o)
        elif activation == "elu":
            neg = np.expm1(np.minimum(o, 0))
            deriv[b : b + step] = np.where(o >= 0, 1, neg + 1)
            np.copyto(o, neg, where=o < 0)
        if affine is not None:
            o *= scale
            o += shift

    def bw(g, needs):
        gx = gk = gb = None
        if affine is not None:
            g = g * scale
        if activation == "relu":
            g = g * deriv if affine is None else np.multiply(g, deriv, out=g)
        elif activation == "elu":
            g = g * deriv if affine is None else np.multiply(g, deriv, out=g)
        if needs[2]:
            gb = g.reshape(-1, cout).sum(axis=0)
        if needs[1]:
            gk = np.zeros_like(k2)
        if needs[0]:
            gx = np.empty((n, hp, wp, cin), dtype=g.dtype)
        for b in range(0, n, step):
            g2 = g[b : b + step].reshape(-1, cout)
            if needs[1]:
                cols = _kernels.im2col(xd[b : b + step], kh, kw)
                gk += cols.reshape(-1, kk).T @ g2
            if needs[0]:
                gcols = (g2 @ k2.T).reshape(-1, ho, wo, kk)
                gx[b : b + step] = _kernels.col2im(gcols, hp, wp, kh, kw)
        if gk is not None:
            gk = gk.reshape(kh, kw, cin, cout)
        if gx is not None:
            gx = gx[:, pt : pt + h, pl : pl + w, :]
        return gx, gk, gb

    return _emit(out, "conv2d", (x, kernel, bias), bw)


def maxpool2d(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; ties route gradient to the first scanned element."""
    if x.ndim != 4:
        raise DimensionError(f"maxpool2d expects (n, h, w, c), got {x.shape}")
    _, h, w, _ = x.shape
    if h % 2 or w % 2:
        raise DimensionError(f"maxpool2d needs even spatial extents, got {(h, w)}")
    out, idx = _kernels.maxpool2_forward(x.data)
    return _emit(out, "maxpool2d", (x,), lambda g, needs: (_kernels.maxpool2_backward(g, idx),))


def batchnorm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    train: bool,
    momentum: float = 0.99,
    eps: float = 1e-5,
) -> Tensor:
    """Normalize over every axis but the last (channel) axis.

    In train mode batch statistics are used and ``running_mean`` /
    ``running_var`` are updated in place with ``momentum``.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,) or running_mean.shape != (c,) or running_var.shape != (c,):
        raise DimensionError(f"batchnorm state extents do not match {c} channels")
    axes = tuple(range(x.ndim - 1))
    xd = x.data
    if train:
        count = xd.size // c
        if count == 0:
            raise EmptyBatchError("batchnorm in train mode got an empty batch")
        mu = xd.mean(axis=axes)
        var = xd.var(axis=axes)
        running_mean *= momentum
        running_mean += (1 - momentum) * mu.astype(running_mean.dtype)
        running_var *= momentum
        running_var += (1 - momentum) * var.astype(running_var.dtype)
    else:
        count = 0
        mu = running_mean.astype(xd.dtype)
        var = running_var.astype(xd.dtype)
    inv = (1.0 / np.sqrt(var + eps)).astype(xd.dtype)
    gd = gamma.data
    if train:
        xhat = (xd - mu) * inv
        out = xhat * gd + beta.data
    else:
        # frozen statistics fold into one scale and shift
        scale = inv * gd
        out = xd * scale + (beta.data - mu * scale)
        xhat = None

    def bw(g, needs):
        gx = gg = gb = None
        xh = xhat
        if needs[1]:
            if xh is None:
                xh = (xd - mu) * inv
            gg = (g * xh).sum(axis=axes)
        if needs[2]:
            gb = g.sum(axis=axes)
        if needs[0]:
            if train:
                dxhat = g * gd
                s1 = dxhat.sum(axis=axes)
                s2 = (dxhat * xh).sum(axis=axes)
                gx = (inv / count) * (count * dxhat - s1 - xh * s2)
            else:
                gx = g * (inv * gd)
        return gx, gg, gb

    return _emit(out.astype(xd.dtype, copy=False), "batchnorm", (x, gamma, beta), bw)


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None, train: bool) -> Tensor:
    """Inverted dropout; the identity unless ``train`` is set."""
    if not train or rate <= 0:
        return x
    if rng is None:
        raise ConfigurationError("dropout in train mode needs a random generator")
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / x.dtype.type(1 - rate)
    return mul(x, Tensor(keep))


# --------------------------------------------------------------------------
# heads and losses
# --------------------------------------------------------------------------


def softmax(z: Tensor) -> Tensor:
    z = as_tensor(z)
    if z.ndim != 2 or z.shape[1] < 2:
        raise DimensionError(f"softmax expects (batch, c>=2), got {z.shape}")
    if not np.isfinite(z.data).all():
        raise NumericError("softmax received non-finite logits")
    e = np.exp(z.data - z.data.max(axis=1, keepdims=True))
    s = e / e.sum(axis=1, keepdims=True)

    def bw(g, needs):
        return (s * (g - (g * s).sum(axis=1, keepdims=True)),)

    return _emit(s, "softmax", (z,), bw)


def log_softmax(z: Tensor) -> Tensor:
    z = as_tensor(z)
    if z.ndim != 2 or z.shape[1] < 2:
        raise DimensionError(f"log_softmax expects (batch, c>=2), got {z.shape}")
    if not np.isfinite(z.data).all():
        raise NumericError("log_softmax received non-finite logits")
    shifted = z.data - z.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = shifted - lse
    s = np.exp(out)

    def bw(g, needs):
        return (g - s * g.sum(axis=1, keepdims=True),)

    return _emit(out, "log_softmax", (z,), bw)


def pair_sum(s: Tensor, k: int) -> Tensor:
    """Weightless summation head: ``y[:, i] = s[:, i] + s[:, i + k]``."""
    if s.ndim != 2 or s.shape[1] != 2 * k:
        raise DimensionError(f"pair_sum needs (batch, {2 * k}), got {s.shape}")
    out = s.data[:, :k] + s.data[:, k:]
    return _emit(out, "pair_sum", (s,), lambda g, needs: (np.concatenate([g, g], axis=1),))


def _check_labels(labels, c: int, n: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise DimensionError(f"expected {n} labels, got shape {labels.shape}")
    if labels.dtype.kind not in "iu":
        if not np.all(np.equal(np.mod(labels, 1), 0)):
            raise LabelError("labels must be integers")
        labels = labels.astype(np.int64)
    bad = np.flatnonzero((labels < 0) | (labels >= c))
    if bad.size:
        i = int(bad[0])
        raise LabelError(f"label {int(labels[i])} at index {i} outside [0, {c})")
    return labels.astype(np.int64)


def cross_entropy(p: Tensor, labels) -> Tensor:
    """Mean of ``-log(max(p[label], 1e-12))`` over the batch."""
    if p.ndim != 2:
        raise DimensionError(f"cross_entropy expects (batch, c), got {p.shape}")
    n, c = p.shape
    labels = _check_labels(labels, c, n)
    rows = np.arange(n)
    picked = p.data[rows, labels]
    clamped = np.maximum(picked, PROB_FLOOR)
    loss = np.asarray(-np.log(clamped).mean(), dtype=p.dtype)

    def bw(g, needs):
        gp = np.zeros_like(p.data)
        live = picked > PROB_FLOOR
        gp[rows, labels] = np.where(live, -1.0 / (n * clamped), 0).astype(p.dtype)
        return (gp * g,)

    return _emit(loss, "cross_entropy", (p,), bw)


def weighted_sum(a: Tensor, weights: np.ndarray) -> Tensor:
    """``sum(a * weights)`` for a constant weight array (a scalar)."""
    try:
        w = np.broadcast_to(np.asarray(weights, dtype=a.dtype), a.shape)
    except ValueError as exc:
        raise DimensionError(f"weights of shape {np.shape(weights)} do not broadcast to {a.shape}") from exc
    return _emit(np.asarray((a.data * w).sum(), dtype=a.dtype), "weighted_sum", (a,), lambda g, needs: (g * w,))


def parameters_of(tensors: Iterable[Tensor]) -> list[Tensor]:
    return [t for t in tensors if t.requires_grad]
