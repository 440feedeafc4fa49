"""Random small networks for the backward-vs-finite-difference oracle."""

import numpy as np

from targettrain import tensor as T
from targettrain.gradcheck import finite_diff_grad, max_relative_error
from targettrain.model import Layer, ModelSpec, build_model
from targettrain.tensor import Tape, Tensor

# Absolute floor for the relative error: below it both gradients count as zero.
REL_FLOOR = 1e-7
# float64 central differences; small enough that no elu or max-pool kink is straddled.
FD_STEP = 1e-5


def random_spec(rng: np.random.Generator) -> ModelSpec:
    k = int(rng.integers(2, 5))
    target = bool(rng.integers(0, 2))
    head = (Layer("softmax", 2 * k), Layer("summation", k)) if target else (Layer("softmax", k),)
    if rng.integers(0, 2):
        h = int(rng.choice([4, 6]))
        c = int(rng.integers(1, 3))
        body = [Layer("conv", int(rng.integers(2, 5)), kernel=3, activation="elu", padding=str(rng.choice(["valid", "same"])))]
        body.append(Layer("batchnorm"))
        if body[0].padding == "same" or h == 6:
            body.append(Layer("maxpool"))
        body.append(Layer("dense", int(rng.integers(4, 12)), activation="elu"))
        return ModelSpec(tuple(body) + head, (h, h, c), k, "synth")
    d = int(rng.integers(2, 8))
    body = [Layer("dense", int(rng.integers(4, 24)), activation="elu") for _ in range(int(rng.integers(1, 3)))]
    if rng.integers(0, 2):
        body.insert(1, Layer("batchnorm"))
    return ModelSpec(tuple(body) + head, (1, 1, d), k, "synth")


def random_network(seed: int):
    rng = np.random.default_rng(seed)
    spec = random_spec(rng)
    m = build_model(spec, seed=seed, dtype=np.float64)
    for name in m.state:
        if name.endswith("running_mean"):
            m.state[name] = rng.normal(scale=0.3, size=m.state[name].shape)
        else:
            m.state[name] = rng.uniform(0.5, 2.0, size=m.state[name].shape)
    for name, p in m.params.items():
        if name.endswith("bias") or name.endswith("beta"):
            m.params[name] = rng.normal(scale=0.2, size=p.shape)
    x = rng.random((3,) + spec.input_shape)
    y = rng.integers(0, spec.num_classes, size=3)
    return m, x, y


def network_rel_error(seed: int) -> tuple[float, int]:
    """Max relative error of backward vs central differences over inputs and parameters."""
    m, x, y = random_network(seed)
    names = sorted(m.params)

    def loss(xt, leaves):
        probs = m.forward_softmax(xt, leaves=leaves)
        if m.is_target:
            probs = T.pair_sum(probs, m.num_classes)
        return T.cross_entropy(probs, y)

    def loss_at(xv, params):
        return loss(Tensor(xv), {n: Tensor(v) for n, v in params.items()})

    xt = Tensor(x)
    leaves = {n: Tensor(m.params[n]) for n in names}
    with Tape() as tape:
        tape.watch(xt, *leaves.values())
        grads = tape.backward(loss(xt, leaves))

    worst = max_relative_error(grads[xt], finite_diff_grad(lambda v: loss_at(v, m.params).data, x, h=FD_STEP), floor=REL_FLOOR)
    count = m.parameter_count()
    for n in names:

        def f(v, n=n):
            p = dict(m.params)
            p[n] = v
            return loss_at(x, p).data

        worst = max(worst, max_relative_error(grads[leaves[n]], finite_diff_grad(f, m.params[n], h=FD_STEP), floor=REL_FLOOR))
    return worst, count
