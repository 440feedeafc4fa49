"""Compare the numba kernels with the numpy fallback.

    python benchmarks/bench_kernels.py [--batch 100] [--repeat 5]

Part one times each kernel on MNIST-shaped tensors in both implementations.
Part two times one forward and backward pass of the MNIST classifier in a
fresh interpreter per backend, selected with TARGETTRAIN_DISABLE_NUMBA.
"""

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from targettrain import _kernels as K

END_TO_END = """
import json, timeit, numpy as np
from targettrain import _kernels as K, model as M
from targettrain.model import input_gradient
m = M.build_model(M.mnist_spec(), seed=0).freeze()
x = np.random.default_rng(0).random(({batch}, 28, 28, 1), dtype=np.float32)
y = np.arange({batch}) % 10
input_gradient(m, x[:2], y[:2])
best = min(timeit.repeat(lambda: input_gradient(m, x, y), number=1, repeat={repeat}))
print(json.dumps({{"backend": K.backend(), "seconds": best}}))
"""


def best_of(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def kernel_cases(batch):
    rng = np.random.default_rng(0)
    x1 = rng.random((batch, 28, 28, 1), dtype=np.float32)
    x2 = rng.random((batch, 26, 26, 32), dtype=np.float32)
    cols = K.im2col_numpy(x2, 3, 3)
    pooled_in = rng.random((batch, 24, 24, 64), dtype=np.float32)
    _, idx = K.maxpool2_forward_numpy(pooled_in)
    g = rng.random((batch, 12, 12, 64), dtype=np.float32)
    return {
        "im2col conv1": ((x1, 3, 3), K.im2col_numpy, "im2col_numba"),
        "im2col conv2": ((x2, 3, 3), K.im2col_numpy, "im2col_numba"),
        "col2im conv2": ((cols, 26, 26, 3, 3), K.col2im_numpy, "col2im_numba"),
        "maxpool fwd": ((pooled_in,), K.maxpool2_forward_numpy, "maxpool2_forward_numba"),
        "maxpool bwd": ((g, idx), K.maxpool2_backward_numpy, "maxpool2_backward_numba"),
    }


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--batch", type=int, default=100)
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)

    print(f"kernels, batch {args.batch}, best of {args.repeat} (ms)")
    print(f"{'kernel':<16}{'numpy':>10}{'numba':>10}{'speedup':>10}")
    for name, (inputs, np_fn, nb_name) in kernel_cases(args.batch).items():
        t_np = best_of(lambda: np_fn(*inputs), args.repeat)
        nb_fn = getattr(K, nb_name, None)
        if nb_fn is None:
            print(f"{name:<16}{t_np * 1e3:>10.2f}{'n/a':>10}")
            continue
        nb_fn(*inputs)  # compile
        t_nb = best_of(lambda: nb_fn(*inputs), args.repeat)
        print(f"{name:<16}{t_np * 1e3:>10.2f}{t_nb * 1e3:>10.2f}{t_np / t_nb:>9.1f}x")

    print(f"\nMNIST forward+backward, batch {args.batch} (s)")
    code = END_TO_END.format(batch=args.batch, repeat=args.repeat)
    for disable in ("0", "1"):
        env = dict(os.environ, TARGETTRAIN_DISABLE_NUMBA=disable)
        out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        res = json.loads(out.stdout.strip().splitlines()[-1])
        print(f"{res['backend']:<16}{res['seconds']:>10.3f}")


if __name__ == "__main__":
    main()
