"""Compare the numba and pure-numpy kernel backends.

Usage::

    python benchmarks/bench_kernels.py [--batch 512] [--width 512] [--repeat 20]

Prints the best-of-``repeat`` time of every kernel under both backends on
training-sized arrays, then one full training epoch per backend (each in a
fresh interpreter, since the backend is fixed at import time).
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from icmlp import _kernels as K

EPOCH_SNIPPET = """
import time
from icmlp import _kernels
from icmlp.cli import gen_synthetic
from icmlp.model import build_model
from icmlp.numerics import Rng
from icmlp.optim import AdamW
from icmlp.train import train_epoch
_kernels.warmup()
ds = gen_synthetic({n}, {width}, 2, 0.25, seed=0)
model = build_model({width}, 2, 4, 4, rng=Rng(0))
opt = AdamW(model.parameters(), lr=2e-2, weight_decay=4e-3)
train_epoch(model, opt, ds, {batch}, Rng(1))
t0 = time.perf_counter()
train_epoch(model, opt, ds, {batch}, Rng(2))
print(_kernels.BACKEND, time.perf_counter() - t0)
"""


def kernel_cases(batch, width, n_classes=2, seed=0):
    g = np.random.default_rng(seed)
    x = g.normal(size=(batch, width))
    gamma, beta = g.normal(size=(1, width)), g.normal(size=(1, width))
    mean, var = g.normal(size=(1, width)), g.uniform(0.5, 2.0, size=(1, width))
    xhat = g.normal(size=(batch, width))
    mask = (g.random((batch, width)) > 0.05).astype(np.float64)
    logits = g.normal(size=(batch, n_classes))
    labels = g.integers(0, n_classes, size=batch)
    n_params = 877_602
    p, gr = g.normal(size=n_params), g.normal(size=n_params)
    m, v = np.zeros(n_params), np.zeros(n_params)
    return {
        "bn_forward_train": (x, gamma, beta, 1e-5),
        "bn_forward_eval": (x, mean, var, gamma, beta, 1e-5),
        "bn_backward": (x, xhat, var, gamma, 1e-5),
        "relu_forward": (x,),
        "relu_backward": (x, xhat),
        "masked_scale": (x, mask, 1 / 0.95),
        "softmax": (logits,),
        "softmax_xent": (logits, labels),
        "adamw_update": (p, gr, m, v, 1e-3, 0.9, 0.999, 1e-8, 4e-3, 0.1, 0.001),
    }


def bench_kernels(batch, width, repeat):
    if K.NUMBA_KERNELS is None:
        print("numba is not importable; only the numpy backend exists")
        return
    K.warmup()
    cases = kernel_cases(batch, width)
    print(f"{'kernel':<18}{'numpy ms':>12}{'numba ms':>12}{'speed-up':>10}")
    for name, args in cases.items():
        times = {}
        for backend, table in (("numpy", K.NUMPY_KERNELS), ("numba", K.NUMBA_KERNELS)):
            fn = table[name]
            # adamw mutates its arguments; give every call fresh copies
            call = (lambda: fn(*[a.copy() if isinstance(a, np.ndarray) else a for a in args])) \
                if name == "adamw_update" else (lambda: fn(*args))
            times[backend] = min(timeit.repeat(call, number=1, repeat=repeat)) * 1e3
        print(f"{name:<18}{times['numpy']:>12.3f}{times['numba']:>12.3f}"
              f"{times['numpy'] / times['numba']:>9.2f}x")


def bench_epoch(n, width, batch):
    code = EPOCH_SNIPPET.format(n=n, width=width, batch=batch)
    for flag in ("0", "1"):
        env = dict(os.environ, ICMLP_DISABLE_NUMBA=flag)
        out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True,
                             text=True, check=True).stdout.split()
        print(f"one epoch, {n} samples, backend {out[0]:<6}: {float(out[1]):.3f} s")


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=512)
    ap.add_argument("--width", type=int, default=512)
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--epoch-samples", type=int, default=2000)
    ap.add_argument("--skip-epoch", action="store_true")
    args = ap.parse_args(argv)
    bench_kernels(args.batch, args.width, args.repeat)
    if not args.skip_epoch:
        bench_epoch(args.epoch_samples, args.width, args.batch)


if __name__ == "__main__":
    main()
