"""Compare the numba and numpy kernel backends.

    python benchmarks/bench_kernels.py [--repeat 5] [--end-to-end]

Kernel timings call both backends in one process. ``--end-to-end`` also
times a short federated run in two subprocesses, one with
FNUCB_DISABLE_NUMBA=1, to exercise the environment switch itself.
"""

import argparse
import math
import os
import subprocess
import sys
import time

import numpy as np

from fnucb import _kernels as K
from fnucb import network as nw
from fnucb.environments import unit_sphere


def best_of(fn, repeat):
    fn()  # warm-up (includes numba compilation)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def kernel_cases(d=10, m=20, L=2, n=500, steps=30):
    shape = nw.NetworkShape(d, m, L)
    theta0 = nw.init_params(shape, 0)
    rng = np.random.default_rng(0)
    X = np.ascontiguousarray(unit_sphere(rng, n, d))
    y = np.cos(3 * X[:, 0])
    full = np.tile(np.arange(n, dtype=np.int64), (steps, 1))
    sgd = rng.integers(0, n, size=(steps, 1))
    inv = np.eye(shape.p0) / 0.1
    phi = nw.tangent_feature(shape, theta0, X[:1])[0]
    reg = m * 0.1 / n
    return {
        f"forward  n={n}": lambda b: K.forward_batch(theta0, X, d, m, L, backend=b),
        f"gradient n={n}": lambda b: K.grad_batch(theta0, X, d, m, L, backend=b),
        f"train    {steps} full-batch steps": lambda b: K.train_steps(theta0, theta0, X, y, full, 0.01, reg,
                                                                    d, m, L, backend=b),
        f"train    {steps} sgd steps": lambda b: K.train_steps(theta0, theta0, X, y, sgd, 0.01, reg,
                                                             d, m, L, backend=b),
        f"sherman-morrison p0={shape.p0}": lambda b: K.sherman_morrison(inv.copy(), phi, backend=b),
    }


def agree(a, b):
    if isinstance(a, tuple):
        return all(agree(x, y) for x, y in zip(a, b))
    if isinstance(a, float):
        return math.isclose(a, b, rel_tol=1e-9)
    return np.allclose(a, b, rtol=1e-9, atol=1e-12)


def end_to_end(T):
    code = ("import time; from fnucb.harness import RunConfig, run; from fnucb import BACKEND; "
            f"t0 = time.perf_counter(); run(RunConfig(T={T}, N=2, D=1.0)); "
            "print(BACKEND, time.perf_counter() - t0)")
    for flag in ("0", "1"):
        env = dict(os.environ, FNUCB_DISABLE_NUMBA=flag)
        out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        name, secs = out.stdout.split()
        print(f"end-to-end T={T} N=2   {name:>6}: {float(secs):8.2f} s")


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--end-to-end", action="store_true")
    p.add_argument("--T", type=int, default=300)
    args = p.parse_args()
    if K.numba is None:
        sys.exit("numba is not installed; only the numpy backend is available")

    print(f"{'kernel':36s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s} agree")
    for name, fn in kernel_cases().items():
        same = agree(fn("numpy"), fn("numba"))
        t_np = best_of(lambda: fn("numpy"), args.repeat)
        t_nb = best_of(lambda: fn("numba"), args.repeat)
        print(f"{name:36s} {1e3 * t_np:10.3f} {1e3 * t_nb:10.3f} {t_np / t_nb:8.1f} {same}")
    if args.end_to_end:
        end_to_end(args.T)


if __name__ == "__main__":
    main()
