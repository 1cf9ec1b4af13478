"""Benchmark the numba kernels against the pure-numpy fallback.

Imports both kernel modules directly (bypassing the env-var dispatch)
so one process can time them side by side. Numba timings exclude JIT
compilation via a warmup call.

Usage: python3 benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import time

import numpy as np

from dagtrack import _kernels_numpy as knp
from dagtrack import activations as act
from dagtrack.lattice import build_all_directions

try:
    from dagtrack import _kernels_numba as knb
except ImportError:
    knb = None


def timeit(fn, repeats):
    fn()  # warmup (JIT for numba, cache warming for numpy)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_conv(k, rng):
    x = rng.standard_normal((51, 51, 16)).astype(np.float32)
    kern = rng.standard_normal((5, 5, 16, 32)).astype(np.float32) * 0.1
    bias = np.zeros(32, np.float32)
    xp = np.ascontiguousarray(x)
    return lambda: k.conv2d_forward(xp, kern, bias, 2)


def bench_conv_backward(k, rng):
    x = rng.standard_normal((51, 51, 16)).astype(np.float32)
    kern = rng.standard_normal((5, 5, 16, 32)).astype(np.float32) * 0.1
    bias = np.zeros(32, np.float32)
    out = k.conv2d_forward(x, kern, bias, 2)
    g = rng.standard_normal(out.shape).astype(np.float32)
    return lambda: k.conv2d_backward(x, kern, g, 2)


def bench_maxpool(k, rng):
    x = rng.standard_normal((51, 51, 32)).astype(np.float32)
    return lambda: k.maxpool_forward(x, 3, 2)


def bench_dag(k, rng):
    h, w, cin, hid = 25, 25, 32, 32
    dag = build_all_directions(h, w, 8)[0]
    x2 = rng.standard_normal((h * w, cin)).astype(np.float32)
    u = rng.standard_normal((hid, cin)).astype(np.float32) * 0.1
    whh = rng.standard_normal((hid, hid)).astype(np.float32) * 0.1
    b = np.zeros(hid, np.float32)
    ux = x2 @ u.T + b
    phi = act.activation_code("relu")
    return lambda: k.dag_forward(ux, whh, dag.topo, dag.pred_ptr, dag.pred_idx, phi)


def bench_crop(k, rng):
    img = rng.standard_normal((480, 640, 3)).astype(np.float32)
    return lambda: k.bilinear_crop(img, 100.3, 50.7, 120.0, 90.0, 107)


BENCHES = [
    ("conv2d forward 51x51x16 -> 32ch k5 s2", bench_conv),
    ("conv2d backward (same shape)", bench_conv_backward),
    ("maxpool 51x51x32 w3 s2", bench_maxpool),
    ("dag-rnn sweep 25x25, 32 hidden, 8-conn", bench_dag),
    ("bilinear crop 640x480 -> 107x107", bench_crop),
]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'benchmark':44s} {'numpy':>10s} {'numba':>10s} {'speedup':>8s}")
    for name, make in BENCHES:
        t_np = timeit(make(knp, rng), args.repeats)
        if knb is None:
            print(f"{name:44s} {t_np * 1e3:9.2f}ms {'n/a':>10s}")
            continue
        t_nb = timeit(make(knb, rng), args.repeats)
        print(f"{name:44s} {t_np * 1e3:9.2f}ms {t_nb * 1e3:9.2f}ms "
              f"{t_np / t_nb:7.1f}x")


if __name__ == "__main__":
    main()
