"""Benchmark the conv kernels: numba loops vs the numpy/BLAS path.

Runs each kernel at the shapes the default model actually uses and prints
per-call times plus the speed ratio. Pick the faster backend for long runs
with BAM_BACKEND; correctness is identical (asserted here to 1e-10).

Usage: python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import time

import numpy as np

from bam.kernels import make_impls

# (label, batch, c_in, c_out, kernel, stride, padding, length)
SHAPES = [
    ("encoder L1 10/10", 8, 1, 16, 10, 10, 0, 32000),
    ("encoder L2 4/4", 8, 16, 24, 4, 4, 0, 3200),
    ("encoder L3 4/4", 8, 24, 32, 4, 4, 0, 800),
    ("intra stem 3/1", 200, 1, 8, 3, 1, 1, 32),
    ("intra block 3/1", 200, 8, 8, 3, 1, 1, 32),
]


def time_call(fn, *args, repeat=5):
    fn(*args)  # warm-up (and jit compile)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    impls = {name: make_impls(name) for name in ("numpy", "numba")}
    rng = np.random.default_rng(0)
    print(f"{'shape':<18} {'kernel':<16} {'numpy':>10} {'numba':>10} {'numba/numpy':>12}")
    for label, b, cin, cout, k, stride, pad, length in SHAPES:
        x = rng.normal(size=(b, cin, length))
        w = rng.normal(size=(cout, cin, k))
        out_len = (length + 2 * pad - k) // stride + 1
        g = rng.normal(size=(b, cout, out_len))
        calls = {
            "forward": ("conv1d_forward", (x, w, stride, pad)),
            "grad input": ("conv1d_backward_input", (g, w, stride, pad, length)),
            "grad weight": ("conv1d_backward_weight", (g, x, stride, pad, k)),
        }
        for kind, (name, call_args) in calls.items():
            ref = impls["numpy"][name](*call_args)
            alt = impls["numba"][name](*call_args)
            assert np.allclose(ref, alt, atol=1e-10), f"{label} {kind} mismatch"
            t_np = time_call(impls["numpy"][name], *call_args, repeat=args.repeat)
            t_nb = time_call(impls["numba"][name], *call_args, repeat=args.repeat)
            print(f"{label:<18} {kind:<16} {t_np * 1e3:>8.2f}ms {t_nb * 1e3:>8.2f}ms {t_nb / t_np:>11.2f}x")


if __name__ == "__main__":
    main()
