"""Benchmark: compiled kernels vs the numpy fallback.

Run:  python benchmarks/bench_kernels.py [--reps N]

Times the four hot kernels at training-shaped workloads (batch forward +
backward for conv1d and LSTM) and a single-sample explainer-shaped
workload, printing a table with the speedup of the compiled backend.
"""

import argparse
import time

import numpy as np

from amcguard.kernels import numpy_backend

try:
    from amcguard.kernels import _fast
except ImportError:
    _fast = None


def timeit(fn, reps):
    fn()  # warm up
    best = float("inf")
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cases(rng, dtype=np.float32):
    B, T, Cin, K, W, H = 200, 128, 2, 64, 8, 64
    x = rng.normal(size=(B, T, Cin)).astype(dtype)
    k = rng.normal(size=(K, W, Cin)).astype(dtype)
    kb = rng.normal(size=K).astype(dtype)
    gy = rng.normal(size=(B, T, K)).astype(dtype)
    xl = rng.normal(size=(B, T, K)).astype(dtype)
    wx = (rng.normal(size=(K, 4 * H)) * 0.1).astype(dtype)
    wh = (rng.normal(size=(H, 4 * H)) * 0.1).astype(dtype)
    lb = np.zeros(4 * H, dtype=dtype)
    gh = rng.normal(size=(B, T, H)).astype(dtype)
    x1 = rng.normal(size=(64, T, K)).astype(dtype)
    gh1 = rng.normal(size=(64, T, H)).astype(dtype)

    def conv_fwd(be):
        return lambda: be.conv1d_forward(x, k, kb)

    def conv_bwd(be):
        return lambda: be.conv1d_backward(x, k, gy)

    def lstm_fwd(be):
        return lambda: be.lstm_forward(xl, wx, wh, lb)

    h, gates, c = numpy_backend.lstm_forward(xl, wx, wh, lb)

    def lstm_bwd(be):
        return lambda: be.lstm_backward(xl, wx, wh, h, gates, c, gh)

    h1, gates1, c1 = numpy_backend.lstm_forward(x1, wx, wh, lb)

    def lstm_bwd_input_only(be):
        return lambda: be.lstm_backward(x1, wx, wh, h1, gates1, c1, gh1, True, False)

    return [
        ("conv1d fwd  B=200 T=128 K=64", conv_fwd),
        ("conv1d bwd  B=200 T=128 K=64", conv_bwd),
        ("lstm fwd    B=200 T=128 H=64", lstm_fwd),
        ("lstm bwd    B=200 T=128 H=64", lstm_bwd),
        ("lstm bwd/gx B=64  T=128 H=64", lstm_bwd_input_only),
    ]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--reps", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    rows = []
    for name, make in cases(rng):
        t_np = timeit(make(numpy_backend), args.reps)
        if _fast is not None:
            t_c = timeit(make(_fast), args.reps)
            rows.append((name, t_np * 1e3, t_c * 1e3, t_np / t_c))
        else:
            rows.append((name, t_np * 1e3, None, None))
    print(f"{'kernel':<32} {'numpy ms':>10} {'compiled ms':>12} {'speedup':>9}")
    for name, tn, tc, sp in rows:
        if tc is None:
            print(f"{name:<32} {tn:>10.2f} {'n/a':>12} {'n/a':>9}")
        else:
            print(f"{name:<32} {tn:>10.2f} {tc:>12.2f} {sp:>8.2f}x")
    if _fast is None:
        print("\ncompiled backend not built; run pip install -e . first")


if __name__ == "__main__":
    main()
