"""Microbenchmark: compiled kernels vs the numpy backend.

Times each kernel at the shapes the package actually uses — single-row
inference, the per-slot acting batch, and optimizer minibatches — and
prints per-call medians plus the speedup of the compiled backend over
numpy. Run from a checkout:

    python3 benchmarks/bench_kernels.py [--repeats 7]
"""

import argparse
import time

import numpy as np

from microdsm.kernels import backends


def _bench(fn, args, repeats, inner):
    best = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        for _ in range(inner):
            fn(*args)
        best.append((time.perf_counter() - t0) / inner)
    return min(best)


def _cases(rng):
    """(label, op name, argument builder) for realistic shapes."""
    shapes = [(1, 64, 64), (20, 19, 64), (32, 64, 64), (256, 64, 64),
              (256, 1038, 64)]
    cases = []
    for b, i, o in shapes:
        x = rng.normal(size=(b, i))
        w = rng.normal(size=(i, o))
        bias = rng.normal(size=o)
        dz = rng.normal(size=(b, o))
        a = np.tanh(rng.normal(size=(b, o)))
        cases.append((f"affine          {b:4d}x{i:4d}->{o:3d}", "affine",
                      (x, w, bias)))
        cases.append((f"affine_backward {b:4d}x{i:4d}->{o:3d}",
                      "affine_backward", (x, w, dz)))
        cases.append((f"tanh            {b:4d}x{o:4d}", "tanh", (dz,)))
        cases.append((f"tanh_backward   {b:4d}x{o:4d}", "tanh_backward",
                      (a, dz)))
    n = 64 * 64
    p, g = rng.normal(size=n), rng.normal(size=n)
    m, v = np.zeros(n), np.zeros(n)
    cases.append((f"adam_step       {n} params", "adam_step",
                  (p, g, m, v, 3, 1e-3, 0.9, 0.999, 1e-8)))
    return cases


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=7)
    parser.add_argument("--inner", type=int, default=200)
    args = parser.parse_args()

    impls = backends()
    if "cy" not in impls:
        raise SystemExit("compiled backend not built; "
                         "run `pip install -e . --no-build-isolation`")
    rng = np.random.default_rng(0)
    print(f"{'case':34s} {'py us':>10s} {'cy us':>10s} {'cy speedup':>11s}")
    for label, op, op_args in _cases(rng):
        t = {}
        for name, impl in impls.items():
            t[name] = _bench(getattr(impl, op), op_args, args.repeats,
                             args.inner)
        print(f"{label:34s} {t['py'] * 1e6:10.2f} {t['cy'] * 1e6:10.2f} "
              f"{t['py'] / t['cy']:10.2f}x")


if __name__ == "__main__":
    main()
