"""Time the hot kernels on every importable backend.

    python3 benchmarks/bench_kernels.py [--repeat N]

Prints one row per (kernel, backend) with the best wall time over N runs and
the speedup relative to the pure-Python backend.
"""

import argparse
import math
import timeit

import numpy as np

from dpqhd import _fallback, kernels


def _similarity_operands(rng, C, D, N):
    W = rng.integers(-3, 4, (C, D)).astype(np.int8)
    H = rng.integers(-127, 128, (N, D)).astype(np.int8)
    w_scale, h_scale = rng.uniform(0.1, 1, C), rng.uniform(0.1, 1, N)
    w_norm = np.linalg.norm(W * w_scale[:, None], axis=1)
    h_norm = np.linalg.norm(H * h_scale[:, None], axis=1)
    return W, w_scale, w_norm, H, h_scale, h_norm


def cases(rng):
    """(name, callable taking a backend module) pairs, MNIST-like shapes."""
    n = 64
    A = rng.standard_normal((n, n))
    pairs = _fallback.round_robin_pairs(n)

    def jacobi(impl):
        impl.jacobi_orthogonalize(np.ascontiguousarray(A.T), np.eye(n), pairs)

    vals = rng.integers(-4, 4, 256 * 3000)
    packed = np.asarray(_fallback.pack_bits(vals, 3), dtype=np.uint8)
    ops = _similarity_operands(rng, 10, 3000, 200)
    chunk = math.ceil(3000 / 10)
    return [
        ("jacobi 64x64", jacobi),
        ("pack 768k x 3 bit", lambda impl: impl.pack_bits(vals, 3)),
        ("unpack 768k x 3 bit", lambda impl: impl.unpack_bits(packed, 3, len(vals))),
        ("full scores 200x10x3000", lambda impl: impl.full_scores(*ops, chunk)),
        ("adaptive 200x10x3000", lambda impl: impl.adaptive_batch(
            *ops, chunk, 0.05, True, True, True)),
    ]


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args(argv)
    backends = kernels.backends()
    rng = np.random.default_rng(0)
    print(f"backends: {', '.join(sorted(backends))} (selected: {kernels.BACKEND})")
    print(f"{'kernel':<26} {'backend':<8} {'seconds':>10} {'vs python':>10}")
    for name, fn in cases(rng):
        times = {}
        for bname in sorted(backends, key=lambda b: b != "python"):
            impl = backends[bname]
            times[bname] = min(timeit.repeat(lambda: fn(impl), number=1, repeat=args.repeat))
            ratio = times["python"] / times[bname]
            print(f"{name:<26} {bname:<8} {times[bname]:>10.4f} {ratio:>9.1f}x")


if __name__ == "__main__":
    main()
