#!/usr/bin/env python3
"""Time the jitted kernels against their pure-numpy fallback path.

Both paths run the same function bodies (numba compiles them, the fallback
calls them as plain Python), so this script also cross-checks that they agree
numerically. Agreement is asserted at tight tolerance rather than bit-for-bit:
numba links libm's transcendentals while numpy ships its own, and the two can
legitimately differ by a couple of ULPs.

Run inside the installed package environment:

    python3 benchmarks/bench_kernels.py --repeats 50
"""

import argparse
import time
from statistics import median

import numpy as np

from charsub import kernels
from charsub.kernels import NUMBA_ENABLED, py_func


def _agree(a, b, rtol=1e-12, atol=1e-14):
    if isinstance(a, tuple):
        return all(_agree(x, y, rtol, atol) for x, y in zip(a, b))
    return np.allclose(np.asarray(a, dtype=np.float64),
                       np.asarray(b, dtype=np.float64), rtol=rtol, atol=atol)


def _time(fn, make_args, repeats):
    runs = []
    for _ in range(repeats):
        args = make_args()
        t0 = time.perf_counter()
        fn(*args)
        runs.append(time.perf_counter() - t0)
    return median(runs)


def build_cases(seq_len, dim, heads, lev_len, seed):
    rng = np.random.default_rng(seed)
    ff = 2 * dim

    def mat(*shape):
        return rng.normal(0.0, 0.1, shape)

    x = mat(seq_len, dim)
    weights = (mat(dim, dim), mat(dim), mat(dim, dim), mat(dim),
               mat(dim, dim), mat(dim), mat(dim, dim), mat(dim),
               np.ones(dim), np.zeros(dim), mat(dim, ff), mat(ff),
               mat(ff, dim), mat(dim), np.ones(dim), np.zeros(dim))
    fwd_args = (x, *weights, heads)
    cache = py_func(kernels.encoder_layer_forward)(*fwd_args)
    dout = mat(seq_len, dim)
    bwd_args = (dout, x, weights[0], weights[2], weights[4], weights[6],
                weights[8], weights[10], weights[12], weights[14],
                *cache[1:], heads)
    seq_a = rng.integers(0, 26, lev_len).astype(np.int32)
    seq_b = rng.integers(0, 26, lev_len).astype(np.int32)

    def adam_args():
        return (mat(dim, dim), mat(dim, dim), np.zeros((dim, dim)),
                np.zeros((dim, dim)), 1, 0.3, 0.9, 0.999, 1e-8)

    return [
        ("encoder forward", kernels.encoder_layer_forward, lambda: fwd_args),
        ("encoder backward", kernels.encoder_layer_backward, lambda: bwd_args),
        ("adam step", kernels.adam_update, adam_args),
        ("levenshtein", kernels.levenshtein_codes, lambda: (seq_a, seq_b)),
    ]


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seq-len", type=int, default=64)
    ap.add_argument("--dim", type=int, default=64)
    ap.add_argument("--heads", type=int, default=4)
    ap.add_argument("--lev-len", type=int, default=400,
                    help="length of the two levenshtein input sequences")
    ap.add_argument("--repeats", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    if not NUMBA_ENABLED:
        print("numba is disabled (CHARSUB_NO_NUMBA set or numba missing); "
              "both columns below run the pure-numpy path.")

    kernels.warmup()
    cases = build_cases(args.seq_len, args.dim, args.heads, args.lev_len, args.seed)

    print(f"{'kernel':<18} {'jit (ms)':>10} {'numpy (ms)':>11} {'speedup':>8}")
    for name, fn, make_args in cases:
        plain = py_func(fn)
        if name == "adam step":
            # in-place kernel: agree-check from identical fresh state
            a1, a2 = make_args(), make_args()
            a2 = (a1[0].copy(), a1[1], a1[2].copy(), a1[3].copy(), *a1[4:])
            fn(*a1)
            plain(*a2)
            same = _agree(a1[0], a2[0]) and _agree(a1[2], a2[2])
        else:
            same = _agree(fn(*make_args()), plain(*make_args()))
        assert same, f"{name}: jit and numpy paths disagree beyond tolerance"
        t_jit = _time(fn, make_args, args.repeats)
        t_py = _time(plain, make_args, args.repeats)
        print(f"{name:<18} {t_jit * 1e3:>10.3f} {t_py * 1e3:>11.3f} "
              f"{t_py / t_jit:>7.1f}x")
    print("numerical agreement: OK (rtol=1e-12, atol=1e-14)")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
