"""Benchmark the twin kernel implementations against each other.

Times every hot kernel under both the vectorized numpy path and the
numba @njit path (when installed), on a padded batch of configurable
size. The jit functions are warmed up first so compile time stays out
of the numbers.

    python benchmarks/bench_kernels.py --batch 64 --len 64 --dim 128 --repeat 200
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from seqattn import kernels


def build_inputs(batch: int, seq_len: int, dim: int, vocab: int = 1000):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(batch, seq_len, dim))
    lengths = rng.integers(1, seq_len + 1, size=batch)
    mask = (np.arange(seq_len)[None, :] < lengths[:, None]).astype(np.float64)
    z = rng.normal(size=(batch, seq_len))
    g_bd = rng.normal(size=(batch, dim))
    g_bl = rng.normal(size=(batch, seq_len))
    g_bld = rng.normal(size=(batch, seq_len, dim))
    table = rng.normal(size=(vocab, dim))
    ids = rng.integers(0, vocab, size=(batch, seq_len))
    softmax = kernels.IMPLS["numpy"]["masked_softmax_fwd"](z, mask)
    _, arg_token = kernels.IMPLS["numpy"]["token_maxpool_fwd"](x, mask)
    _, arg_feat = kernels.IMPLS["numpy"]["feature_maxpool_fwd"](x, mask)
    return {
        "token_maxpool_fwd": (x, mask),
        "token_maxpool_bwd": (g_bd, arg_token, seq_len),
        "token_avgpool_fwd": (x, mask),
        "token_avgpool_bwd": (g_bd, mask),
        "feature_maxpool_fwd": (x, mask),
        "feature_maxpool_bwd": (g_bl, mask, arg_feat, dim),
        "feature_avgpool_fwd": (x, mask),
        "feature_avgpool_bwd": (g_bl, mask, dim),
        "masked_softmax_fwd": (z, mask),
        "masked_softmax_bwd": (g_bl, softmax, mask),
        "embedding_fwd": (table, ids),
        "embedding_bwd": (g_bld, ids, vocab, 0),
    }


def time_call(fn, args, repeat: int) -> float:
    best = float("inf")
    for _ in range(3):
        started = time.perf_counter()
        for _ in range(repeat):
            fn(*args)
        best = min(best, (time.perf_counter() - started) / repeat)
    return best


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--batch", type=int, default=64)
    parser.add_argument("--len", type=int, default=64, dest="seq_len")
    parser.add_argument("--dim", type=int, default=128)
    parser.add_argument("--repeat", type=int, default=100)
    args = parser.parse_args()

    inputs = build_inputs(args.batch, args.seq_len, args.dim)
    numpy_impl = kernels.IMPLS["numpy"]
    numba_impl = kernels.IMPLS.get("numba")
    if numba_impl is None:
        print("numba not installed: timing the numpy path only")
    else:
        for name, fn in numba_impl.items():
            fn(*inputs[name])  # compile before timing

    header = f"{'kernel':<22} {'numpy (us)':>12} {'numba (us)':>12} {'speedup':>9}"
    print(f"batch={args.batch} len={args.seq_len} dim={args.dim} repeat={args.repeat}")
    print(header)
    print("-" * len(header))
    for name in numpy_impl:
        t_np = time_call(numpy_impl[name], inputs[name], args.repeat)
        if numba_impl is not None:
            t_nb = time_call(numba_impl[name], inputs[name], args.repeat)
            print(f"{name:<22} {t_np * 1e6:>12.1f} {t_nb * 1e6:>12.1f} {t_np / t_nb:>8.2f}x")
        else:
            print(f"{name:<22} {t_np * 1e6:>12.1f} {'-':>12} {'-':>9}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
