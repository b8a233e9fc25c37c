"""Time the Cython kernels against the numpy fallback.

Run with ``python benchmarks/bench_kernels.py``; prints one line per kernel.
"""
import timeit

import numpy as np

from twohop import _fallback

try:
    from twohop import _kernels
except ImportError:
    _kernels = None


def cases(rng):
    labels = rng.integers(0, 64, 1 << 14)
    values = rng.random((1 << 14, 256))
    cb = rng.integers(0, 2, (512, 12))
    lut = rng.normal(size=(2, 2))
    return {
        "scatter_rows": lambda m: m.scatter_rows(labels, values, 64),
        "pair_scores": lambda m: m.pair_scores(cb, lut, 12),
        "best_codeword": lambda m: m.best_codeword(cb, lut, 12),
    }


def main(repeat=5):
    rng = np.random.default_rng(0)
    impls = [("python", _fallback)] + ([("cython", _kernels)] if _kernels else [])
    print(f"{'kernel':<14} " + " ".join(f"{name:>10}" for name, _ in impls) + "   speedup")
    for name, fn in cases(rng).items():
        times = [min(timeit.repeat(lambda: fn(m), number=1, repeat=repeat)) for _, m in impls]
        speed = f"{times[0] / times[1]:8.2f}x" if len(times) > 1 else "       -"
        print(f"{name:<14} " + " ".join(f"{t * 1e3:8.2f}ms" for t in times) + f"  {speed}")


if __name__ == "__main__":
    main()
