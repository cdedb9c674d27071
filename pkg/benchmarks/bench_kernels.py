"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Prints one line per kernel and shape with the best-of-N time for each backend,
the speedup, and the max absolute difference between their outputs.
"""
import argparse
import timeit

import numpy as np

from pcda import _kernels_py

try:
    from pcda import _ckernels
except ImportError:
    _ckernels = None


def cases(rng):
    # per-point encoder output of a 32-cloud batch at 1024 and 50 points
    for b, n, d in ((32, 1024, 1024), (32, 50, 1024), (32, 256, 128)):
        H = rng.standard_normal((b * n, d))
        off = np.arange(0, b * n + 1, n, dtype=np.int64)
        yield "segment_max", f"B={b} n={n} d={d}", (H, off)
        _, arg = _kernels_py.segment_max(H, off)
        G = rng.standard_normal((b, d))
        yield "segment_max_backward", f"B={b} n={n} d={d}", (G, arg, b * n)
    # fc-layer activations of source and target batches
    for n, d in ((32, 512), (32, 256), (256, 64)):
        yield "pairwise_sqdist", f"n={n} d={d}", (rng.standard_normal((n, d)), rng.standard_normal((n, d)))


def best(fn, args, repeat):
    t = timeit.Timer(lambda: fn(*args))
    loops, _ = t.autorange()
    return min(t.repeat(repeat, loops)) / loops


def flat(out):
    return out[0] if isinstance(out, tuple) else out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if _ckernels is None:
        print("compiled extension not built; nothing to compare")
        return 1
    rng = np.random.default_rng(0)
    print(f"{'kernel':<22} {'shape':<22} {'numpy ms':>10} {'cython ms':>10} {'speedup':>8} {'max diff':>9}")
    for name, shape, a in cases(rng):
        py, cy = getattr(_kernels_py, name), getattr(_ckernels, name)
        tp, tc = best(py, a, args.repeat), best(cy, a, args.repeat)
        diff = float(np.abs(np.asarray(flat(py(*a))) - np.asarray(flat(cy(*a)))).max())
        print(f"{name:<22} {shape:<22} {tp * 1e3:10.3f} {tc * 1e3:10.3f} {tp / tc:7.2f}x {diff:9.1e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
