"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat N]

Both paths are imported from the same module, so the env flag is not needed
here; it only selects which path the public dispatchers use.
"""
import argparse
import time

import numpy as np

from ecgsiglip import kernels as K


def _cases(rng):
    n_waves = 90  # about one 10 s record: ~12 beats x 7 bumps
    waves = (rng.uniform(0, 10, n_waves), rng.uniform(0.004, 0.04, n_waves), rng.normal(0, 1, (n_waves, 12)),
             5000, 500)
    bits = (rng.random((64, 26)) < 0.1).astype(np.uint8)  # one training batch of label sets
    scores = np.sort(rng.random(20000))[::-1].copy()
    truth = (rng.random(20000) < 0.2).astype(np.uint8)
    return {
        "render_waves": (K.render_waves_jit, K.render_waves_numpy, waves),
        "jaccard_matrix": (K.jaccard_matrix_jit, K.jaccard_matrix_numpy, (bits,)),
        "roc_sweep": (K.roc_sweep_jit, K.roc_sweep_numpy, (scores, truth)),
    }


def _best(fn, args, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':16s} {'numba (ms)':>11s} {'numpy (ms)':>11s} {'speedup':>8s}")
    for name, (jit, ref, fargs) in _cases(rng).items():
        jit(*fargs)  # compile outside the timing
        a, b = _best(jit, fargs, args.repeat), _best(ref, fargs, args.repeat)
        print(f"{name:16s} {a * 1e3:11.3f} {b * 1e3:11.3f} {b / a:7.1f}x")


if __name__ == "__main__":
    main()
