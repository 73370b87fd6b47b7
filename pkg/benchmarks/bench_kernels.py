"""Compare the compiled and pure-Python candidate-scoring kernels.

Both backends score the same candidates on the same calibration sequence;
the script checks that their outputs agree bit for bit and reports the
median wall time per candidate.

Usage::

    python3 benchmarks/bench_kernels.py --calibration-length 200 --horizon 2
"""

import argparse
import statistics
import time

import numpy as np

from markovcp._kernels import backends
from markovcp.conformal import TIE_TOL
from markovcp.markov import conflict_reference_chain, simulate_chain, transition_counts


def run(fn, calib0, base, m, horizon, lo, hi, n_perm, seed):
    n = hi - lo
    out = dict(
        q=np.empty(n), sid=np.empty(n), nperm=np.empty(n, dtype=np.int64),
        greater=np.empty(n, dtype=np.int64), equal=np.empty(n, dtype=np.int64), u=np.empty(n),
    )
    t0 = time.perf_counter()
    fn(calib0, base, m, horizon, lo, hi, n_perm, False, -1, seed, TIE_TOL,
       out["q"], out["sid"], out["nperm"], out["greater"], out["equal"], out["u"])
    return time.perf_counter() - t0, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--calibration-length", type=int, default=200)
    ap.add_argument("--horizon", type=int, default=2)
    ap.add_argument("--max-perms", type=int, default=2000)
    ap.add_argument("--candidates", type=int, default=4, help="candidates scored per repeat")
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args(argv)

    P, init = conflict_reference_chain()
    calib = simulate_chain(init, P, args.calibration_length, args.seed)
    m = P.m
    calib0 = np.ascontiguousarray(np.asarray(calib) - 1, dtype=np.int64)
    base = np.ascontiguousarray(transition_counts(calib, m), dtype=np.int64)
    hi = min(args.candidates, m**args.horizon)

    timings, outputs = {}, {}
    for name, fn in backends().items():
        runs = [run(fn, calib0, base, m, args.horizon, 0, hi, args.max_perms, args.seed)
                for _ in range(args.repeats)]
        timings[name] = statistics.median(t for t, _ in runs) / hi
        outputs[name] = runs[0][1]

    print(f"T={args.calibration_length} m={m} H={args.horizon} n={args.max_perms} "
          f"candidates={hi} repeats={args.repeats}")
    for name, t in timings.items():
        print(f"{name:>8}: {1e3 * t:10.3f} ms per candidate")
    if "cython" in timings:
        same = all(np.array_equal(outputs["cython"][k], outputs["python"][k])
                   for k in outputs["python"])
        print(f" speedup: {timings['python'] / timings['cython']:10.1f}x")
        print(f"identical outputs: {same}")


if __name__ == "__main__":
    main()
