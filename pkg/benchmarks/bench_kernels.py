"""Compare the compiled and pure-Python smoothed-barrier kernels.

Usage: python benchmarks/bench_kernels.py [--batch 50] [--repeat 200]

Times ``SmoothBarrier.evaluate_batch`` (value, gradient and Hessian) on the
bundled multi-obstacle barrier tree for both schemes and both backends,
checks that the backends agree, and prints one line per configuration.
"""

import argparse
import timeit

import numpy as np

from safeswarm import kernels
from safeswarm.mission import build_barrier_tree, load_bundled
from safeswarm.smoothing import SmoothBarrier


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--batch", type=int, default=50)
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--scenario", default="multi_obstacle")
    args = ap.parse_args()

    s = load_bundled(args.scenario)
    tree = build_barrier_tree(s)
    n = 2 * s.n_agents
    X = np.random.default_rng(0).uniform(-2, 12, size=(args.batch, n))
    backends = ["python"] + (["compiled"] if kernels.compiled is not None else [])
    if len(backends) == 1:
        print("compiled extension not built; timing the python backend only")

    print(f"{'scheme':<6} {'backend':<9} {'ms/batch':>10} {'us/state':>10} {'speedup':>8}")
    for scheme in ("poly", "lse"):
        cfg = s.replace(scheme=scheme).smoothing()
        results, times = {}, {}
        for name in backends:
            sb = SmoothBarrier(tree, cfg, n, backend=name)
            results[name] = sb.evaluate_batch(X)
            t = min(timeit.repeat(lambda: sb.evaluate_batch(X), number=1,
                                  repeat=args.repeat))
            times[name] = t
        if "compiled" in results:
            diff = max(float(np.max(np.abs(a - b)))
                       for a, b in zip(results["python"], results["compiled"]))
            if diff > 1e-10:
                raise SystemExit(f"backends disagree for {scheme}: {diff:.3e}")
        for name in backends:
            t = times[name]
            print(f"{scheme:<6} {name:<9} {t * 1e3:10.3f} {t / args.batch * 1e6:10.2f} "
                  f"{times['python'] / t:8.1f}x")


if __name__ == "__main__":
    main()
