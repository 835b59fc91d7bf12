"""Throughput comparison of the compiled and pure matrix-game loops.

Both backends must produce bit-identical trajectories; this script checks
that on every run before reporting rounds/second.

    python3 benchmarks/bench_kernels.py --horizon 200000
"""

import argparse
import time

import numpy as np

from mielab.kernels import matrix_py, run_matrix_rounds
from mielab.scenarios import make_scenario

try:
    from mielab.kernels import _matrix_cy
except ImportError:
    _matrix_cy = None


def run_once(scenario, seed, horizon, impl):
    t0 = time.perf_counter()
    out = run_matrix_rounds(scenario, seed, horizon, impl=impl)
    return time.perf_counter() - t0, out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--game", default="matching_pennies")
    ap.add_argument("--learner", default="q", choices=["q", "fictitious"])
    ap.add_argument("--horizon", type=int, default=200_000)
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    scenario = make_scenario({"kind": "matrix", "name": args.game, "learner": args.learner})
    impls = [("pure", matrix_py)]
    if _matrix_cy is not None:
        impls.append(("compiled", _matrix_cy))
    else:
        print("compiled backend not available; benchmarking pure only")

    best = {}
    outputs = {}
    for name, impl in impls:
        times = []
        for _ in range(args.repeats):
            dt, out = run_once(scenario, args.seed, args.horizon, impl)
            times.append(dt)
        best[name] = min(times)
        outputs[name] = out

    if len(outputs) == 2:
        a, b = outputs["pure"], outputs["compiled"]
        same = all(
            np.array_equal(np.asarray(x), np.asarray(y))
            for pair in ("actions", "q", "beliefs", "rows")
            for x, y in zip(a[pair], b[pair])
        )
        print(f"bitwise identical: {same}")
        if not same:
            raise SystemExit("backends disagree; refusing to report throughput")

    print(f"game={args.game} learner={args.learner} horizon={args.horizon} (best of {args.repeats})")
    for name, _ in impls:
        rate = args.horizon / best[name]
        print(f"  {name:>8}: {best[name]:8.4f} s   {rate:12.0f} rounds/s")
    if len(best) == 2:
        print(f"  speedup: {best['pure'] / best['compiled']:.1f}x")


if __name__ == "__main__":
    main()
