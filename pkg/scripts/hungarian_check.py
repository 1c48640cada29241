"""Compare the Hungarian solver with scipy's linear_sum_assignment on larger matrices.

Brute force only reaches 7x7; this checks optimal totals at sizes the
training loop actually sees and reports timings.

    python scripts/hungarian_check.py --trials 50 --max-side 300
"""
import argparse
import time

import numpy as np
from scipy.optimize import linear_sum_assignment

from ssrcnn.matching import hungarian, matching_cost


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--trials", type=int, default=50)
    ap.add_argument("--max-side", type=int, default=300)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    ours = ref = 0.0
    worst = 0.0
    for _ in range(args.trials):
        r, c = rng.integers(1, args.max_side + 1, 2)
        cost = rng.random((r, c)) * 10
        t = time.perf_counter()
        total = matching_cost(cost, hungarian(cost))
        ours += time.perf_counter() - t
        t = time.perf_counter()
        rows, cols = linear_sum_assignment(cost)
        ref += time.perf_counter() - t
        expect = float(cost[rows, cols].sum())
        worst = max(worst, abs(total - expect) / max(1.0, abs(expect)))
    print(f"{args.trials} matrices up to {args.max_side} per side: max relative gap {worst:.2e}")
    print(f"time: ours {ours:.2f} s, scipy {ref:.2f} s")
    if worst > 1e-12:
        raise SystemExit("totals disagree")


if __name__ == "__main__":
    main()
