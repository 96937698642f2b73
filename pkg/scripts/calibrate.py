"""Pre-registered calibration batch for the simulation thresholds.

Runs on a seed disjoint from the acceptance seed and prints the statistics
from which the frozen constants in ``gibbsdim.acceptance`` were chosen.

    python3 scripts/calibrate.py [--seed 1] [--orbits 1000]
"""

import argparse
import time

import numpy as np

from gibbsdim import acceptance as A
from gibbsdim import estimators as est
from gibbsdim.measures import LogSquare
from gibbsdim.orbits import dichotomy_spread, map_orbits, max_blowup, trimmed_sum
from gibbsdim.partition import GaussPartition


def quantiles(x):
    q = np.quantile(x, [0.1, 0.25, 0.5, 0.75, 0.9])
    return " ".join(f"{v:.4f}" for v in q)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--orbits", type=int, default=1000)
    args = ap.parse_args()
    mu, part = LogSquare(), GaussPartition()

    t = time.time()
    for crit in ("1", "2", "6", "8", "11"):
        r = A.CRITERIA[crit](seed=args.seed)
        print(r.line())
        print("   ", {k: v for k, v in r.metrics.items() if k != "seconds"}, f"{r.seconds:.1f}s")

    # dichotomy spread at N = 1e5 over a large batch, and in blocks of 100
    N = 10**5

    def sums(o):
        S, St, _ = trimmed_sum(o, N)
        return S, St, max_blowup(o, 10**3), max_blowup(o, N)

    vals = np.array(map_orbits(sums, mu, part, N, args.orbits, args.seed + 1))
    sp = dichotomy_spread(vals[:, :2], N)
    print(f"spread over {args.orbits} orbits: full {sp.full_spread:.3g} trimmed {sp.trimmed_spread:.3g}")
    for i in range(0, args.orbits, 100):
        s = dichotomy_spread(vals[i : i + 100, :2], N)
        print(f"  block {i // 100}: full {s.full_spread:.3g} trimmed {s.trimmed_spread:.3g}")
    print("max blow-up quantiles at 1e3:", quantiles(vals[:, 2]))
    print("max blow-up quantiles at 1e5:", quantiles(vals[:, 3]))
    print("trimmed/full quantiles:", quantiles(vals[:, 1] / vals[:, 0]))

    # case-split maxima over different windows
    k0, how = A.threshold_k0()
    print("k0", k0, how)

    def cs(o):
        c = est.case_split_curve(o, k0)
        out = []
        for lo in (10, 10**2, 10**3, 10**4):
            out.append(np.max(c.ratio[lo - 2 :]))
        return out + [est.neighbor_upper_last_valid(o).ratio]

    cv = np.array(map_orbits(cs, mu, part, N, 100, args.seed + 2, store=True))
    for j, lo in enumerate((10, 10**2, 10**3, 10**4)):
        print(f"case-split max over n >= {lo}: {quantiles(cv[:, j])}")
    print("neighbour ratio at last valid n:", quantiles(cv[:, 4]))
    print(f"total {time.time() - t:.0f}s")


if __name__ == "__main__":
    main()
