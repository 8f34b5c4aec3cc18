#!/usr/bin/env python3
"""Mean in-degree of LogLog connectivity over an L sweep (min_inputs 1 and 4) as CSV."""

import argparse
import csv
import sys

from logdense.analysis import fig6a_rows


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--start", type=int, default=16)
    ap.add_argument("--stop", type=int, default=2000)
    ap.add_argument("--step", type=int, default=1)
    ap.add_argument("--min4-limit", type=int, default=1700)
    args = ap.parse_args()

    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["L", "mean_min1", "mean_min4", "delta", "min1_in_band", "delta_in_band"])
    for r in fig6a_rows(range(args.start, args.stop + 1, args.step), args.min4_limit):
        w.writerow([
            r.L,
            f"{float(r.mean_min1):.6f}",
            "" if r.mean_min4 is None else f"{float(r.mean_min4):.6f}",
            "" if r.delta is None else f"{float(r.delta):.6f}",
            r.min1_in_band,
            "" if r.delta_in_band is None else r.delta_in_band,
        ])
    return 0


if __name__ == "__main__":
    sys.exit(main())
