#!/usr/bin/env python3
"""MBD and mean in-degree for every connection scheme at a given depth."""

import argparse
import csv
import sys

from logdense import analysis, topology


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--layers", "-L", type=int, default=64)
    ap.add_argument("--blocks", type=int, default=1, help="number of equal blocks")
    args = ap.parse_args()

    L, nb = args.layers, args.blocks
    q, r = divmod(L, nb)
    blocks = tuple(q + (b < r) for b in range(nb))
    topos = [
        topology.dense_topology(L, blocks),
        topology.log_dense_v1(L, blocks),
        topology.loglog_topology(L, blocks),
        topology.nearest(L, blocks, "log"),
        topology.evenly_spaced(L, blocks, "log"),
        topology.nearest(L, blocks, "half"),
        topology.evenly_spaced(L, blocks, "half"),
        topology.nearest_half_and_log(L, blocks),
    ]
    if nb > 1:
        topos.insert(2, topology.log_dense_v2(L, blocks, 12))

    rows = [analysis.analysis_row(t) for t in topos]
    for row, t in zip(rows, topos):
        row["budget"] = t.scheme_params.get("budget", "")
    w = csv.DictWriter(sys.stdout, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return 0


if __name__ == "__main__":
    sys.exit(main())
