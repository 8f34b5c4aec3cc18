#!/usr/bin/env python3
"""Per-block FLOP distribution of the 11-block fully convolutional networks."""

import argparse
import csv
import sys

from logdense import cost


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--growth-rate", "-g", type=int, default=24)
    ap.add_argument("--resolution", type=int, default=224)
    args = ap.parse_args()

    r = (args.resolution, args.resolution)
    fc = cost.flops(cost.fc_plan(cost.NetworkConfig(growth_rate=args.growth_rate, input_resolution=r, num_classes=11)))
    dn = cost.flops(
        cost.fc_densenet103_plan(
            cost.NetworkConfig(growth_rate=16, input_resolution=r, num_classes=11, initial_channels=48)
        )
    )
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["block", "fc_logdense_gflops", "fc_logdense_frac", "fc_densenet_gflops", "fc_densenet_frac"])
    fa, fb = cost.block_cost_distribution(fc), cost.block_cost_distribution(dn)
    for b in range(len(fa)):
        w.writerow([b, f"{fc.per_block[b] / 1e9:.4f}", f"{fa[b]:.4f}", f"{dn.per_block[b] / 1e9:.4f}", f"{fb[b]:.4f}"])
    print(f"# final two blocks: {fa[-2] + fa[-1]:.3f} (fc-logdense), {fb[-2] + fb[-1]:.3f} (fc-densenet)", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
