#!/usr/bin/env python3
"""FLOPs and parameter counts for the two fully convolutional networks, both conventions."""

import argparse
import sys

from logdense import cost


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--resolution", type=int, default=224)
    args = ap.parse_args()

    r = (args.resolution, args.resolution)
    plans = [
        cost.fc_plan(cost.NetworkConfig(growth_rate=24, input_resolution=r, num_classes=11)),
        cost.fc_densenet103_plan(
            cost.NetworkConfig(growth_rate=16, input_resolution=r, num_classes=11, initial_channels=48)
        ),
    ]
    for conv in cost.FlopConvention:
        print(f"# convention: {conv.value}")
        for plan in plans:
            print(cost.flops(plan, conv).table_row())
    return 0


if __name__ == "__main__":
    sys.exit(main())
