#!/usr/bin/env python3
"""Gradient descent on an 8-sample memorization task; writes the per-head loss trajectory as CSV."""

import argparse
import sys

import numpy as np

from logdense import micronet, topology
from logdense.cost import NetworkConfig


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--scheme", default="logdense-v1")
    ap.add_argument("--layers", "-L", type=int, default=8)
    ap.add_argument("--blocks", default="4,4")
    ap.add_argument("--growth-rate", "-g", type=int, default=4)
    ap.add_argument("--steps", type=int, default=200)
    ap.add_argument("--lr", type=float, default=0.1)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--final-only", action="store_true", help="train on the final head alone")
    args = ap.parse_args()

    blocks = tuple(int(b) for b in args.blocks.split(","))
    topo = topology.generate(args.scheme, args.layers, blocks, g=args.growth_rate)
    side = 4 * 2 ** (len(blocks) - 2) if len(blocks) > 1 else 4
    cfg = NetworkConfig(growth_rate=args.growth_rate, input_resolution=(side, side), num_classes=3)
    model = micronet.build(topo, cfg, seed=args.seed)

    rng = np.random.default_rng(args.seed)
    x = rng.normal(size=(8, 3, side, side))
    y = rng.integers(0, 3, size=8)
    spec = micronet.LossSpec(model.num_aux, final_only=args.final_only)
    try:
        traj = micronet.train_toy(model, (x, y), steps=args.steps, lr=args.lr, spec=spec)
    except micronet.TrainingDiverged as exc:
        sys.stdout.write(micronet.trajectory_csv(exc.trajectory))
        print(f"diverged: {exc}", file=sys.stderr)
        return 1
    sys.stdout.write(micronet.trajectory_csv(traj))
    return 0


if __name__ == "__main__":
    sys.exit(main())
