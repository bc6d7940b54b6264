#!/usr/bin/env python3
"""Fit the reconstruction path to one fixed (I, P) pair and print the loss curve summary."""
import argparse
import time

from dlpl.probes import reconstruction_trainability


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--steps", type=int, default=500)
    ap.add_argument("--lr", type=float, default=0.01)
    args = ap.parse_args()
    for seed in args.seeds:
        t0 = time.process_time()
        res = reconstruction_trainability(seed=seed, steps=args.steps, lr=args.lr)
        print(f"seed {seed}: loss {res.initial:.4f} -> {res.final:.4f} "
              f"({res.reduction:.1%} reduction, {time.process_time() - t0:.1f}s CPU)")


if __name__ == "__main__":
    main()
