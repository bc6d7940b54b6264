#!/usr/bin/env python3
"""Overfit the desk-size model on one batch and report the cross-entropy trajectory."""
import argparse
from dataclasses import replace

from dlpl.config import ModelConfig
from dlpl.harness import build_model, generate_dataset
from dlpl.harness.model import pointness_scores
from dlpl.probes import overfit_one_batch


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--batch", type=int, default=1)
    ap.add_argument("--steps", type=int, default=300)
    ap.add_argument("--lr", type=float, default=3e-3)
    ap.add_argument("--baseline", action="store_true")
    args = ap.parse_args()
    cfg = replace(ModelConfig(), baseline=args.baseline)
    ds = generate_dataset(args.batch, 0, img_size=cfg.img_size, seed=0)
    res = overfit_one_batch(build_model(cfg), ds.images, ds.labels, pointness_scores(ds.images, cfg),
                            steps=args.steps, lr=args.lr)
    print("cross-entropy every 25 steps:", " ".join(f"{h:.3f}" for h in res.history[::25]))
    print(f"final {res.final:.4f} after {len(res.history)} steps")


if __name__ == "__main__":
    main()
