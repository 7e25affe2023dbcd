#!/usr/bin/env python3
"""Train the toy model on a small synthetic set and report train-set IoU@k.

Usage: python scripts/overfit_demo.py [--steps 2000] [--shapes 20] [--out runs/overfit]
"""

import argparse
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from promptseg.clicks import interact
from promptseg.train import TrainConfig, run_training


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--shapes", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runs/overfit")
    args = ap.parse_args()

    cfg = TrainConfig(
        seed=args.seed,
        n_shapes=args.shapes,
        steps=args.steps,
        augment=False,
        probe_every=200,
        stop_iou1=0.95,
        stop_iou5=0.98,
    )
    t0 = time.time()
    model, info = run_training(cfg, args.out, quiet=False, log_every=200)
    print(f"training: {info['steps_run']} steps in {time.time() - t0:.0f}s")

    ks = (1, 3, 5, 7, 10)
    per_k = {k: [] for k in ks}
    for sample in info["dataset"]:
        session = model.start_session(sample.cloud, assume_normalized=True)
        for mask in sample.masks:
            ious = interact(model, sample.cloud, mask, max(ks), session=session)
            for k in ks:
                per_k[k].append(ious[k - 1])
    print("train-set IoU@k:")
    for k in ks:
        print(f"  IoU@{k:>2} = {np.mean(per_k[k]):.4f}")


if __name__ == "__main__":
    main()
