#!/usr/bin/env python3
"""Test mIoU of the desk run across base learning rates (same data, seed and budget)."""

import argparse
from pathlib import Path

from rednet.config import load_config
from rednet.experiment import run_desk_experiment

ROOT = Path(__file__).resolve().parents[1]


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--config", default=str(ROOT / "configs" / "desk.json"))
    p.add_argument("--work", default=str(ROOT / "runs" / "lr_sweep"))
    p.add_argument("--lrs", type=float, nargs="+", default=[1e-4, 1e-3, 1e-2, 2e-2, 4e-2])
    p.add_argument("--max-iter", type=int, default=None)
    args = p.parse_args()

    cfg = load_config(args.config)
    if args.max_iter is not None:
        cfg.train.max_iter = args.max_iter
    print("base_lr   test_miou  final_loss")
    for lr in args.lrs:
        cfg.train.base_lr = lr
        res = run_desk_experiment(cfg, Path(args.work) / f"lr_{lr:g}", ablation=False)
        print(f"{lr:<9g} {res['trained']['miou']:.4f}     {res['final_loss']:.4f}")


if __name__ == "__main__":
    main()
