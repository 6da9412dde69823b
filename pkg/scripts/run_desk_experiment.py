#!/usr/bin/env python3
"""Synthesize the desk dataset, train full and alpha-frozen models, report test mIoU."""

import argparse
import json
import logging
from pathlib import Path

from rednet.config import load_config
from rednet.experiment import run_desk_experiment

ROOT = Path(__file__).resolve().parents[1]


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--config", default=str(ROOT / "configs" / "desk.json"))
    p.add_argument("--work", default=str(ROOT / "runs" / "desk_experiment"), help="output directory")
    p.add_argument("--n-train", type=int, default=200)
    p.add_argument("--n-test", type=int, default=50)
    p.add_argument("--max-iter", type=int, default=None, help="override train.max_iter")
    p.add_argument("--lr", type=float, default=None, help="override train.base_lr")
    p.add_argument("--no-ablation", action="store_true")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg = load_config(args.config)
    if args.max_iter is not None:
        cfg.train.max_iter = args.max_iter
    if args.lr is not None:
        cfg.train.base_lr = args.lr
    res = run_desk_experiment(cfg, args.work, args.n_train, args.n_test, ablation=not args.no_ablation)

    print(f"untrained mIoU   {res['untrained']['miou']:.4f}")
    print(f"trained mIoU     {res['trained']['miou']:.4f}  ({res['train_seconds']:.0f}s, alphas {res['alphas']})")
    if "ablation" in res:
        print(f"alpha-frozen     {res['ablation']['miou']:.4f}")
    print(json.dumps(res["trained"]["per_class"], indent=1))


if __name__ == "__main__":
    main()
