"""
Command-line entry point: ``rednet {synth,train,eval,predict,verify}``.

Exit codes: 0 success, 1 verification failure, 2 usage/config/data error,
3 numeric abort during training. ``REDNET_THREADS`` caps BLAS threads.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import netpbm
from .config import RunConfig, load_config
from .data import load_image, load_manifest
from .errors import RedNetError
from .experiment import evaluate
from .metrics import report
from .model import ReDNet, predict
from .synth import synth_generate
from .taxonomy import canonical_raw, colorize
from .tensor import Tensor
from .trainer import TrainingAborted, load_checkpoint, load_into, model_from_checkpoint, train, write_log
from .verify import SUITES, format_table, run_suites

logger = logging.getLogger("rednet")

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3


def cmd_synth(args) -> int:
    if args.count < 1:
        print("error: --count must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        path, _ = synth_generate(args.out, args.count, args.side, args.seed, args.split)
    except OSError as exc:
        print(f"error: cannot write dataset: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(path)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.train = replace(cfg.train, seed=args.seed)
    manifest = load_manifest(cfg.manifest_path("train"))
    model = ReDNet(cfg.network, seed=cfg.train.seed)
    ckpt_path = cfg.resolve(cfg.io.checkpoint)

    def progress(it, lr, loss):
        if it % 100 == 0:
            logger.info("iter %d lr %.3g loss %.4f", it, lr, loss)

    try:
        result = train(model, manifest, cfg.train, cfg.data.augmentation, ckpt_path, progress)
    except TrainingAborted as exc:
        where = exc.last_checkpoint or "none written yet"
        print(f"error: training aborted: {exc} (last good checkpoint: {where})", file=sys.stderr)
        return EXIT_NUMERIC
    write_log(cfg.resolve(cfg.io.log), result.log)
    print(ckpt_path)
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    if not Path(args.checkpoint).exists():
        print(f"error: checkpoint {args.checkpoint} not found", file=sys.stderr)
        return EXIT_USAGE
    model = load_into(ReDNet(cfg.network), load_checkpoint(args.checkpoint))
    manifest = load_manifest(cfg.manifest_path(args.split))
    rep = report(evaluate(model, manifest))
    text = json.dumps(rep, indent=1, sort_keys=False)
    out = Path(cfg.resolve(cfg.io.report))
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text + "\n")
    print(text)
    return EXIT_OK


def cmd_predict(args) -> int:
    model = model_from_checkpoint(load_checkpoint(args.checkpoint))
    image = load_image(args.image)
    labels = predict(model, Tensor(image[None]))[0]
    netpbm.write(args.out, canonical_raw(labels))
    if args.color:
        netpbm.write(args.color, colorize(labels))
    return EXIT_OK


def cmd_verify(args) -> int:
    names = list(SUITES) if args.suite == "all" else [args.suite]
    rows = run_suites(names)
    print(format_table(rows))
    failed = [r for r in rows if not r.passed]
    if failed:
        for r in failed:
            seed = "" if r.seed is None else f" (seed {r.seed})"
            print(f"FAILED: {r.suite}/{r.name}{seed}", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def config_defaults() -> str:
    """Every run-config key with its default; unknown keys are rejected."""
    lines = ["config defaults (relative paths resolve against the config file):"]
    for section, values in RunConfig().to_dict().items():
        for key, value in values.items():
            lines.append(f"  {section}.{key} = {json.dumps(value)}")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rednet", description=__doc__.strip().splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic PPM/PGM dataset and manifest.json")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--count", type=int, required=True, help="number of scenes (>= 1)")
    s.add_argument("--side", type=int, default=64, help="square scene extent in pixels (default 64)")
    s.add_argument("--seed", type=int, default=0, help="generator seed (default 0)")
    s.add_argument("--split", choices=("train", "val", "test"), default="train", help="manifest split (default train)")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train from a JSON run config; writes checkpoint and CSV log",
                       epilog=config_defaults(), formatter_class=argparse.RawDescriptionHelpFormatter)
    t.add_argument("--config", required=True, help="run config JSON (see configs/)")
    t.add_argument("--seed", type=int, default=None, help="override train.seed")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="per-class IoU / mIoU report for a checkpoint")
    e.add_argument("--config", required=True)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--split", choices=("train", "val", "test"), default="test")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("predict", help="predict a label mask for one PPM image")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--image", required=True, help="input PPM (P6)")
    r.add_argument("--out", required=True, help="output PGM of raw class indices")
    r.add_argument("--color", default=None, help="optional palette-coloured PPM")
    r.set_defaults(func=cmd_predict)

    v = sub.add_parser("verify", help="run oracle verification suites")
    v.add_argument("--suite", choices=sorted(SUITES) + ["all"], default="all")
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    threads = os.environ.get("REDNET_THREADS")
    try:
        if threads:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=int(threads)):
                return args.func(args)
        return args.func(args)
    except RedNetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC if isinstance(exc, ArithmeticError) else EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
