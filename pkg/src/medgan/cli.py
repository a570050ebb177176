"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 validation failure (bad input,
config, dataset or checkpoint), 3 numeric failure (non-finite training
state or a failed gradient/oracle check).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from .checkpoint import CheckpointError, load as load_checkpoint
from .config import ConfigError, TrainConfig
from .dataset import DatasetConfig, DatasetError, build_dataset, read_pgm, write_pgm
from .metrics import all_metrics
from .ops import ShapeError
from .optim import NonFiniteGradient
from .synth import MotionParams, corrupt
from .train import TrainingAborted, evaluate, train

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad arguments; 2 is reserved for validation failures here
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _regions(text: str) -> tuple:
    return tuple(r.strip() for r in text.split(",") if r.strip())


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="medgan", description="Retrospective MR motion correction with a cascaded conditional GAN.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    s = sub.add_parser("synth", help="build a paired phantom dataset")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--count", type=int, default=240, help="total pairs (default 240)")
    s.add_argument("--val-count", type=int, default=None, help="how many of them go to validation (default count/5)")
    s.add_argument("--size", type=int, default=64, choices=(64, 128, 256))
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--regions", type=_regions, default=("head", "abdomen", "pelvis"))
    s.add_argument("--full-scale", action="store_true",
                   help="256x256 with the volunteer-study split sizes (ignores --count/--size/--regions)")

    c = sub.add_parser("corrupt", help="apply simulated motion to one PGM image")
    c.add_argument("--input", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--kind", choices=("rigid", "nonrigid"), default="rigid")
    c.add_argument("--seed", type=int, default=0)

    t = sub.add_parser("train", help="train a generator/discriminator pair")
    t.add_argument("--config", help="JSON training config")
    t.add_argument("--data", help="dataset directory")
    t.add_argument("--out", help="checkpoint path")
    t.add_argument("--log", help="training log CSV path")
    t.add_argument("--mode", choices=("pixel", "pix2pix", "medgan"))
    t.add_argument("--regions", type=_regions)
    t.add_argument("--epochs", type=int)
    t.add_argument("--steps", type=int, help="maximum optimization steps")
    t.add_argument("--seed", type=int)
    t.add_argument("--size", type=int, help="image size (must match the dataset)")

    e = sub.add_parser("eval", help="compute the metric report for a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="val", choices=("train", "val"))
    e.add_argument("--out", help="aggregate CSV path (default: stdout)")
    e.add_argument("--rows", help="per-sample CSV path")
    e.add_argument("--regions", type=_regions, help="override the checkpoint's regions")
    e.add_argument("--bypass", action="store_true", help="use the identity in place of the generator")

    m = sub.add_parser("metrics", help="SSIM/UQI/VIF/FPD between two PGM images")
    m.add_argument("--ref", required=True)
    m.add_argument("--test", required=True)

    sub.add_parser("gradcheck", help="run the finite-difference and oracle suites")
    return p


def _cmd_synth(a) -> int:
    if a.full_scale:
        cfg = DatasetConfig.full_scale(seed=a.seed)
    else:
        val = a.val_count if a.val_count is not None else a.count // 5
        if a.count < 0 or not 0 <= val <= a.count:
            raise DatasetError(f"need 0 <= --val-count <= --count, got {val} and {a.count}")
        cfg = DatasetConfig(size=a.size, seed=a.seed, regions=a.regions, n_train=a.count - val, n_val=val)
    manifest = build_dataset(cfg, a.out)
    print(f"wrote {len(manifest['samples'])} pairs to {a.out}")
    return EXIT_OK


def _cmd_corrupt(a) -> int:
    img = read_pgm(a.input)
    write_pgm(a.out, corrupt(img, a.kind, MotionParams(seed=a.seed)))
    return EXIT_OK


def _cmd_train(a) -> int:
    cfg = TrainConfig.from_json(a.config) if a.config else TrainConfig()
    cfg = cfg.replace(data=a.data, checkpoint=a.out, log=a.log, mode=a.mode, regions=a.regions,
                      epochs=a.epochs, max_steps=a.steps, seed=a.seed, image_size=a.size)
    result = train(cfg)
    last = result.log_rows[-1] if result.log_rows else None
    summary = f"trained {result.steps} steps -> {cfg.checkpoint}"
    if last:
        summary += f" (total_G={last['total_G']:.4f}, L_D={last['L_D']:.4f})"
    print(summary)
    return EXIT_OK


def _cmd_eval(a) -> int:
    report = evaluate(load_checkpoint(a.checkpoint), a.data, a.split, bypass=a.bypass, regions=a.regions)
    if a.rows:
        Path(a.rows).write_text(report.rows_csv())
    if a.out:
        Path(a.out).write_text(report.to_csv())
        print(report.to_table(), end="")
    else:
        print(report.to_csv(), end="")
    return EXIT_OK


def _cmd_metrics(a) -> int:
    vals = all_metrics(read_pgm(a.ref), read_pgm(a.test))
    print(", ".join(f"{k}={vals[k]:.6f}" for k in ("ssim", "uqi", "vif", "fpd")))
    return EXIT_OK


def _cmd_gradcheck(a) -> int:
    from .verify import run_all

    return EXIT_OK if run_all() else EXIT_NUMERIC


COMMANDS = {
    "synth": _cmd_synth,
    "corrupt": _cmd_corrupt,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "metrics": _cmd_metrics,
    "gradcheck": _cmd_gradcheck,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (TrainingAborted, NonFiniteGradient, FloatingPointError) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, DatasetError, CheckpointError, ShapeError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
