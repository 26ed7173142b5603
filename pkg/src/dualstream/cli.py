"""Command line driver.

Subcommands: generate-data, train, eval, grad-check, ablate.  Every
command takes --config (flat 'section.key = value' file) and repeated
--set overrides.  Exit codes: 0 success, 1 configuration or data
problems, 2 numerical failures (non-finite losses, failed gradient
audit, broken determinism).
"""

import argparse
import sys

from .ablate import format_summaries, run_ablation
from .config import load_config
from .errors import (
    CheckpointError,
    ConfigError,
    DataFormatError,
    DomainError,
    GradCheckError,
    NoSupervisionError,
    NonDeterministicError,
    NonFiniteError,
    ShapeError,
)
from .evaluate import evaluate_checkpoint
from .gradcheck import run_gradient_audit
from .metrics import write_report_csv
from .synthdata import describe, generate_dataset, load_dataset, save_dataset
from .train import train

VALIDATION_ERRORS = (ConfigError, DataFormatError, CheckpointError, ShapeError,
                     NoSupervisionError, FileNotFoundError, IsADirectoryError,
                     PermissionError)
NUMERICAL_ERRORS = (NonFiniteError, DomainError, GradCheckError,
                    NonDeterministicError)


def _add_config_args(p):
    p.add_argument("--config", default=None, help="flat config file")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="SECTION.KEY=VALUE", help="override one config key")


def build_parser():
    parser = argparse.ArgumentParser(prog="dualstream")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-data", help="write a synthetic dataset")
    _add_config_args(p)
    p.add_argument("--out", required=True, help="dataset file to write")
    p.add_argument("--manifest", default=None,
                   help="also write a text summary here")

    p = sub.add_parser("train", help="train a model on a dataset")
    _add_config_args(p)
    p.add_argument("--data", required=True, help="dataset file")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("eval", help="score a checkpoint on a split")
    _add_config_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="unseen",
                   choices=("train", "test", "unseen"))
    p.add_argument("--csv", default=None, help="write per-cell scores here")

    p = sub.add_parser("grad-check",
                       help="finite-difference audit of the training gradient")
    _add_config_args(p)
    p.add_argument("--batch-size", type=int, default=6)
    p.add_argument("--epoch", type=int, default=7)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--max-entries", type=int, default=None,
                   help="subsample large blocks to this many entries")

    p = sub.add_parser("ablate", help="run a config sweep")
    _add_config_args(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", default="losses",
                   choices=("losses", "tau", "lambda"))
    p.add_argument("--seeds", type=int, default=5,
                   help="number of seeds per variant (0..n-1)")
    p.add_argument("--jobs", type=int, default=1)

    return parser


def cmd_generate_data(args):
    run = load_config(args.config, args.overrides)
    ds = generate_dataset(run.data)
    save_dataset(args.out, ds)
    text = describe(ds)
    print(text)
    if args.manifest:
        with open(args.manifest, "w") as fh:
            fh.write(text + "\n")
    print(f"wrote {args.out}")
    return 0


def cmd_train(args):
    run = load_config(args.config, args.overrides)
    ds = load_dataset(args.data)
    result = train(run, ds, args.out)
    parts = ", ".join(f"{k} {v:.5f}" for k, v in result.final_parts.items())
    print(f"trained {result.epochs_run} epochs; final losses: {parts}")
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"log: {result.log_path}")
    return 0


def cmd_eval(args):
    ds = load_dataset(args.data)
    report, text = evaluate_checkpoint(args.checkpoint, ds, args.split)
    print(text)
    if args.csv:
        write_report_csv(args.csv, report)
        print(f"wrote {args.csv}")
    return 0


def cmd_grad_check(args):
    run = load_config(args.config, args.overrides)
    report = run_gradient_audit(run.model, run.loss,
                                batch_size=args.batch_size, epoch=args.epoch,
                                eps=args.eps, tol=args.tol,
                                max_entries=args.max_entries,
                                seed=run.train.seed)
    print(report.format())
    report.assert_pass()
    return 0


def cmd_ablate(args):
    run = load_config(args.config, args.overrides)
    ds = load_dataset(args.data)
    seeds = list(range(args.seeds))
    if not seeds:
        raise ConfigError("--seeds must be at least 1")
    cells, summaries = run_ablation(run, ds, args.mode, seeds, args.out,
                                    jobs=args.jobs)
    print(format_summaries(summaries))
    failed = sum(1 for c in cells if c.error)
    print(f"{len(cells) - failed}/{len(cells)} cells completed")
    return 0


COMMANDS = {
    "generate-data": cmd_generate_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "grad-check": cmd_grad_check,
    "ablate": cmd_ablate,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
