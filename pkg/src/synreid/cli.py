"""Command-line entry point: ``synreid {train,eval,toygen,report}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path


def _train(args):
    from .config import ExperimentConfig
    from .train import run_train

    config = ExperimentConfig.from_file(args.config)
    ckpt, report = run_train(config, resume=args.resume, out_dir=args.out)
    final = report.history[-1]["total"] if report.history else float("nan")
    print(f"checkpoint={ckpt} steps={len(report.history)} final_total={final:.6f}")


def _eval(args):
    from .config import ExperimentConfig
    from .train import run_eval

    config = ExperimentConfig.from_file(args.config)
    report = run_eval(config, args.checkpoint, allow_mismatch=args.allow_mismatch, out_dir=args.out)
    sys.stdout.write(report.to_text())


def _toygen(args):
    from .toy import ToyWorldSpec, generate_toy_dataset

    spec = ToyWorldSpec.from_file(args.spec) if args.spec else ToyWorldSpec()
    out = generate_toy_dataset(spec, args.seed, args.out, force=args.force)
    print(f"corpus={out}")


def _report(args):
    from .report import emit_report

    for path in emit_report(args.run, args.out):
        print(path)


def build_parser():
    parser = argparse.ArgumentParser(prog="synreid", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run two-phase training")
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--resume", type=Path, help="checkpoint to continue from")
    p.add_argument("--out", type=Path, help="override output_dir")
    p.set_defaults(func=_train)

    p = sub.add_parser("eval", help="score a checkpoint on the test split")
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--checkpoint", required=True, type=Path)
    p.add_argument("--allow-mismatch", action="store_true", help="skip the backbone config hash check")
    p.add_argument("--out", type=Path)
    p.set_defaults(func=_eval)

    p = sub.add_parser("toygen", help="render the two-domain toy corpus")
    p.add_argument("--spec", type=Path, help="YAML world spec; defaults apply when omitted")
    p.add_argument("--seed", required=True, type=int)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")
    p.set_defaults(func=_toygen)

    p = sub.add_parser("report", help="emit table and plots for a run directory")
    p.add_argument("--run", required=True, type=Path)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=_report)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except Exception as exc:  # one parsable line instead of a traceback
        if args.verbose:
            raise
        msg = str(exc).replace("\n", " ")
        print(f"{type(exc).__name__}: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
