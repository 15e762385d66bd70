"""Command-line entry point: ``p3slab train | verify-theory | summarize``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .harness import export_summary, load_config, run
from .numcore import ConfigError
from .theorylab import certify_corpus, write_corpus_csv


def _train(args) -> int:
    overrides = list(args.override)
    if args.seed is not None:
        overrides.append(f"run.seed={args.seed}")
    cfg = load_config(args.config, overrides)
    result = run(cfg, out=args.out, workers=args.workers, progress=args.progress)
    print(f"final_score {result.final_score!r}")
    print(f"artifacts in {Path(args.out).resolve()}")
    return 0


def _verify(args) -> int:
    summary = certify_corpus(args.instances, args.seed, args.tolerance)
    print(summary.table())
    csv_path = Path(args.csv)
    write_corpus_csv(summary, csv_path)
    print(f"per-instance results in {csv_path}")
    return 1 if summary.violations else 0


def _summarize(args) -> int:
    export_summary(args.dirs, args.out)
    print(Path(str(args.out) + ".txt").read_text(), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="p3slab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    tr = sub.add_parser("train", help="run one training job and write its artifacts")
    tr.add_argument("--config", type=Path, default=None, help="INI config file (defaults apply when omitted)")
    tr.add_argument("--seed", type=int, default=None, help="master seed, overrides run.seed")
    tr.add_argument("--out", type=Path, required=True, help="output directory")
    tr.add_argument("--override", action="append", default=[], metavar="SECTION.KEY=VALUE",
                    help="override any config field; repeatable")
    tr.add_argument("--workers", type=int, default=None, help="update threads, overrides run.workers")
    tr.add_argument("--progress", action="store_true", help="print a line per evaluation")
    tr.set_defaults(func=_train)

    vt = sub.add_parser("verify-theory", help="certify the improvement chain on random tabular MDPs")
    vt.add_argument("--instances", type=int, default=1000)
    vt.add_argument("--seed", type=int, default=0)
    vt.add_argument("--tolerance", type=float, default=1e-9)
    vt.add_argument("--csv", default="theory_instances.csv", help="per-instance CSV path")
    vt.set_defaults(func=_verify)

    sm = sub.add_parser("summarize", help="compare finished runs")
    sm.add_argument("dirs", nargs="+", type=Path, help="run directories")
    sm.add_argument("--out", type=Path, required=True, help="CSV path; a .txt table is written next to it")
    sm.set_defaults(func=_summarize)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
