"""Command-line entry point: one subcommand per stage plus ``pipeline``."""

from __future__ import annotations

import argparse
import logging
import sys

from .bookgen import EmptyBook, PoolExhausted
from .config import ConfigInvalid, load_config
from .eventgen import ExhaustedAttempts
from .gateway import GatewayError
from .pipeline import STAGES, MissingUpstream, format_summary, run_pipeline, run_stage, summarize
from .universe import CorpusInvalid, InsufficientCorpus

EXIT_OK, EXIT_INVALID, EXIT_UPSTREAM = 0, 1, 2


def build_parser():
    parser = argparse.ArgumentParser(prog="episodic-bench",
                                     description="Synthetic episodic-memory benchmark pipeline.")
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--seed", type=int, help="override the master seed")
    parser.add_argument("--mock", action="store_true", help="use the offline mock author, judges and answerer")
    parser.add_argument("--out", help="override output_dir")
    parser.add_argument("--n-events", type=int, dest="n_events", help="override n_events")
    parser.add_argument("--force", action="store_true", help="rerun stages even when up to date")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for stage in (*STAGES, "pipeline"):
        sub.add_parser(stage, help=f"run the {stage} stage" if stage != "pipeline" else "run every stage")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, {"seed": args.seed, "output_dir": args.out,
                                        "n_events": args.n_events}, mock=args.mock)
        if args.command == "pipeline":
            summary = run_pipeline(cfg, force=args.force)
        else:
            run_stage(args.command, cfg, force=args.force)
            summary = summarize(cfg)
    # EmptyBook is a ValueError, so upstream failures are caught first.
    except (MissingUpstream, GatewayError, EmptyBook, PoolExhausted, ExhaustedAttempts) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_UPSTREAM
    except (ConfigInvalid, CorpusInvalid, InsufficientCorpus, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    text = format_summary(summary)
    if text:
        print(text)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
