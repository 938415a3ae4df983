"""Command-line entry point: one subcommand per pipeline stage plus run-all.

Exit codes: 0 success, 1 usage or configuration error, 2 missing or stale
dependency, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import pipeline
from .layers import NumericalError


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-w", "--work-dir", default="work", help="artifact directory (default: ./work)")
    common.add_argument("-c", "--config", help="key = value configuration file")
    common.add_argument("-s", "--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one setting; repeatable")
    common.add_argument("-q", "--quiet", action="store_true", help="only report errors")

    parser = _Parser(prog="styleumt", description="Unsupervised text style transfer pipeline.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {
        "synth-corpus": "write the synthetic two-style task into the work dir",
        "build-vocab": "build the shared vocabulary from the training corpora",
        "train-embeddings": "train skip-gram embeddings",
        "build-lexicon": "build both word transfer tables",
        "train-lm": "train one n-gram language model per style",
        "smt-translate": "translate the test sets with the word-level SMT systems",
        "make-pseudo": "build pseudo-parallel training data with the SMT systems",
        "pretrain-nmt": "train both NMT models on the pseudo-parallel data",
        "train-classifier": "train the reward and evaluation classifiers",
        "backtranslate": "iterative back-translation (resumes after the last finished epoch)",
        "evaluate": "score SMT, iteration-0 and final NMT systems on the test sets",
        "run-all": "run every stage whose artifacts are missing or stale",
    }
    for name, text in helps.items():
        sub.add_parser(name, parents=[common], help=text, description=text)
    show = sub.add_parser("show-config", parents=[common], help="print the resolved configuration")
    show.set_defaults(show=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s",
                        stream=sys.stderr)
    try:
        cfg = pipeline.load_config(args.config, args.set)
        if args.command == "show-config":
            sys.stdout.write(cfg.to_text())
            return 0
        ws = pipeline.Workspace(args.work_dir)
        with ws.lock():
            if args.command == "run-all":
                pipeline.run_all(ws, cfg)
            else:
                pipeline.run_stage(ws, args.command, cfg)
    except pipeline.PipelineError as exc:
        print(f"styleumt: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except NumericalError as exc:
        print(f"styleumt: numerical failure: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
