"""Command-line entry points wiring the experiment pipeline.

Subcommands run one stage each, in order: generate, train-baseline,
build-buckets, train-mgt, evaluate, probe, report. Every command takes the
same flags; stages already completed for the run directory are no-ops.

Exit codes:
    0  success
    1  unexpected internal error
    2  configuration or usage error
    3  stage-order error (missing prerequisite)
    4  artifact integrity error
    5  configuration drift against the run manifest
    6  training divergence
    7  corpus/data error (parse failures, empty corpora)
    8  sampling error
"""

from __future__ import annotations

import argparse
import logging
import sys

from .config import load_config
from .errors import (ConfigurationError, ContractError, CorpusError, DivergenceError,
                     DriftError, IntegrityError, MultigranError, SamplingError,
                     StageOrderError)
from .pipeline import STAGE_FUNCTIONS, open_run

log = logging.getLogger(__name__)

_EXIT_CODES = (
    (DriftError, 5),            # before IntegrityError: Drift is a subclass
    (ConfigurationError, 2),
    (ContractError, 2),
    (StageOrderError, 3),
    (IntegrityError, 4),
    (DivergenceError, 6),
    (CorpusError, 7),
    (SamplingError, 8),
)

_COMMANDS = {
    "generate": "generate",
    "train-baseline": "train_baseline",
    "build-buckets": "build_buckets",
    "train-mgt": "train_mgt",
    "evaluate": "evaluate",
    "probe": "probe",
    "report": "report",
}


def _add_common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--run-dir", required=True, help="run directory (created on first use)")
    parser.add_argument("--config", default=None, help="key = value configuration file")
    parser.add_argument("--seed", type=int, default=None, help="master seed override")
    parser.add_argument("--granularities", type=int, default=None, metavar="L",
                        help="number of granularity levels")
    parser.add_argument("--candidates", type=int, default=None, metavar="K",
                        help="candidate-set size k")
    parser.add_argument("--ensemble-mode", choices=("mgt", "vanilla", "both"), default=None,
                        help="which ensemble(s) the evaluate stage scores")
    parser.add_argument("--resample-per-epoch", action="store_true", default=None,
                        help="draw fresh negatives every epoch instead of fixing them")
    parser.add_argument("--probe-task", choices=("bow", "abstract", "both"), default=None,
                        help="restrict probing to one task (default: both)")
    parser.add_argument("--finetune", dest="finetune", action="store_true", default=None,
                        help="include fine-tuned probe rows (default)")
    parser.add_argument("--no-finetune", dest="finetune", action="store_false",
                        help="skip fine-tuned probe rows")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="multigran",
        description="Train and analyse multi-granularity dual-encoder retrieval models.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="info-level logging")
    sub = parser.add_subparsers(dest="command", required=True)
    for command in _COMMANDS:
        cmd = sub.add_parser(command, help=f"run the {command} stage")
        _add_common_flags(cmd)
    return parser


def _overrides(args: argparse.Namespace) -> dict:
    return {
        "seed": args.seed,
        "granularities": args.granularities,
        "k": args.candidates,
        "ensemble_mode": args.ensemble_mode,
        "resample_per_epoch": args.resample_per_epoch,
        "finetune": args.finetune,
        "probe_task": args.probe_task,
    }


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args.config, _overrides(args))
        run = open_run(args.run_dir, config)
        STAGE_FUNCTIONS[_COMMANDS[args.command]](run)
    except MultigranError as err:
        for kind, code in _EXIT_CODES:
            if isinstance(err, kind):
                print(f"error: {err}", file=sys.stderr)
                return code
        print(f"error: {err}", file=sys.stderr)
        return 1
    except Exception as err:  # noqa: BLE001 - map anything unexpected to exit 1
        print(f"internal error: {err}", file=sys.stderr)
        return 1
    return 0


def entrypoint() -> None:
    sys.exit(main())
