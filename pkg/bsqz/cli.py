from __future__ import annotations

import os

# BLAS pools stay single-threaded unless the caller says otherwise; --threads controls our own workers.
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import argparse
import logging
import sys
from typing import Callable, Dict, List, Optional

from pydantic import ValidationError

from bsqz.config import ExperimentConfig, apply_overrides, load_config
from bsqz.errors import ArtifactError, ConfigError, ModelValidationError, NumericalError, PomdpSyntaxError
from bsqz.pipeline import run_compress, run_diagnose, run_eval, run_report, run_solve, write_failure
from bsqz.settings import settings

logger = logging.getLogger("bsqz")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

COMMANDS: Dict[str, Callable[[ExperimentConfig, int], List[str]]] = {
    "compress": run_compress,
    "solve": run_solve,
    "eval": run_eval,
    "diagnose": run_diagnose,
    "report": run_report,
}

SEED_KEYS = ("sampler.seed", "compressor.seed", "solver.seed", "eval.seed", "diagnose.seed")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bsqz", description="Linear belief compression for POMDPs (batch driver)")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="flat key = value experiment config")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
        p.add_argument("--seed", type=int, default=None, help="sets every seed in the config")
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--out", default=None, help=f"output directory (default: config, then BSQZ_OUT={settings.OUT})")
    return ap


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    cfg = load_config(args.config)
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides += [f"{k}={args.seed}" for k in SEED_KEYS]
    if args.out is not None:
        overrides.append(f"out={args.out}")
    if args.threads is not None:
        overrides.append(f"threads={args.threads}")
    return apply_overrides(cfg, overrides) if overrides else cfg


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(level=settings.log_level(), format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)

    cfg: Optional[ExperimentConfig] = None
    try:
        cfg = resolve_config(args)
        threads = cfg.threads or settings.THREADS
        written = COMMANDS[args.command](cfg, threads)
    except (ConfigError, ValidationError, PomdpSyntaxError, ModelValidationError, ArtifactError, FileNotFoundError) as e:
        print(f"bsqz {args.command}: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as e:
        path = write_failure(cfg, args.command, e, out=args.out)
        print(f"bsqz {args.command}: numerical failure: {e}\n- Details: {path}", file=sys.stderr)
        return EXIT_NUMERICAL

    listing = "\n".join(f"- {p}" for p in written)
    print(f"Done.\n{listing}")
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
