"""
I-divergence NMF - Command Line Entry Point
Factorize CSV matrices, verify factor pairs and run the lifted consistency checks.
"""

import argparse
import json
import logging
import math
import sys
import time
from typing import Any, Callable, Dict, List, Optional

from pydantic import ValidationError

from config import Settings, configure_logging, get_settings
from divergence import i_divergence, objective_F, wh_product
from errors import NMFError, SingularityError
from examples import FactorizationExamples
from factorizer import AlternatingFactorizer, normalize_row_stochastic, stationarity_residual
from lifted import double_minimization_check, lemma1_witness
from matrix_io import build_manifest, read_factor_matrix, read_matrix, write_result
from models import SolverConfig

logger = logging.getLogger(__name__)

EXIT_SUCCESS = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4


def _json_value(value: Any) -> Any:
    """Non-finite floats as the strings "inf", "-inf" and "nan", matching the `divergence` output."""
    if isinstance(value, float) and not math.isfinite(value):
        return repr(value)
    return value


def _print_json(payload: Dict[str, Any]) -> None:
    print(json.dumps({key: _json_value(value) for key, value in payload.items()}, allow_nan=False))


class FactorizationApp:
    """
    Orchestrates one CLI invocation: reads inputs, runs the requested
    computation and emits results on stdout.
    """

    def __init__(self, settings: Optional[Settings] = None):
        """Initialize the application."""
        self.settings = settings or get_settings()
        self.logger = logging.getLogger(f"{__name__}.FactorizationApp")

    def run_factorize(self, args: argparse.Namespace) -> int:
        """Run the solver and write W.csv, H.csv, trace.jsonl and manifest.json."""
        config = SolverConfig.from_settings(
            args.rank,
            self.settings,
            max_iters=args.max_iters,
            rel_tol=args.tol,
            seed=args.seed,
            restarts=args.restarts,
            min_init=args.min_init,
            oracle=args.oracle or None
        )
        V = read_matrix(args.input)

        self.logger.info(f"🚀 Factorizing {args.input} at rank {config.rank}")
        tic = time.perf_counter()
        result = AlternatingFactorizer(config, self.settings).run(V)
        wall_time = time.perf_counter() - tic

        manifest = build_manifest(
            result,
            config,
            args.input,
            V.shape,
            wall_time,
            self.settings.app_version
        )
        paths = write_result(result, args.out, manifest)
        self.logger.info(f"✅ Done in {wall_time:.2f}s: {result.stop_reason.value} after {result.iterations_run} iterations")

        _print_json({
            "final_divergence": result.final_divergence,
            "iterations": result.iterations_run,
            "stop_reason": result.stop_reason.value,
            "restart_index": result.restart_index,
            "out_dir": str(paths.manifest.parent)
        })
        return EXIT_SUCCESS

    def run_verify(self, args: argparse.Namespace) -> int:
        """Report divergence, stationarity residual and exactness gap of a given pair."""
        V = read_matrix(args.input)
        factors = normalize_row_stochastic(read_factor_matrix(args.w), read_factor_matrix(args.h))

        try:
            residual = stationarity_residual(V, factors)
        except SingularityError as e:
            self.logger.warning(f"⚠️  {e}; stationarity residual is undefined")
            residual = math.inf
        witness = lemma1_witness(V, factors)

        _print_json({
            "divergence": i_divergence(V, wh_product(factors)),
            "objective": objective_F(V, factors),
            "stationarity_residual": residual,
            "exactness_gap": witness.gap,
            "certified": witness.certified
        })
        return EXIT_SUCCESS

    def run_divergence(self, args: argparse.Namespace) -> int:
        """Print D(A || B)."""
        value = i_divergence(read_factor_matrix(args.a), read_factor_matrix(args.b))
        print(repr(value))
        return EXIT_SUCCESS

    def run_lifted_check(self, args: argparse.Namespace) -> int:
        """Print the double-minimization report as JSON."""
        V = read_matrix(args.input)
        report = double_minimization_check(V, args.rank, args.trials, args.seed)
        print(report.model_dump_json(indent=2))
        return EXIT_SUCCESS if report.consistent else EXIT_NUMERICAL

    def run_demo(self, args: argparse.Namespace) -> int:
        """Run the worked demonstrations."""
        passed = FactorizationExamples(self.settings).run_all_examples()
        return EXIT_SUCCESS if passed else EXIT_NUMERICAL


def build_parser() -> argparse.ArgumentParser:
    """Argument parser with one subcommand per operation."""
    parser = argparse.ArgumentParser(
        prog="idiv-nmf",
        description="Approximate nonnegative matrix factorization in I-divergence"
    )
    parser.add_argument("--log-level", default=None, help="Logging level (default from NMF_LOG_LEVEL)")
    commands = parser.add_subparsers(dest="command", required=True)

    factorize = commands.add_parser("factorize", help="Factorize V into W H")
    factorize.add_argument("--input", required=True, help="CSV file holding V")
    factorize.add_argument("--rank", required=True, type=int, help="Number of latent components k")
    factorize.add_argument("--max-iters", type=int, default=None)
    factorize.add_argument("--tol", type=float, default=None, help="Relative divergence-change threshold")
    factorize.add_argument("--seed", type=int, default=None)
    factorize.add_argument("--restarts", type=int, default=None)
    factorize.add_argument("--min-init", type=float, default=None)
    factorize.add_argument("--oracle", action="store_true", help="Record lifted identity checks each iteration")
    factorize.add_argument("--out", required=True, help="Output directory")
    factorize.set_defaults(handler=FactorizationApp.run_factorize)

    verify = commands.add_parser("verify", help="Check a factor pair against V")
    verify.add_argument("--input", required=True)
    verify.add_argument("--w", required=True)
    verify.add_argument("--h", required=True)
    verify.set_defaults(handler=FactorizationApp.run_verify)

    divergence = commands.add_parser("divergence", help="Print D(A || B)")
    divergence.add_argument("--a", required=True)
    divergence.add_argument("--b", required=True)
    divergence.set_defaults(handler=FactorizationApp.run_divergence)

    lifted_check = commands.add_parser("lifted-check", help="Lifted double-minimization consistency check")
    lifted_check.add_argument("--input", required=True)
    lifted_check.add_argument("--rank", required=True, type=int)
    lifted_check.add_argument("--trials", type=int, default=5)
    lifted_check.add_argument("--seed", type=int, default=0)
    lifted_check.set_defaults(handler=FactorizationApp.run_lifted_check)

    demo = commands.add_parser("demo", help="Run worked demonstrations")
    demo.set_defaults(handler=FactorizationApp.run_demo)
    return parser


def cli_main(argv: Optional[List[str]] = None) -> int:
    """Parse `argv`, dispatch, and map failures to exit codes 2/3/4."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exit_request:
        return int(exit_request.code or 0)

    configure_logging(args.log_level)
    app = FactorizationApp()
    handler: Callable[[FactorizationApp, argparse.Namespace], int] = args.handler
    try:
        return handler(app, args)
    except ValidationError as e:
        logger.error(f"❌ Invalid arguments: {e}")
        return EXIT_USAGE
    except NMFError as e:
        logger.error(f"❌ {type(e).__name__}: {e}")
        return e.exit_code
    except OSError as e:
        logger.error(f"❌ I/O failure: {e}")
        return EXIT_DATA


if __name__ == "__main__":
    try:
        sys.exit(cli_main())
    except KeyboardInterrupt:
        logger.info("👋 Interrupted")
        sys.exit(130)
