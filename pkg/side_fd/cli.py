"""
side-fd command line: `study` runs the convergence study and writes
errors.csv, slopes.csv and roc.svg; `constants` prints the benchmark's
small-jump moments, jump intensity and CFL bounds.
"""

import argparse
import logging
import sys
from typing import List, Optional

from dotenv import load_dotenv

from . import config as side_config
from .benchmark import reported_constants
from .exceptions import CflViolationError, SideFdError, StudyIoError
from .harness import emit, run_study

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CFL = 2
EXIT_IO = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="side-fd",
        description="Finite difference schemes for stochastic integro-differential equations",
    )
    config_help = "TOML config file (default: ./config.ini if present)"
    parser.add_argument("--config", help=config_help)
    # also accepted after the subcommand; SUPPRESS keeps a value given before it
    config_parent = argparse.ArgumentParser(add_help=False)
    config_parent.add_argument("--config", default=argparse.SUPPRESS, help=config_help)
    sub = parser.add_subparsers(dest="command", required=True)

    study = sub.add_parser("study", parents=[config_parent], help="Run the Monte Carlo convergence study")
    study.add_argument("--h-list", help="Comma separated spacings, e.g. 2^-2,2^-3,0.0625")
    study.add_argument("--tau-rule", help="'h2' or 'list:tau1,tau2,...'")
    study.add_argument("--mc", type=int, help="Number of replications M")
    study.add_argument("--seed", type=int, help="Base seed")
    study.add_argument("--scheme", help="Comma separated subset of explicit,imex")
    study.add_argument("--threads", type=int, help="Worker threads (fallback: SIDE_FD_THREADS)")
    study.add_argument("--out", help="Output directory")
    study.add_argument("--inner-region", help="Error region: 'full' or a radius")
    study.add_argument(
        "--compensated",
        action="store_true",
        help="Drive large jumps with compensated increments instead of raw counts",
    )

    sub.add_parser(
        "constants",
        parents=[config_parent],
        help="Print computed constants next to the printed benchmark values",
    )
    return parser


def _study_overrides(args: argparse.Namespace) -> dict:
    return {
        "h_list": args.h_list,
        "tau_rule": args.tau_rule,
        "replications": args.mc,
        "seed": args.seed,
        "schemes": args.scheme,
        "threads": args.threads,
        "output_dir": args.out,
        "error_region": args.inner_region,
        "compensator_cancellation": False if args.compensated else None,
    }


def _print_constants(constants: dict):
    print("📐 Benchmark constants (computed | printed)")
    print("=" * 50)
    print(f"   varsigma1(delta):       {constants['varsigma1']:.10g} | {constants['printed_varsigma1']}")
    print(f"   closed form:            {constants['varsigma1_closed_form']:.10g}")
    print(f"   varsigma(delta):        {constants['varsigma']:.10g}")
    print(f"   jump intensity lambda:  {constants['intensity']:.10g} | {constants['printed_intensity']}")
    print(f"   kappa:                  {constants['kappa']:.10g} | {constants['printed_kappa']}")
    print(f"   CFL rhs (kappa above):  {constants['cfl_rhs']:.10g}")
    print(
        f"   CFL rhs (kappa={constants['printed_kappa']}):  "
        f"{constants['cfl_rhs_printed_kappa']:.10g} | {constants['printed_cfl_rhs']}"
    )


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)

    try:
        data = side_config.read_config(args.config)
        level, fmt = side_config.logging_settings(data)
        logging.basicConfig(level=getattr(logging, level, logging.INFO), format=fmt)

        if args.command == "constants":
            cfg = side_config.build_study_config(data)
            _print_constants(reported_constants(cfg.params))
            return EXIT_OK

        cfg = side_config.build_study_config(data, _study_overrides(args))
        print(f"🚀 Convergence study: M={cfg.replications}, h={list(cfg.h_list)}, threads={cfg.threads}")
        report = run_study(cfg)
        written = emit(report, cfg.output_dir)
        for s in report.slopes:
            print(f"📊 {s.scheme} {s.norm}: slope {s.slope:.4f} [{s.ci_low:.4f}, {s.ci_high:.4f}]")
        for path in written:
            print(f"✅ Wrote {path}")
        return EXIT_OK
    except CflViolationError as e:
        logger.error(f"CFL violation: {e}")
        print(f"❌ CFL violation: {e}", file=sys.stderr)
        return EXIT_CFL
    except StudyIoError as e:
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_IO
    except SideFdError as e:
        logger.error(f"{type(e).__name__}: {e}")
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_ERROR
