"""
Command-line interface

    extract | edit | steer | search | sweep | bench | report | verify

Exit codes: 0 success, 1 usage error, 2 data / validation error.
"""

import argparse
import json
import logging
import sys
from typing import List, Optional, Sequence

from vecedit import configure_logging
from vecedit.config import Config
from vecedit.exceptions import VecEditError
from vecedit.services.editor_service import EditHyperparams, Variant, decode_rho
from vecedit.services.weights_service import dumps_canonical
from vecedit.tasks import (
    BLOCK_SETS, PipelineConfig, run_budget_sweep_pipeline, run_edit_pipeline, run_extract_pipeline,
    run_report_pipeline, run_search_pipeline, run_steer_pipeline, run_synthetic_bench_pipeline,
    run_verify_pipeline
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


class UsageError(Exception):
    """Bad command line."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _rho(text: str) -> float:
    try:
        value = decode_rho(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid rho {text!r}")
    if not value > 0.0:
        raise argparse.ArgumentTypeError("rho must be > 0 (or inf)")
    return value


def _variant(text: str) -> str:
    try:
        return str(Variant.parse(text))
    except VecEditError as e:
        raise argparse.ArgumentTypeError(str(e))


def _common_flags(suppress: bool) -> argparse.ArgumentParser:
    """Global flags; the per-subcommand copy leaves unset flags out of the namespace."""
    default = argparse.SUPPRESS if suppress else None
    common = _Parser(add_help=False)
    common.add_argument('--config', default=default, help='JSON pipeline config')
    common.add_argument('--seed', type=int, default=default, help='RNG seed')
    common.add_argument('--out', default=default, help='output directory')
    common.add_argument('--threads', type=int, default=default, help='worker threads')
    common.add_argument('--log-level', default=argparse.SUPPRESS if suppress else Config.LOG_LEVEL,
                        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'], help='log level')
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_flags(suppress=True)

    # flags may come before the subcommand; a value after it wins
    parser = _Parser(prog='vecedit', description='Steering vectors to rank-1 weight edits',
                     parents=[_common_flags(suppress=False)])
    sub = parser.add_subparsers(dest='command', parser_class=_Parser)
    sub.required = True

    sub.add_parser('extract', parents=[common], help='extract steering vectors')

    edit = sub.add_parser('edit', parents=[common], help='build and apply an edit plan')
    edit.add_argument('--rho-attn', type=_rho)
    edit.add_argument('--rho-mlp', type=_rho)
    edit.add_argument('--alpha', type=float)
    edit.add_argument('--variant', type=_variant,
                      help='steer2edit, k_mean, k_svd, g_dot, l0, l0:<K> or l2')

    steer = sub.add_parser('steer', parents=[common], help='activation-steering generations')
    steer.add_argument('--gamma', type=float)
    steer.add_argument('--blocks', choices=sorted(BLOCK_SETS))

    sub.add_parser('search', parents=[common], help='two-stage hyperparameter search')

    sweep = sub.add_parser('sweep', parents=[common], help='single-class budget sweep')
    sweep.add_argument('--varied', choices=['attn', 'mlp'], default='attn')

    sub.add_parser('bench', parents=[common], help='planted-behavior benchmark')

    report = sub.add_parser('report', parents=[common], help='score trade-off CSVs in --out')
    report.add_argument('--orientation', choices=['promote', 'suppress'])

    verify = sub.add_parser('verify', parents=[common], help='run the oracle suite')
    verify.add_argument('--quick', action='store_true', help='reduced trial counts')
    return parser


def _progress(progress: float, step: str):
    logger.info("[%5.1f%%] %s", progress, step)


def _dispatch(args: argparse.Namespace) -> int:
    cfg = PipelineConfig.from_file(args.config, seed=args.seed, out=args.out, threads=args.threads)

    if args.command == 'extract':
        result = run_extract_pipeline(cfg=cfg)
    elif args.command == 'edit':
        hyper = EditHyperparams(
            cfg.rho_attn if args.rho_attn is None else args.rho_attn,
            cfg.rho_mlp if args.rho_mlp is None else args.rho_mlp,
            cfg.alpha if args.alpha is None else args.alpha,
        )
        result = run_edit_pipeline(cfg=cfg, hyper=hyper, variant=args.variant)
    elif args.command == 'steer':
        result = run_steer_pipeline(cfg=cfg, gamma=args.gamma, blocks=args.blocks)
    elif args.command == 'search':
        result = run_search_pipeline(cfg=cfg, progress_callback=_progress)
        result = {'status': result['status'], 'ranking': result['ranking'][:1]}
    elif args.command == 'sweep':
        points = run_budget_sweep_pipeline(cfg=cfg, varied=args.varied, progress_callback=_progress)
        result = {'points': [p.to_dict() for p in points]}
    elif args.command == 'bench':
        result = run_synthetic_bench_pipeline(cfg=cfg, progress_callback=_progress)
        result = {k: result[k] for k in ('alignment_cosine', 'planted_g_rank', 'base', 'edited')}
    elif args.command == 'report':
        result = run_report_pipeline(out_dir=cfg.out, orientation=args.orientation or cfg.orientation)
        result = {'best': result['best']}
    else:
        reports = run_verify_pipeline(cfg=cfg, quick=args.quick)
        for report in reports:
            print(dumps_canonical(report))
        return EXIT_OK if all(r['pass'] for r in reports) else EXIT_DATA

    print(json.dumps(result, sort_keys=True, indent=2, default=str))
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Parse arguments, run one subcommand and map failures to exit codes.

    Args:
        argv: Arguments without the program name (defaults to sys.argv[1:])

    Returns:
        Process exit code
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE

    configure_logging(args.log_level)
    try:
        return _dispatch(args)
    except (VecEditError, ValueError, OSError) as e:
        logger.error("%s failed: %s", args.command, e)
        return EXIT_DATA
