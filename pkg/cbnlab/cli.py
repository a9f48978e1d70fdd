#!/usr/bin/env python3
"""
CLI for cbnlab

Usage:
    # Numerical checks of every derivation (exit 0 iff all pass)
    cbnlab check
    cbnlab check --filter decomposition --json

    # Train and score a generator described by a config file
    cbnlab train --config configs/cbin-k4.ini --out runs/cbin-k4
    cbnlab eval --ckpt runs/cbin-k4/checkpoint --config runs/cbin-k4/config.ini
    cbnlab probe --ckpt runs/cbin-k4/checkpoint --k 4

    # Added parameters per latent length (CBG vs LCI)
    cbnlab params --dims 2,8,128,256

    # Multi-run studies
    cbnlab study ablation --config configs/cbin-k4.ini --out runs/ablation
    cbnlab study convergence --config configs/cbin-k4.ini --seeds 3

    # o-planes of a latent-code convolution under both paddings
    cbnlab dump-o --out runs/o-planes
"""

import argparse
import logging
import sys

from .cli_check import handle_check, handle_dump_o, handle_params
from .cli_run import handle_eval, handle_probe, handle_study, handle_train
from .config import get_config
from .constants import EXIT_USAGE


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='cbnlab', description='Central biasing normalization: checks, training and studies')
    parser.add_argument('--verbose', '-v', action='store_true', help='Log library progress to stderr')
    parser.add_argument('--threads', type=int, default=None, help='Cap intra-op threads (default: CBNLAB_THREADS or torch default)')
    subparsers = parser.add_subparsers(dest='command', help='Command')

    check_parser = subparsers.add_parser('check', help='Run the numerical checks')
    check_parser.add_argument('--filter', default=None, help='Regex selecting check names (e.g. "decomposition")')
    check_parser.add_argument('--json', action='store_true', help='Emit one JSON object per check')
    check_parser.add_argument('--seed', type=int, default=0, help='Root seed for random draws (default: 0)')
    check_parser.add_argument('--fault-eps', dest='fault_eps', type=float, default=None, help=argparse.SUPPRESS)

    train_parser = subparsers.add_parser('train', help='Train a generator from a config file')
    train_parser.add_argument('--config', required=True, help='Experiment config (.ini)')
    train_parser.add_argument('--out', default=None, help='Output directory (default: out_dir from the config)')
    train_parser.add_argument('--seed', type=int, default=None, help='Override the root seed')

    eval_parser = subparsers.add_parser('eval', help='Score a trained checkpoint')
    eval_parser.add_argument('--ckpt', required=True, help='Checkpoint directory')
    eval_parser.add_argument('--config', required=True, help='Experiment config (.ini)')
    eval_parser.add_argument('--out', default=None, help='Output directory (default: the checkpoint\'s parent)')
    eval_parser.add_argument('--seed', type=int, default=None, help='Override the root seed')

    params_parser = subparsers.add_parser('params', help='Added parameters per latent length')
    params_parser.add_argument('--dims', default='2,8,128,256', help='Comma-separated latent lengths (default: 2,8,128,256)')
    params_parser.add_argument('--width', type=int, default=64, help='Base width (default: 64)')
    params_parser.add_argument('--json', action='store_true', help='Emit JSON')

    probe_parser = subparsers.add_parser('probe', help='Cluster feature means of a checkpoint')
    probe_parser.add_argument('--ckpt', required=True, help='Checkpoint directory')
    probe_parser.add_argument('--k', type=int, default=0, help='Cluster count (default: task domain count)')
    probe_parser.add_argument('--layer', type=int, default=None, help='Unit index (default: last encoder unit)')
    probe_parser.add_argument('--samples', type=int, default=0, help='Test samples to probe (default: all)')
    probe_parser.add_argument('--seed', type=int, default=0, help='k-means seed (default: 0)')

    study_parser = subparsers.add_parser('study', help='Multi-run studies')
    study_parser.add_argument('study', choices=['ablation', 'convergence', 'incentive'], help='Study to run')
    study_parser.add_argument('--config', required=True, help='Experiment config (.ini)')
    study_parser.add_argument('--out', default=None, help='Output directory (default: out_dir from the config)')
    study_parser.add_argument('--seed', type=int, default=None, help='Override the root seed')
    study_parser.add_argument('--seeds', type=int, default=3, help='Seeds for the convergence study (default: 3)')

    dump_parser = subparsers.add_parser('dump-o', help='Dump o-planes under zero and reflection padding')
    dump_parser.add_argument('--out', required=True, help='Output directory for PPM planes')
    dump_parser.add_argument('--extent', type=int, default=16, help='Plane extent (default: 16)')
    dump_parser.add_argument('--seed', type=int, default=0, help='Random draw seed (default: 0)')

    return parser


HANDLERS = {
    'check': handle_check,
    'train': handle_train,
    'eval': handle_eval,
    'params': handle_params,
    'probe': handle_probe,
    'study': handle_study,
    'dump-o': handle_dump_o,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else 0

    if not args.command:
        parser.print_help()
        return EXIT_USAGE

    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format='%(levelname)s %(name)s: %(message)s',
    )
    config = get_config()
    if args.threads:
        config.set_threads(args.threads)
    else:
        config.apply()

    return HANDLERS[args.command](args)


if __name__ == '__main__':
    sys.exit(main())
