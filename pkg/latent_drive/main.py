"""
Latent-space driving agent - command line entry point.

Usage:
    python -m latent_drive train --config run.cfg --seed 0 --out runs/highway
    python -m latent_drive eval --checkpoint runs/highway/checkpoint.hwck --env highway --episodes 100
    python -m latent_drive eval --policy random --env merge --episodes 100 --out runs/random_merge
    python -m latent_drive rollout --checkpoint runs/highway/checkpoint.hwck --steps 200 --dump-frames frames/
    python -m latent_drive plot --logs runs/highway --out runs/highway/plots
"""

import argparse
import sys

from .config import TASKS, RunConfig, load_config
from .errors import LatentDriveError
from .harness.evaluation import evaluate, rollout
from .harness.plotting import emit_plots
from .harness.training import Trainer
from .utils import log_info


def build_parser():
    parser = argparse.ArgumentParser(prog='latent_drive',
                                     description='Train and evaluate a latent world-model driving agent.')
    sub = parser.add_subparsers(dest='command', required=True)

    train = sub.add_parser('train', help='Collect experience and train encoder, world model and policy')
    train.add_argument('--config', help='key = value config file')
    train.add_argument('--seed', type=int, help='Run seed (overrides the config)')
    train.add_argument('--out', help='Output directory (overrides the config)')

    ev = sub.add_parser('eval', help='Evaluate a policy over N episodes')
    ev.add_argument('--checkpoint', help='Checkpoint file (not needed for --policy random)')
    ev.add_argument('--env', choices=TASKS, help='Task; defaults to the checkpoint task')
    ev.add_argument('--episodes', type=int, default=100)
    ev.add_argument('--seed', type=int, default=0)
    ev.add_argument('--policy', choices=('agent', 'random'), default='agent')
    ev.add_argument('--policy-mode', choices=('mode', 'sample'), default='mode')
    ev.add_argument('--out', help='Directory for the report files')

    ro = sub.add_parser('rollout', help='Drive the trained policy and compare imagined embeddings')
    ro.add_argument('--checkpoint', required=True)
    ro.add_argument('--env', choices=TASKS)
    ro.add_argument('--steps', type=int, default=200)
    ro.add_argument('--seed', type=int, default=0)
    ro.add_argument('--dump-frames', help='Directory for PPM frames')

    plot = sub.add_parser('plot', help='Write loss-curve series from run logs')
    plot.add_argument('--logs', required=True, help='Run directory with the CSV logs')
    plot.add_argument('--out', required=True)
    plot.add_argument('--no-svg', action='store_true', help='CSV series only')
    return parser


def run(args):
    if args.command == 'train':
        config = load_config(args.config) if args.config else RunConfig().validate()
        overrides = {}
        if args.seed is not None:
            overrides['seed'] = args.seed
            overrides['env.seed'] = args.seed
        if args.out is not None:
            overrides['out'] = args.out
        if overrides:
            config = config.with_overrides(overrides)
        path = Trainer(config).train()
        log_info(f"Training finished: {path}")
    elif args.command == 'eval':
        evaluate(checkpoint_path=args.checkpoint, task=args.env, episodes=args.episodes, seed=args.seed,
                 policy=args.policy, policy_mode=args.policy_mode, out_dir=args.out)
    elif args.command == 'rollout':
        result = rollout(args.checkpoint, task=args.env, steps=args.steps, seed=args.seed,
                         dump_frames=args.dump_frames)
        log_info(f"Rollout: {result}")
    elif args.command == 'plot':
        emit_plots(args.logs, args.out, svg=not args.no_svg)


def main(argv=None):
    """Parse arguments, run the command and map package errors to exit code 1."""
    args = build_parser().parse_args(argv)
    try:
        run(args)
    except LatentDriveError as e:
        print(f"latent_drive: error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
