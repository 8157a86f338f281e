# harness/__init__.py
"""Training loop, evaluation, checkpoints, logs and loss-curve export."""

from .checkpoint import Checkpoint, load_checkpoint, read_checkpoint, save_checkpoint
from .evaluation import evaluate, restore, rollout
from .logs import LossLog, read_log
from .plotting import emit_plots
from .training import Components, PolicyRunner, Trainer, run_episode

__all__ = [
    'Checkpoint', 'load_checkpoint', 'read_checkpoint', 'save_checkpoint',
    'evaluate', 'restore', 'rollout',
    'LossLog', 'read_log',
    'emit_plots',
    'Components', 'PolicyRunner', 'Trainer', 'run_episode',
]
