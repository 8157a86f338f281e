"""
latent_drive

Driving agent that learns a world model over masked-prediction image
embeddings and trains its policy inside imagined latent rollouts.
"""

from .config import RunConfig, EnvConfig, load_config
from .errors import (
    LatentDriveError, ConfigurationError, UsageError, EmptyReplayError,
    DiagnosticError, CheckpointError, NumericError,
)

__version__ = '0.1.0'

__all__ = [
    'RunConfig', 'EnvConfig', 'load_config',
    'LatentDriveError', 'ConfigurationError', 'UsageError', 'EmptyReplayError',
    'DiagnosticError', 'CheckpointError', 'NumericError',
]
