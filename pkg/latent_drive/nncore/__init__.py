# nncore/__init__.py
"""
Differentiable numeric substrate.

Parameter storage, feed-forward and recurrent cells, distributions,
stop-gradient, EMA updates and the finite-difference gradient oracle.
"""

from .params import ParamStore, ParamEntry, TapeContext, ema_update, stop_gradient
from .layers import MLP, GatedRecurrentCell, mlp_forward, recurrent_step
from .distributions import (
    DistributionSpec, diag_gaussian, bernoulli, categorical, probabilities,
    dist_sample, dist_mode, dist_log_prob, dist_entropy, dist_kl,
)
from .gradcheck import GradCheckReport, grad_check
from .optim import Optimizer

__all__ = [
    'ParamStore', 'ParamEntry', 'TapeContext', 'ema_update', 'stop_gradient',
    'MLP', 'GatedRecurrentCell', 'mlp_forward', 'recurrent_step',
    'DistributionSpec', 'diag_gaussian', 'bernoulli', 'categorical', 'probabilities',
    'dist_sample', 'dist_mode', 'dist_log_prob', 'dist_entropy', 'dist_kl',
    'GradCheckReport', 'grad_check',
    'Optimizer',
]
