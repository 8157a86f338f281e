# nncore/distributions.py
"""
Diagonal-Gaussian, Bernoulli and categorical distributions.

A DistributionSpec only carries its kind and raw parameters; the operations
below build the matching torch.distributions object on demand.
"""
from dataclasses import dataclass
from typing import Tuple

import torch
from torch import distributions as td

from ..errors import UsageError

DIAG_GAUSSIAN = 'diag-gaussian'
BERNOULLI = 'bernoulli'
CATEGORICAL = 'categorical'

LOG_STD_RANGE = (-5.0, 2.0)


@dataclass(frozen=True)
class DistributionSpec:
    kind: str
    params: Tuple[torch.Tensor, ...]

    def detach(self):
        return DistributionSpec(self.kind, tuple(p.detach() for p in self.params))


def diag_gaussian(mean, log_std, log_std_range=LOG_STD_RANGE):
    """Gaussian with independent dimensions along the last axis; log-std clamped."""
    lo, hi = log_std_range
    return DistributionSpec(DIAG_GAUSSIAN, (mean, torch.clamp(log_std, lo, hi)))


def bernoulli(logit):
    return DistributionSpec(BERNOULLI, (logit,))


def categorical(logits):
    return DistributionSpec(CATEGORICAL, (logits,))


def to_torch(d):
    """Build the torch.distributions object for a spec."""
    if d.kind == DIAG_GAUSSIAN:
        mean, log_std = d.params
        return td.Independent(td.Normal(mean, torch.exp(log_std)), 1)
    if d.kind == BERNOULLI:
        return td.Bernoulli(logits=d.params[0])
    if d.kind == CATEGORICAL:
        return td.Categorical(logits=d.params[0])
    raise UsageError(f"Unknown distribution kind '{d.kind}'")


def probabilities(d):
    """Bernoulli probability or normalised categorical probabilities."""
    if d.kind == BERNOULLI:
        return torch.sigmoid(d.params[0])
    if d.kind == CATEGORICAL:
        return torch.softmax(d.params[0], dim=-1)
    raise UsageError(f"'{d.kind}' has no probability vector")


def dist_sample(d, generator=None):
    """
    Draw one sample per batch element.

    Gaussian samples use mean + std * noise so gradients reach the parameters.
    """
    if d.kind == DIAG_GAUSSIAN:
        mean, log_std = d.params
        noise = torch.randn(mean.shape, generator=generator, dtype=mean.dtype, device=mean.device)
        return mean + torch.exp(log_std) * noise
    if d.kind == BERNOULLI:
        return torch.bernoulli(probabilities(d).detach(), generator=generator)
    if d.kind == CATEGORICAL:
        probs = probabilities(d).detach()
        flat = probs.reshape(-1, probs.shape[-1])
        return torch.multinomial(flat, 1, generator=generator).reshape(probs.shape[:-1])
    raise UsageError(f"Unknown distribution kind '{d.kind}'")


def dist_mode(d):
    if d.kind == DIAG_GAUSSIAN:
        return d.params[0]
    if d.kind == BERNOULLI:
        return (d.params[0] > 0).to(d.params[0].dtype)
    if d.kind == CATEGORICAL:
        return torch.argmax(d.params[0], dim=-1)
    raise UsageError(f"Unknown distribution kind '{d.kind}'")


def dist_log_prob(d, x):
    return to_torch(d).log_prob(x)


def dist_entropy(d):
    return to_torch(d).entropy()


def dist_kl(d1, d2):
    """KL(d1 || d2), summed over the event dimensions."""
    if d1.kind != d2.kind:
        raise UsageError(f"KL between different kinds: '{d1.kind}' vs '{d2.kind}'")
    for p1, p2 in zip(d1.params, d2.params):
        if p1.shape[-1:] != p2.shape[-1:]:
            raise UsageError(f"KL between distributions of different size: {tuple(p1.shape)} vs {tuple(p2.shape)}")
    return td.kl_divergence(to_torch(d1), to_torch(d2))
