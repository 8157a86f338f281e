# rssm.py
"""
Recurrent state-space world model over encoder embeddings.

    h_t = f(h_{t-1}, [z_{t-1}, a_{t-1}])       gated recurrence
    z_t ~ p(z_t | h_t)                          prior
    z_t ~ q(z_t | h_t, x_t)                     posterior
    x_t, r_t, c_t ~ heads(h_t, z_t)

The action at step t is the one that led to o_t, so observe_sequence pairs
actions[:, t] with embeddings[:, t].
"""
import math
from dataclasses import dataclass
from typing import NamedTuple

import torch
from torch import nn
from torch.nn import functional as F

from .errors import ConfigurationError, UsageError
from .nncore import (
    MLP, GatedRecurrentCell, ParamStore, bernoulli, diag_gaussian, dist_kl, dist_sample, probabilities,
    recurrent_step,
)
from .nncore.distributions import DistributionSpec, DIAG_GAUSSIAN
from .utils import check_finite

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


class LatentState(NamedTuple):
    h: torch.Tensor
    z: torch.Tensor


@dataclass
class SequencePosterior:
    """Per-step tensors stacked along the time axis, (B, T, ...)."""
    h: torch.Tensor
    z: torch.Tensor
    prior: DistributionSpec
    posterior: DistributionSpec
    embedding: torch.Tensor
    reward: torch.Tensor
    continue_logit: torch.Tensor

    @property
    def length(self):
        return self.h.shape[1]

    @property
    def continue_prob(self):
        return torch.sigmoid(self.continue_logit)

    def last_state(self):
        return LatentState(self.h[:, -1], self.z[:, -1])

    def flat_states(self):
        """Every posterior state as one (B*T) batch, the imagination start set."""
        return LatentState(self.h.reshape(-1, self.h.shape[-1]), self.z.reshape(-1, self.z.shape[-1]))


@dataclass
class WorldLosses:
    total: torch.Tensor
    pred: torch.Tensor
    dyn: torch.Tensor
    rep: torch.Tensor
    kl: torch.Tensor
    embed: torch.Tensor
    reward: torch.Tensor
    cont: torch.Tensor

    def as_dict(self):
        return {
            'model_loss': float(self.total.detach()),
            'pred_loss': float(self.pred.detach()),
            'embed_loss': float(self.embed.detach()),
            'reward_loss': float(self.reward.detach()),
            'cont_loss': float(self.cont.detach()),
            'dyn_loss': float(self.dyn.detach()),
            'rep_loss': float(self.rep.detach()),
            'kl': float(self.kl.detach()),
        }


def unit_gaussian_nll(mean, target):
    """-log N(target; mean, 1), summed over the last axis when it is a vector."""
    return 0.5 * (target - mean) ** 2 + HALF_LOG_2PI


def kl_balance_terms(posterior, prior, free_bits):
    """
    Free-bits clamped KL terms with opposite stop-gradient placement.

    dyn = max(free_bits, KL(sg(posterior) || prior)) trains the prior side,
    rep = max(free_bits, KL(posterior || sg(prior))) trains the posterior side.

    Returns:
        tuple: (dyn, rep, raw KL), each averaged over every batch axis
    """
    dyn_kl = dist_kl(posterior.detach(), prior)
    rep_kl = dist_kl(posterior, prior.detach())
    dyn = torch.clamp(dyn_kl, min=free_bits).mean()
    rep = torch.clamp(rep_kl, min=free_bits).mean()
    return dyn, rep, rep_kl.detach().mean()


class RSSM(ParamStore):
    """
    Deterministic memory h, diagonal-Gaussian stochastic state z, and heads
    for the next embedding, reward and continuation.
    """

    def __init__(self, config, embed_dim, action_dim, rng_seed=2):
        super().__init__(rng_seed)
        config.validate()
        self.config = config
        self.embed_dim = embed_dim
        self.action_dim = action_dim
        h, z, hidden = config.h_dim, config.z_dim, config.hidden
        self.cell = GatedRecurrentCell(z + action_dim, h)
        self.prior_net = MLP(h, 2 * z, hidden=(hidden,))
        self.posterior_net = MLP(h + embed_dim, 2 * z, hidden=(hidden,))
        self.embed_head = MLP(h + z, embed_dim, hidden=(hidden, hidden))
        self.reward_head = MLP(h + z, 1, hidden=(hidden,))
        self.continue_head = MLP(h + z, 1, hidden=(hidden,))
        self.initial_h = nn.Parameter(torch.zeros(h)) if config.initial == 'learned' else None
        self.reset_parameters()

    @property
    def dtype(self):
        return self.prior_net.layers[0].weight.dtype

    @property
    def feature_dim(self):
        return self.config.h_dim + self.config.z_dim

    # ------------------------------------------------------------------
    # Single-step pieces
    # ------------------------------------------------------------------
    def initial_state(self, batch):
        if batch < 1:
            raise UsageError("initial_state needs batch >= 1")
        z = torch.zeros(batch, self.config.z_dim, dtype=self.dtype)
        if self.initial_h is not None:
            h = torch.tanh(self.initial_h).unsqueeze(0).expand(batch, -1)
        else:
            h = torch.zeros(batch, self.config.h_dim, dtype=self.dtype)
        return LatentState(h, z)

    def dynamics_step(self, prev, action):
        if action.shape[-1] != self.action_dim:
            raise ConfigurationError(f"Action width {action.shape[-1]} != {self.action_dim}")
        return recurrent_step(self.cell, prev.h, torch.cat([prev.z, action.to(prev.z.dtype)], dim=-1))

    def _gaussian(self, stats):
        mean, log_std = stats.chunk(2, dim=-1)
        return diag_gaussian(mean, log_std, (self.config.log_std_min, self.config.log_std_max))

    def prior(self, h):
        return self._gaussian(self.prior_net(h))

    def posterior(self, h, x):
        if x.shape[-1] != self.embed_dim:
            raise ConfigurationError(f"Embedding width {x.shape[-1]} != {self.embed_dim}")
        return self._gaussian(self.posterior_net(torch.cat([h, x.to(h.dtype)], dim=-1)))

    def predict_embedding(self, h, z):
        return self.embed_head(torch.cat([h, z], dim=-1))

    def predict_reward(self, h, z):
        """Unit-variance Gaussian over the reward; only the mean is learned."""
        mean = self.reward_head(torch.cat([h, z], dim=-1))
        return diag_gaussian(mean, torch.zeros_like(mean))

    def predict_continue(self, h, z):
        return probabilities(bernoulli(self.continue_head(torch.cat([h, z], dim=-1)).squeeze(-1)))

    # ------------------------------------------------------------------
    # Filtering and imagination
    # ------------------------------------------------------------------
    def observe_step(self, prev, action, x, generator=None):
        """One filtering step: recurrence, posterior, reparameterised sample."""
        h = self.dynamics_step(prev, action)
        post = self.posterior(h, x)
        return LatentState(h, dist_sample(post, generator)), post

    def observe_sequence(self, embeddings, actions, start=None, generator=None):
        """
        Filter a batch of sequences.

        Args:
            embeddings (torch.Tensor): (B, T, X) encoder summaries x_1..x_T
            actions (torch.Tensor): (B, T, A) actions a_0..a_{T-1} that led to each frame
            start (LatentState): State before the first step; zeros when None
            generator (torch.Generator): Posterior sampling noise

        Returns:
            SequencePosterior
        """
        if embeddings.shape[:2] != actions.shape[:2]:
            raise UsageError(f"Embedding steps {tuple(embeddings.shape[:2])} != action steps {tuple(actions.shape[:2])}")
        batch, steps = embeddings.shape[:2]
        state = start if start is not None else self.initial_state(batch)
        hs, zs, prior_stats, post_stats = [], [], [], []
        for t in range(steps):
            prev = LatentState(state.h, state.z.detach() if self.config.detach_z else state.z)
            h = self.dynamics_step(prev, actions[:, t])
            prior = self.prior(h)
            post = self.posterior(h, embeddings[:, t])
            z = dist_sample(post, generator)
            hs.append(h)
            zs.append(z)
            prior_stats.append(prior.params)
            post_stats.append(post.params)
            state = LatentState(h, z)

        h = torch.stack(hs, dim=1)
        z = torch.stack(zs, dim=1)
        prior = DistributionSpec(DIAG_GAUSSIAN, tuple(torch.stack(p, dim=1) for p in zip(*prior_stats)))
        post = DistributionSpec(DIAG_GAUSSIAN, tuple(torch.stack(p, dim=1) for p in zip(*post_stats)))
        feat = torch.cat([h, z], dim=-1)
        return SequencePosterior(
            h=h, z=z, prior=prior, posterior=post,
            embedding=self.embed_head(feat),
            reward=self.reward_head(feat).squeeze(-1),
            continue_logit=self.continue_head(feat).squeeze(-1),
        )

    def imagine_step(self, state, action, generator=None):
        """
        Open-loop step: recurrence, then z from the prior.

        Returns:
            tuple: (LatentState, reward mean (B,), continue probability (B,))
        """
        h = self.dynamics_step(state, action)
        z = dist_sample(self.prior(h), generator)
        reward = self.predict_reward(h, z).params[0].squeeze(-1)
        return LatentState(h, z), reward, self.predict_continue(h, z)

    def open_loop_embeddings(self, start, actions, generator=None):
        """Predicted embeddings x-hat (B, T, X) of an imagined rollout under fixed actions."""
        state = start
        predictions = []
        for t in range(actions.shape[1]):
            state, _, _ = self.imagine_step(state, actions[:, t], generator)
            predictions.append(self.predict_embedding(state.h, state.z))
        return torch.stack(predictions, dim=1)

    # ------------------------------------------------------------------
    # Loss
    # ------------------------------------------------------------------
    def loss_world(self, seq, embeddings, rewards, continues):
        """
        Prediction, dynamics and representation losses.

        Args:
            seq (SequencePosterior): Output of observe_sequence
            embeddings (torch.Tensor): (B, T, X) target embeddings, held constant
            rewards (torch.Tensor): (B, T)
            continues (torch.Tensor): (B, T) in {0, 1}

        Returns:
            WorldLosses
        """
        if embeddings.shape[:2] != seq.h.shape[:2] or rewards.shape != seq.reward.shape \
                or continues.shape != seq.continue_logit.shape:
            raise UsageError("Targets are not aligned with the posterior sequence")
        cfg = self.config
        dtype = seq.h.dtype
        embed = unit_gaussian_nll(seq.embedding, embeddings.detach().to(dtype)).sum(-1).mean()
        reward = unit_gaussian_nll(seq.reward, rewards.to(dtype)).mean()
        cont = F.binary_cross_entropy_with_logits(seq.continue_logit, continues.to(dtype))
        pred = embed + reward + cont
        dyn, rep, kl = kl_balance_terms(seq.posterior, seq.prior, cfg.free_bits)
        total = cfg.w_pred * pred + cfg.w_dyn * dyn + cfg.w_rep * rep
        for name, value in (('embed_loss', embed), ('reward_loss', reward), ('cont_loss', cont),
                            ('dyn_loss', dyn), ('rep_loss', rep)):
            check_finite(name, value)
        return WorldLosses(total=total, pred=pred, dyn=dyn, rep=rep, kl=kl,
                           embed=embed, reward=reward, cont=cont)
