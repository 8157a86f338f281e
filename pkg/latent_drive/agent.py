# agent.py
"""
Actor-critic trained entirely inside the world model.

Imagined trajectories start from every posterior state of a replayed batch,
roll the prior dynamics forward under the current policy, and train the
critic on lambda-returns and the actor with an entropy-regularised
REINFORCE estimator. World-model parameters receive no gradient here.
"""
import math
from dataclasses import dataclass

import numpy as np
import torch
from torch.nn import functional as F

from .errors import UsageError
from .nncore import (
    MLP, Optimizer, ParamStore, categorical, diag_gaussian, dist_entropy, dist_log_prob, dist_sample,
    stop_gradient,
)
from .rssm import HALF_LOG_2PI, LatentState
from .utils import check_finite

LOG_2 = math.log(2.0)


def feature(state):
    """f = h concatenated with z."""
    return torch.cat([state.h, state.z], dim=-1)


def squash_log_det(pre):
    """log(1 - tanh(u)^2) computed without cancellation, summed over action dims."""
    return (2.0 * (LOG_2 - pre - F.softplus(-2.0 * pre))).sum(-1)


class Actor(ParamStore):
    """
    Policy head over latent features.

    Continuous tasks: diagonal Gaussian over pre-squash values u, action
    tanh(u) in [-1, 1] (the environment scales it to its bounds).
    Discrete tasks: categorical over the five meta-actions.
    """

    def __init__(self, feature_dim, action_dim, discrete, hidden=256, rng_seed=3):
        super().__init__(rng_seed)
        self.action_dim = action_dim
        self.discrete = discrete
        out = action_dim if discrete else 2 * action_dim
        self.net = MLP(feature_dim, out, hidden=(hidden, hidden))
        self.reset_parameters()

    def dist(self, f):
        out = self.net(f)
        if self.discrete:
            return categorical(out)
        mean, log_std = out.chunk(2, dim=-1)
        return diag_gaussian(mean, log_std)

    def to_action(self, raw):
        """World-model action vector from a raw sample (pre-squash values or indices)."""
        if self.discrete:
            return F.one_hot(raw.long(), self.action_dim).to(self.net.layers[0].weight.dtype)
        return torch.tanh(raw)

    def sample(self, f, generator=None):
        """Returns (action vector, raw sample)."""
        raw = dist_sample(self.dist(f), generator)
        return self.to_action(raw), raw

    def mode(self, f):
        d = self.dist(f)
        if self.discrete:
            return self.to_action(torch.argmax(d.params[0], dim=-1))
        return torch.tanh(d.params[0])

    def log_prob(self, f, raw):
        """log pi(a | f); continuous actions include the tanh change-of-variables term."""
        d = self.dist(f)
        if self.discrete:
            return dist_log_prob(d, raw.long())
        return dist_log_prob(d, raw) - squash_log_det(raw)

    def entropy(self, f):
        """Categorical entropy, or the closed-form entropy of the pre-squash Gaussian."""
        return dist_entropy(self.dist(f))


class Critic(ParamStore):
    """Mean of a unit-variance Gaussian over returns."""

    def __init__(self, feature_dim, hidden=256, rng_seed=4):
        super().__init__(rng_seed)
        self.net = MLP(feature_dim, 1, hidden=(hidden, hidden))
        self.reset_parameters()

    def forward(self, f):
        return self.net(f).squeeze(-1)


@dataclass
class ImaginedTrajectory:
    """Time-major tensors: features/values H+1 steps, everything else H steps."""
    features: torch.Tensor  # (H+1, B, F)
    actions: torch.Tensor  # (H, B, A)
    raw_actions: torch.Tensor  # (H, B, A) or (H, B)
    rewards: torch.Tensor  # (H, B)  r_1..r_H
    continues: torch.Tensor  # (H, B)  c_1..c_H
    values: torch.Tensor  # (H+1, B) V_0..V_H
    returns: torch.Tensor  # (H, B)  G_0..G_{H-1}

    @property
    def horizon(self):
        return self.actions.shape[0]

    def weights(self):
        """Cumulative continuation product: 1 at t=0, prod_{k<=t} c_k after."""
        ones = torch.ones_like(self.continues[:1])
        return torch.cumprod(torch.cat([ones, self.continues[:-1]], dim=0), dim=0)


def lambda_returns(rewards, continues, values, gamma, lam):
    """
    Backward lambda-return recursion with bootstrap G_H = V_H.

        G_t = r_{t+1} + gamma * c_{t+1} * ((1 - lam) * V_{t+1} + lam * G_{t+1})

    Args:
        rewards: r_1..r_H, time-major
        continues: c_1..c_H
        values: V_0..V_H
        gamma (float): Discount
        lam (float): Lambda

    Returns:
        torch.Tensor: G_0..G_{H-1}
    """
    rewards, continues, values = (torch.as_tensor(x) for x in (rewards, continues, values))
    horizon = rewards.shape[0]
    if continues.shape[0] != horizon or values.shape[0] != horizon + 1:
        raise UsageError(f"lambda_returns needs H rewards/continues and H+1 values, got "
                         f"{rewards.shape[0]}, {continues.shape[0]}, {values.shape[0]}")
    returns = []
    next_return = values[horizon]
    for t in reversed(range(horizon)):
        next_return = rewards[t] + gamma * continues[t] * ((1.0 - lam) * values[t + 1] + lam * next_return)
        returns.append(next_return)
    return torch.stack(returns[::-1])


def critic_loss(values, targets, weights=None):
    """Mean unit-Gaussian NLL of the (constant) targets: 0.5 (G - V)^2 + 0.5 ln 2 pi."""
    if values.shape != targets.shape:
        raise UsageError(f"Values {tuple(values.shape)} and targets {tuple(targets.shape)} differ")
    nll = 0.5 * (stop_gradient(targets) - values) ** 2 + HALF_LOG_2PI
    if weights is not None:
        nll = nll * weights
    return nll.mean()


def actor_loss(log_probs, advantages, entropies, beta, weights=None):
    """-mean(log pi * sg(A) + beta * H)."""
    if not log_probs.shape == advantages.shape == entropies.shape:
        raise UsageError("log_probs, advantages and entropies must share a shape")
    objective = log_probs * stop_gradient(advantages) + beta * entropies
    if weights is not None:
        objective = objective * weights
    return -objective.mean()


def episode_return(rewards, gamma):
    """Discounted sum of rewards, sum_k gamma^k r_k."""
    rewards = np.asarray(rewards, dtype=float)
    return float(np.sum(gamma ** np.arange(len(rewards)) * rewards))


class ReturnAccumulator:
    """Running discounted return of one evaluation episode."""

    def __init__(self, gamma):
        self.gamma = gamma
        self.value = 0.0
        self.undiscounted = 0.0
        self._discount = 1.0
        self.steps = 0

    def add(self, reward):
        self.value += self._discount * reward
        self.undiscounted += reward
        self._discount *= self.gamma
        self.steps += 1
        return self.value


def imagine_rollout(rssm, actor, critic, starts, horizon, gamma, lam, generator=None, policy=None):
    """
    Roll the prior dynamics forward from posterior states.

    Args:
        rssm (RSSM): World model, used without gradients
        actor (Actor): Policy sampled at every step
        critic (Critic): Value head evaluated on every imagined feature
        starts (LatentState): (N, .) start states
        horizon (int): H
        policy: Optional callable f -> (action vector, raw) replacing actor.sample

    Returns:
        ImaginedTrajectory
    """
    policy = policy or (lambda f: actor.sample(f, generator))
    with torch.no_grad():
        state = LatentState(starts.h.detach(), starts.z.detach())
        features, actions, raws, rewards, continues = [feature(state)], [], [], [], []
        for _ in range(horizon):
            action, raw = policy(features[-1])
            state, reward, cont = rssm.imagine_step(state, action, generator)
            features.append(feature(state))
            actions.append(action)
            raws.append(raw)
            rewards.append(reward)
            continues.append(cont)
        features = torch.stack(features)
        rewards = torch.stack(rewards)
        continues = torch.stack(continues)
        values = critic(features)
        returns = lambda_returns(rewards, continues, values, gamma, lam)
    return ImaginedTrajectory(
        features=features, actions=torch.stack(actions), raw_actions=torch.stack(raws),
        rewards=rewards, continues=continues, values=values, returns=returns,
    )


class ActorCritic:
    """Actor and critic with their optimizers."""

    def __init__(self, config, feature_dim, action_dim, discrete, optim_config=None, seed=0):
        config.validate()
        self.config = config
        self.actor = Actor(feature_dim, action_dim, discrete, hidden=config.hidden, rng_seed=seed + 3)
        self.critic = Critic(feature_dim, hidden=config.hidden, rng_seed=seed + 4)
        self.actor_opt = self.critic_opt = None
        if optim_config is not None:
            self.actor_opt = Optimizer('actor', self.actor.parameters(), lr=optim_config.actor_lr,
                                       eps=optim_config.eps, grad_clip=optim_config.grad_clip)
            self.critic_opt = Optimizer('critic', self.critic.parameters(), lr=optim_config.critic_lr,
                                        eps=optim_config.eps, grad_clip=optim_config.grad_clip)

    def losses(self, trajectory):
        """Actor and critic losses on re-evaluated (detached) imagined features."""
        cfg = self.config
        feats = trajectory.features.detach()
        weights = trajectory.weights() if cfg.continuation_weighting else None

        values = self.critic(feats[:-1])
        c_loss = critic_loss(values, trajectory.returns, weights)

        advantages = trajectory.returns - trajectory.values[:-1]
        if cfg.normalize_advantages:
            advantages = (advantages - advantages.mean()) / (advantages.std() + 1e-8)
        log_probs = self.actor.log_prob(feats[:-1], trajectory.raw_actions)
        entropies = self.actor.entropy(feats[:-1])
        a_loss = actor_loss(log_probs, advantages, entropies, cfg.entropy_beta, weights)
        check_finite('actor_loss', a_loss)
        check_finite('critic_loss', c_loss)
        stats = {
            'mean_entropy': float(entropies.mean().detach()),
            'mean_advantage': float(advantages.mean().detach()),
            'mean_return': float(trajectory.returns.mean()),
        }
        return a_loss, c_loss, stats

    def update(self, rssm, starts, generator=None):
        """One imagination rollout followed by one actor and one critic step."""
        if self.actor_opt is None:
            raise UsageError("ActorCritic was built without optimizer settings")
        cfg = self.config
        trajectory = imagine_rollout(rssm, self.actor, self.critic, starts, cfg.horizon,
                                     cfg.gamma, cfg.lam, generator)
        a_loss, c_loss, stats = self.losses(trajectory)
        metrics = {}
        metrics.update(self.actor_opt(a_loss))
        metrics.update(self.critic_opt(c_loss))
        metrics.update(stats)
        return metrics

    def act(self, state, mode='mode', generator=None):
        """Action vector for the environment loop, (B, A)."""
        with torch.no_grad():
            f = feature(state)
            if mode == 'mode':
                return self.actor.mode(f)
            return self.actor.sample(f, generator)[0]
