# metrics.py
"""
Evaluation metrics: average episode reward, collision, off-road and
success rates, and Frechet distances between Gaussian summaries of
embedding sets.

Std conventions: sample std (N-1) for episode rewards, population std for
the 0/1 indicators. A single episode reports std 0 everywhere.
"""
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .errors import NumericError, UsageError

DEFAULT_EPS_REG = 1e-6


@dataclass
class EvalRecord:
    episode_id: int
    reward_sum: float
    collided: bool
    length: int
    success: bool = False
    discounted_return: float = 0.0
    off_road: bool = False


def _check_records(records):
    records = list(records)
    if not records:
        raise UsageError("Metric needs at least one evaluation episode")
    return records


def average_reward(records):
    """Mean and sample std of per-episode undiscounted reward sums."""
    sums = np.array([r.reward_sum for r in _check_records(records)], dtype=float)
    std = float(sums.std(ddof=1)) if len(sums) > 1 else 0.0
    return float(sums.mean()), std


def collision_rate(records):
    """Fraction of collided episodes and the population std of the indicator."""
    flags = np.array([1.0 if r.collided else 0.0 for r in _check_records(records)])
    return float(flags.mean()), float(flags.std(ddof=0))


def success_rate(records):
    flags = np.array([1.0 if r.success else 0.0 for r in _check_records(records)])
    return float(flags.mean()), float(flags.std(ddof=0))


def off_road_rate(records):
    """Fraction of episodes that ended by leaving the road without a collision."""
    flags = np.array([1.0 if r.off_road and not r.collided else 0.0 for r in _check_records(records)])
    return float(flags.mean()), float(flags.std(ddof=0))


def _sqrtm_psd(matrix):
    """Symmetric PSD square root by eigendecomposition, negative eigenvalues clamped to 0."""
    try:
        values, vectors = np.linalg.eigh((matrix + matrix.T) / 2.0)
    except np.linalg.LinAlgError as e:
        raise NumericError(f"Eigendecomposition failed: {e}")
    return (vectors * np.sqrt(np.clip(values, 0.0, None))) @ vectors.T


def frechet_from_moments(mu_r, sigma_r, mu_g, sigma_g, eps_reg=DEFAULT_EPS_REG):
    """
    ||mu_r - mu_g||^2 + Tr(S_r + S_g - 2 (S_r S_g)^{1/2}).

    The trace of (S_r S_g)^{1/2} equals the trace of
    (S_r^{1/2} S_g S_r^{1/2})^{1/2}, a symmetric PSD matrix, so both square
    roots go through eigh.
    """
    mu_r, mu_g = np.atleast_1d(mu_r).astype(float), np.atleast_1d(mu_g).astype(float)
    sigma_r, sigma_g = np.atleast_2d(sigma_r).astype(float), np.atleast_2d(sigma_g).astype(float)
    if mu_r.shape != mu_g.shape or sigma_r.shape != sigma_g.shape:
        raise UsageError(f"Feature dimension mismatch: {mu_r.shape} vs {mu_g.shape}")
    eye = np.eye(len(mu_r))
    sigma_r = sigma_r + eps_reg * eye
    sigma_g = sigma_g + eps_reg * eye
    if not (np.all(np.isfinite(sigma_r)) and np.all(np.isfinite(sigma_g))):
        raise NumericError("Covariance contains non-finite values")
    root_r = _sqrtm_psd(sigma_r)
    covmean_trace = np.trace(_sqrtm_psd(root_r @ sigma_g @ root_r))
    diff = mu_r - mu_g
    return float(diff @ diff + np.trace(sigma_r) + np.trace(sigma_g) - 2.0 * covmean_trace)


def frechet_distance(real, gen, eps_reg=DEFAULT_EPS_REG):
    """
    Frechet distance between two M x d feature sets.

    Args:
        real (array): Real features, M >= 2 rows
        gen (array): Generated features, M >= 2 rows
        eps_reg (float): Ridge added to both covariances

    Returns:
        float
    """
    real = np.asarray(real, dtype=float)
    gen = np.asarray(gen, dtype=float)
    real = real.reshape(len(real), -1)
    gen = gen.reshape(len(gen), -1)
    if real.shape[1] != gen.shape[1]:
        raise UsageError(f"Feature dimension mismatch: {real.shape[1]} vs {gen.shape[1]}")
    if len(real) < 2 or len(gen) < 2:
        raise UsageError("Frechet distance needs at least 2 samples per set")
    return frechet_from_moments(real.mean(0), np.cov(real, rowvar=False),
                                gen.mean(0), np.cov(gen, rowvar=False), eps_reg)


def _embed_frames(encoder, frames, batch=64):
    frames = np.asarray(frames)
    out = [encoder.embed(frames[i:i + batch]).cpu().numpy() for i in range(0, len(frames), batch)]
    return np.concatenate(out)


def fid_over_frames(real_frames, gen_frames, encoder, eps_reg=DEFAULT_EPS_REG):
    """Frame-level distance on pooled bottleneck embeddings."""
    return frechet_distance(_embed_frames(encoder, real_frames), _embed_frames(encoder, gen_frames), eps_reg)


def episode_features(episodes, encoder=None):
    """
    One feature per episode: the time-mean of per-frame embeddings.

    Episodes are either frame stacks (T, 64, 64, C) encoded with `encoder`
    or embedding sequences (T, X) used as they are.
    """
    features = []
    for episode in episodes:
        episode = np.asarray(episode)
        if episode.ndim == 4:
            if encoder is None:
                raise UsageError("Frame episodes need an encoder")
            episode = _embed_frames(encoder, episode)
        features.append(episode.reshape(len(episode), -1).mean(0))
    return np.stack(features)


def fvd_over_rollouts(real_episodes, imagined_episodes, encoder=None, eps_reg=DEFAULT_EPS_REG):
    """Episode-level distance between real and imagined rollouts."""
    real_episodes, imagined_episodes = list(real_episodes), list(imagined_episodes)
    if not real_episodes or not imagined_episodes:
        raise UsageError("Both rollout sets must be non-empty")
    return frechet_distance(episode_features(real_episodes, encoder),
                            episode_features(imagined_episodes, encoder), eps_reg)


def report_frame(env_name, records):
    """Evaluation report rows: env, metric, mean, std, episodes."""
    records = _check_records(records)
    rows = []
    for metric, fn in (('collision_rate', collision_rate), ('average_reward', average_reward),
                       ('success_rate', success_rate), ('off_road_rate', off_road_rate)):
        mean, std = fn(records)
        rows.append({'env': env_name, 'metric': metric, 'mean': mean, 'std': std, 'episodes': len(records)})
    return pd.DataFrame(rows, columns=['env', 'metric', 'mean', 'std', 'episodes'])


def format_report_table(report):
    """
    Text tables, one per metric, with 'mean ± std' cells.

    Args:
        report (DataFrame): Rows from report_frame, possibly several envs

    Returns:
        str
    """
    titles = {
        'collision_rate': 'Collision rate (population std)',
        'average_reward': 'Average episode reward (sample std)',
        'success_rate': 'Success rate (population std)',
        'off_road_rate': 'Off-road rate (population std)',
    }
    blocks = []
    for metric, group in report.groupby('metric', sort=False):
        episodes = int(group['episodes'].max())
        lines = [f"{titles.get(metric, metric)} over {episodes} evaluation episodes",
                 f"{'env':<12} {'mean ± std':>20}"]
        for _, row in group.iterrows():
            lines.append(f"{row['env']:<12} {row['mean']:>10.3f} ± {row['std']:<7.3f}")
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n"
