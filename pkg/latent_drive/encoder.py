# encoder.py
"""
Masked joint-embedding encoder.

A student patch encoder produces N x D bottleneck tokens per frame; an EMA
teacher produces stop-gradient targets; a predictor fills masked positions
from the visible context. The training objective is

    total = alpha * align + beta * var + gamma_w * cov

where align is the L1 distance at masked positions only and var / cov are
the variance hinge and off-diagonal covariance penalties on the student
tokens.
"""
import math
from dataclasses import dataclass

import numpy as np
import pandas as pd
import torch
from torch import nn

from .constants import IMAGE_CHANNELS, IMAGE_SIZE
from .errors import ConfigurationError, UsageError
from .nncore import MLP, Optimizer, ParamStore, ema_update, stop_gradient
from .utils import check_finite, log_info

PROBE_STD_THRESHOLD = 0.1


def frames_to_tensor(frames, dtype=torch.float32):
    """uint8 (..., H, W, C) frames -> float (..., C, H, W) in [0, 1]."""
    if isinstance(frames, torch.Tensor):
        tensor = frames.to(dtype)
    else:
        tensor = torch.as_tensor(np.asarray(frames), dtype=dtype)
    tensor = tensor / 255.0
    return tensor.movedim(-1, -3)


def stack_frames(sequence):
    """Pair every frame of (B, T, H, W, C) with its predecessor along channels; the first frame repeats."""
    sequence = np.asarray(sequence)
    previous = np.concatenate([sequence[:, :1], sequence[:, :-1]], axis=1)
    return np.concatenate([previous, sequence], axis=-1)


def off_diagonal(x):
    n, m = x.shape
    return x.flatten()[:-1].view(n - 1, n + 1)[:, 1:].flatten()


class PatchEncoder(ParamStore):
    """
    Strided patch embedding followed by a per-token bottleneck to D.

    A kernel = stride = patch_size convolution gives one feature vector per
    patch; a 1x1 convolution keeps every token local to its own patch.
    """

    def __init__(self, config, rng_seed=0):
        super().__init__(rng_seed)
        self.config = config
        in_channels = IMAGE_CHANNELS * config.frame_stack
        self.in_channels = in_channels
        self.patch = nn.Sequential(
            nn.Conv2d(in_channels, config.channels, kernel_size=config.patch_size, stride=config.patch_size),
            nn.SiLU(),
            nn.Conv2d(config.channels, config.channels, kernel_size=1),
        )
        self.position = nn.Parameter(torch.zeros(config.token_count, config.channels))
        self.bottleneck = MLP(config.channels, config.embed_dim, hidden=(config.channels * 2,))
        self.reset_parameters()

    def forward(self, frames):
        """
        Args:
            frames: uint8 (B, 64, 64, C) array/tensor or float (B, C, 64, 64) tensor

        Returns:
            torch.Tensor: (B, N, D) tokens
        """
        x = frames if (isinstance(frames, torch.Tensor) and frames.is_floating_point()) \
            else frames_to_tensor(frames, dtype=self.position.dtype)
        if x.dim() != 4 or tuple(x.shape[1:]) != (self.in_channels, IMAGE_SIZE, IMAGE_SIZE):
            raise ConfigurationError(
                f"Encoder expects frames of {IMAGE_SIZE}x{IMAGE_SIZE}x{self.in_channels}, got {tuple(x.shape)}")
        features = self.patch(x.to(self.position.dtype))  # (B, C, g, g)
        tokens = features.flatten(2).transpose(1, 2)  # (B, N, C)
        return self.bottleneck(tokens + self.position)


class SpatialPredictor(ParamStore):
    """
    Fills masked token positions from the visible ones.

    Masked positions are replaced by learnable per-position placeholders, a
    token-mixing layer spreads context across positions and a per-token
    network produces the prediction.
    """

    def __init__(self, config, rng_seed=1):
        super().__init__(rng_seed)
        n, d = config.token_count, config.embed_dim
        self.token_count = n
        self.mask_tokens = nn.Parameter(torch.zeros(n, d))
        self.token_mix = nn.Linear(n, n)
        self.norm = nn.LayerNorm(d)
        self.channel_mlp = MLP(d, d, hidden=(config.predictor_hidden,))
        self.reset_parameters()
        with torch.no_grad():
            self.norm.weight.fill_(1.0)

    def forward(self, visible, mask_indices):
        """
        Args:
            visible (torch.Tensor): (B, N - M, D) visible tokens in position order
            mask_indices (torch.Tensor): (B, M) masked positions

        Returns:
            torch.Tensor: (B, M, D) predictions at the masked positions
        """
        batch, masked = mask_indices.shape
        d = visible.shape[-1]
        if masked == 0:
            return visible.new_zeros(batch, 0, d)
        is_masked = torch.zeros(batch, self.token_count, dtype=torch.bool, device=visible.device)
        is_masked.scatter_(1, mask_indices, True)
        grid = self.mask_tokens.unsqueeze(0).expand(batch, -1, -1).clone()
        grid[~is_masked] = visible.reshape(-1, d)
        mixed = grid + self.token_mix(self.norm(grid).transpose(1, 2)).transpose(1, 2)
        out = mixed + self.channel_mlp(self.norm(mixed))
        return torch.gather(out, 1, mask_indices.unsqueeze(-1).expand(-1, -1, d))


def mask_random_patches(tokens, mask_ratio, generator=None):
    """
    Mask ceil(mask_ratio * N) positions per sample, uniformly without replacement.

    Returns:
        tuple: (visible tokens (B, N - M, D), mask_indices (B, M) sorted)
    """
    if not 0.0 < mask_ratio < 1.0:
        raise ConfigurationError(f"mask_ratio must lie in (0, 1), got {mask_ratio}")
    batch, n, d = tokens.shape
    masked = math.ceil(mask_ratio * n)
    mask_rows, keep_rows = [], []
    for _ in range(batch):
        order = torch.randperm(n, generator=generator)
        mask_rows.append(torch.sort(order[:masked]).values)
        keep_rows.append(torch.sort(order[masked:]).values)
    mask_indices = torch.stack(mask_rows).to(tokens.device)
    keep_indices = torch.stack(keep_rows).to(tokens.device)
    visible = torch.gather(tokens, 1, keep_indices.unsqueeze(-1).expand(-1, -1, d))
    return visible, mask_indices


def gather_tokens(tokens, indices):
    return torch.gather(tokens, 1, indices.unsqueeze(-1).expand(-1, -1, tokens.shape[-1]))


def loss_align(pred, target):
    """Mean absolute difference over masked positions and dimensions."""
    if pred.shape != target.shape:
        raise UsageError(f"Prediction shape {tuple(pred.shape)} != target shape {tuple(target.shape)}")
    return (pred - target).abs().mean()


def _flatten_embeddings(embeddings):
    z = embeddings.reshape(-1, embeddings.shape[-1])
    if z.shape[0] < 2:
        raise UsageError("Variance and covariance terms need at least 2 samples")
    return z


def loss_var(embeddings, eps=1e-4):
    """(1/D) * sum_d max(0, 1 - sqrt(Var(z_d) + eps))."""
    z = _flatten_embeddings(embeddings)
    std = torch.sqrt(z.var(dim=0) + eps)
    return torch.relu(1.0 - std).mean()


def loss_cov(embeddings):
    """(1/D) * sum of squared off-diagonal covariance entries, 1/(n-1) normaliser."""
    z = _flatten_embeddings(embeddings)
    n, d = z.shape
    z = z - z.mean(dim=0)
    cov = (z.T @ z) / (n - 1)
    return off_diagonal(cov).pow(2).sum() / d


def summarize_tokens(tokens, mode='mean'):
    """Token summary fed to the dynamics model: mean over positions or the flattened grid."""
    if mode == 'mean':
        return tokens.mean(dim=1)
    if mode == 'flatten':
        return tokens.flatten(1)
    raise ConfigurationError(f"Unknown token summary '{mode}'")


@dataclass
class EncoderLosses:
    total: torch.Tensor
    align: torch.Tensor
    var: torch.Tensor
    cov: torch.Tensor

    def as_dict(self):
        return {
            'loss_align': float(self.align.detach()),
            'loss_var': float(self.var.detach()),
            'loss_cov': float(self.cov.detach()),
            'loss_total': float(self.total.detach()),
        }


class JepaEncoder:
    """Student, EMA teacher and predictor with their optimizer."""

    def __init__(self, config, optim_config=None, seed=0):
        config.validate()
        self.config = config
        self.student = PatchEncoder(config, rng_seed=seed)
        self.teacher = self.student.frozen_copy()
        self.predictor = SpatialPredictor(config, rng_seed=seed + 1)
        self.optimizer = None
        if optim_config is not None:
            self.optimizer = Optimizer(
                'encoder',
                list(self.student.parameters()) + list(self.predictor.parameters()),
                lr=optim_config.encoder_lr, eps=optim_config.eps, grad_clip=optim_config.grad_clip,
            )
        self.updates = 0

    def encode_student(self, frames):
        return self.student(frames)

    def encode_teacher(self, frames):
        with torch.no_grad():
            return stop_gradient(self.teacher(frames))

    def spatial_predict(self, visible, mask_indices):
        return self.predictor(visible, mask_indices)

    def loss_encoder_total(self, frames, generator=None):
        """
        Masked-prediction objective on one batch of frames.

        Args:
            frames: (B, 64, 64, C) uint8 frames
            generator (torch.Generator): Mask randomness

        Returns:
            EncoderLosses
        """
        cfg = self.config
        tokens = self.encode_student(frames)
        targets = self.encode_teacher(frames)
        visible, mask_indices = mask_random_patches(tokens, cfg.mask_ratio, generator)
        pred = self.spatial_predict(visible, mask_indices)
        align = loss_align(pred, gather_tokens(targets, mask_indices))
        var = loss_var(tokens, cfg.eps)
        cov = loss_cov(tokens)
        total = cfg.alpha * align + cfg.beta * var + cfg.gamma_w * cov
        for name, value in (('loss_align', align), ('loss_var', var), ('loss_cov', cov)):
            check_finite(name, value)
        return EncoderLosses(total=total, align=align, var=var, cov=cov)

    def update(self, frames, generator=None):
        """One optimizer step on student + predictor, then one EMA step of the teacher."""
        if self.optimizer is None:
            raise UsageError("Encoder was built without optimizer settings")
        losses = self.loss_encoder_total(frames, generator)
        self.optimizer(losses.total)
        ema_update(self.teacher, self.student, self.config.tau)
        self.updates += 1
        return losses.as_dict()

    def embed(self, frames, grad=False):
        """Summary vectors (B, summary_dim) for the dynamics model."""
        if grad:
            return summarize_tokens(self.student(frames), self.config.summary)
        with torch.no_grad():
            return summarize_tokens(self.student(frames), self.config.summary)

    def probe_variance_report(self, frames, batch=64):
        """
        Per-dimension std of bottleneck tokens over a probe set.

        Returns:
            tuple: (DataFrame with columns dim, std; share of dims with std >= 0.1)
        """
        chunks = []
        with torch.no_grad():
            for start in range(0, len(frames), batch):
                tokens = self.student(frames[start:start + batch])
                chunks.append(tokens.reshape(-1, tokens.shape[-1]))
        z = torch.cat(chunks)
        std = z.std(dim=0).cpu().numpy()
        report = pd.DataFrame({'dim': np.arange(len(std)), 'std': std})
        share = float((std >= PROBE_STD_THRESHOLD).mean())
        log_info(f"Probe variance: {share:.1%} of {len(std)} dims with std >= {PROBE_STD_THRESHOLD}")
        return report, share
