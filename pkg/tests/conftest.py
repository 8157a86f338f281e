import numpy as np
import pytest
import torch

from latent_drive.config import (
    AgentConfig, EncoderConfig, EnvConfig, ReplayConfig, RssmConfig, RunConfig, ScheduleConfig,
)


@pytest.fixture
def float64():
    """Run a test with float64 as the default torch dtype."""
    previous = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(previous)


@pytest.fixture
def small_encoder_config():
    return EncoderConfig(patch_size=16, token_count=16, embed_dim=8, channels=4, predictor_hidden=16)


@pytest.fixture
def small_rssm_config():
    return RssmConfig(h_dim=8, z_dim=4, hidden=16)


@pytest.fixture
def random_frames():
    rng = np.random.default_rng(0)
    return rng.integers(0, 256, size=(4, 64, 64, 3), dtype=np.uint8)


@pytest.fixture
def tiny_config(tmp_path, small_encoder_config, small_rssm_config):
    config = RunConfig(
        env=EnvConfig.for_task('highway', vehicle_count=5, time_limit=20),
        encoder=small_encoder_config,
        rssm=small_rssm_config,
        agent=AgentConfig(horizon=3, hidden=16),
        replay=ReplayConfig(capacity=2000, seq_length=4, batch=2),
        schedule=ScheduleConfig(seed_episodes=1, encoder_pretrain_steps=2, encoder_batch=4,
                                world_model_steps=2, collect_interval=1, updates_per_collect=2, log_every=1),
        seed=3,
        out=str(tmp_path / 'run'),
    )
    return config.validate()
