# harness/training.py
"""
Training orchestration.

Phase 1 collects seed episodes with a uniform random policy and pretrains
the encoder on replayed frames. Phase 2 alternates collection with the
current actor and rounds of world-model + imagination updates.
"""
import os
from dataclasses import dataclass

import numpy as np
import torch

from ..agent import ActorCritic
from ..constants import LOG_FILES, ENCODER_SERIES
from ..encoder import JepaEncoder, stack_frames
from ..envsim import DrivingEnv
from ..errors import EmptyReplayError
from ..nncore import Optimizer
from ..replay import EpisodeRecord, ReplayQueue
from ..rssm import RSSM
from ..utils import ensure_dir, log_info, log_warning, seed_everything, setup_file_logging, torch_generator
from .checkpoint import save_checkpoint
from .logs import LossLog
from .plotting import emit_plots

MAX_COLLECT_ATTEMPTS = 100
AGENT_COLUMNS = ['actor_loss', 'critic_loss', 'mean_entropy', 'mean_advantage', 'mean_return',
                 'actor_grad_norm', 'critic_grad_norm']
WORLD_COLUMNS = ['model_loss', 'pred_loss', 'embed_loss', 'reward_loss', 'cont_loss',
                 'dyn_loss', 'rep_loss', 'kl', 'model_grad_norm']


@dataclass
class EpisodeStats:
    episode_id: int
    reward_sum: float
    length: int
    collided: bool
    success: bool
    off_road: bool = False


class Components:
    """Every trainable part of a run, keyed by checkpoint section name."""

    def __init__(self, config, action_dim, discrete, with_optimizers=True):
        optim = config.optim if with_optimizers else None
        self.encoder = JepaEncoder(config.encoder, optim, seed=config.seed)
        self.rssm = RSSM(config.rssm, config.encoder.summary_dim, action_dim, rng_seed=config.seed + 2)
        self.agent = ActorCritic(config.agent, self.rssm.feature_dim, action_dim, discrete, optim, seed=config.seed)

    def modules(self):
        return {
            'encoder_student': self.encoder.student,
            'encoder_teacher': self.encoder.teacher,
            'predictor': self.encoder.predictor,
            'rssm': self.rssm,
            'actor': self.agent.actor,
            'critic': self.agent.critic,
        }


class PolicyRunner:
    """
    Online observe-encode-filter-act loop for one episode.

    Keeps the latent state and previous action between env steps.
    """

    def __init__(self, components, env, mode='sample', generator=None):
        self.components = components
        self.env = env
        self.mode = mode
        self.generator = generator
        self.state = None
        self.prev_action = None
        self.prev_frame = None

    def reset(self, frame):
        self.state = self.components.rssm.initial_state(1)
        self.prev_action = np.zeros(self.env.action_dim, dtype=np.float32)
        self.prev_frame = frame

    def encoder_input(self, frame):
        if self.components.encoder.config.frame_stack == 2:
            stacked = np.concatenate([self.prev_frame, frame], axis=-1)
            self.prev_frame = frame
            return stacked[None]
        return frame[None]

    def act(self, frame):
        """Filter the new frame into the latent state and return the env action."""
        comps = self.components
        with torch.no_grad():
            embedding = comps.encoder.embed(self.encoder_input(frame))
            action = torch.as_tensor(self.prev_action, dtype=embedding.dtype)[None]
            self.state, _ = comps.rssm.observe_step(self.state, action, embedding, self.generator)
            vector = comps.agent.act(self.state, self.mode, self.generator)[0].cpu().numpy()
        env_action = self.env.decode_action(vector)
        self.prev_action = self.env.encode_action(env_action)
        return env_action


def run_episode(env, seed, choose_action, on_step=None, first_frame=None):
    """
    Play one episode.

    Args:
        env (DrivingEnv): Environment
        seed (int): Episode seed
        choose_action: Callable frame -> env action
        on_step: Optional callable (observation, encoded action, StepResult)

    Returns:
        EpisodeStats
    """
    observation = env.reset(seed=seed)
    if first_frame is not None:
        first_frame(observation)
    total, steps, collided, success, off_road = 0.0, 0, False, False, False
    while True:
        action = choose_action(observation.image)
        result = env.step(action)
        if on_step is not None:
            on_step(result.observation, env.encode_action(action), result)
        total += result.reward
        steps += 1
        collided = collided or result.collided
        off_road = off_road or result.off_road
        success = success or result.success
        observation = result.observation
        if result.terminated or result.truncated:
            break
    return EpisodeStats(episode_id=seed, reward_sum=total, length=steps, collided=collided, success=success,
                        off_road=off_road)


class Trainer:
    """
    End-to-end training run.

    Usage:
        trainer = Trainer(config)
        trainer.train()
    """

    def __init__(self, config):
        self.config = config
        self.out = ensure_dir(config.out)
        setup_file_logging(os.path.join(self.out, 'latent_drive.log'))
        self.rng = seed_everything(config.seed)
        self.generator = torch_generator(config.seed)
        self.env = DrivingEnv(config.env)
        self.components = Components(config, self.env.action_dim, self.env.discrete)
        model_params = list(self.components.rssm.parameters())
        if config.encoder.train_mode == 'joint':
            model_params += list(self.components.encoder.student.parameters())
        self.model_opt = Optimizer('model', model_params, lr=config.optim.model_lr,
                                   eps=config.optim.eps, grad_clip=config.optim.grad_clip)
        self.replay = ReplayQueue(config.replay.capacity, config.replay.seq_length)
        self.encoder_log = LossLog(os.path.join(self.out, LOG_FILES['encoder']), ENCODER_SERIES)
        self.world_log = LossLog(os.path.join(self.out, LOG_FILES['world_model']), WORLD_COLUMNS)
        self.agent_log = LossLog(os.path.join(self.out, LOG_FILES['agent']), AGENT_COLUMNS)
        self.episodes = 0
        self.global_step = 0

    # ------------------------------------------------------------------
    # Collection
    # ------------------------------------------------------------------
    def collect_episode(self, policy='agent'):
        """Play one episode and store it in replay."""
        seed = int(self.rng.integers(2 ** 31 - 1))
        record = EpisodeRecord(episode_id=self.episodes)
        zeros = np.zeros(self.env.action_dim, dtype=np.float32)

        if policy == 'random':
            choose = lambda frame: self.env.sample_action(self.rng)
            first = lambda obs: record.add(obs.image, zeros, 0.0, 1.0)
        else:
            runner = PolicyRunner(self.components, self.env, mode='sample', generator=self.generator)

            def first(obs):
                record.add(obs.image, zeros, 0.0, 1.0)
                runner.reset(obs.image)
            choose = runner.act

        def on_step(observation, action, result):
            record.add(observation.image, action, result.reward, 0.0 if result.terminated else 1.0)

        stats = run_episode(self.env, seed, choose, on_step=on_step, first_frame=first)
        self.replay.append(record.finalize())
        self.episodes += 1
        log_info(f"Episode {self.episodes} ({policy}): reward {stats.reward_sum:.2f}, "
                 f"length {stats.length}, collided {stats.collided}, off road {stats.off_road}")
        return stats

    def ensure_replay(self, policy='random'):
        """Collect until at least one episode is long enough to sample from."""
        attempts = 0
        while not self.replay.eligible(self.config.replay.seq_length):
            if attempts >= MAX_COLLECT_ATTEMPTS:
                raise EmptyReplayError(
                    f"No episode reached {self.config.replay.seq_length} steps after {attempts} collections")
            self.collect_episode(policy)
            attempts += 1

    # ------------------------------------------------------------------
    # Updates
    # ------------------------------------------------------------------
    def encoder_frames(self, count):
        if self.config.encoder.frame_stack == 1:
            return self.replay.sample_frames(count, self.rng)
        batch = self.replay.sample_sequences(count, 2, self.rng)
        return stack_frames(batch.frames)[:, 1]

    def pretrain_encoder(self):
        encoder = self.components.encoder
        steps = self.config.schedule.encoder_pretrain_steps
        for step in range(1, steps + 1):
            metrics = encoder.update(self.encoder_frames(self.config.schedule.encoder_batch), self.generator)
            self.encoder_log.append(step, metrics)
            if step % self.config.schedule.log_every == 0:
                log_info(f"encoder step {step}/{steps}: " + ", ".join(f"{k}={v:.4f}" for k, v in metrics.items()))

    def world_model_step(self):
        """One world-model update followed by one imagination-trained actor-critic update."""
        cfg = self.config
        comps = self.components
        batch = self.replay.sample_sequences(cfg.replay.batch, cfg.replay.seq_length, self.rng)
        frames = stack_frames(batch.frames) if cfg.encoder.frame_stack == 2 else batch.frames
        b, t = frames.shape[:2]
        joint = cfg.encoder.train_mode == 'joint'
        embeddings = comps.encoder.embed(frames.reshape(b * t, *frames.shape[2:]), grad=joint)
        embeddings = embeddings.reshape(b, t, -1)
        dtype = embeddings.dtype
        actions = torch.as_tensor(batch.actions, dtype=dtype)
        rewards = torch.as_tensor(batch.rewards, dtype=dtype)
        continues = torch.as_tensor(batch.continues, dtype=dtype)

        posterior = comps.rssm.observe_sequence(embeddings, actions, generator=self.generator)
        losses = comps.rssm.loss_world(posterior, embeddings, rewards, continues)
        opt_metrics = self.model_opt(losses.total)
        world_metrics = losses.as_dict()
        world_metrics['model_grad_norm'] = opt_metrics['model_grad_norm']

        if joint:
            encoder_metrics = comps.encoder.update(self.encoder_frames(cfg.schedule.encoder_batch), self.generator)
            self.encoder_log.append(cfg.schedule.encoder_pretrain_steps + self.global_step + 1, encoder_metrics)

        # imagine_rollout detaches the start states
        agent_metrics = comps.agent.update(comps.rssm, posterior.flat_states(), self.generator)
        self.global_step += 1
        self.world_log.append(self.global_step, world_metrics)
        self.agent_log.append(self.global_step, agent_metrics)
        if self.global_step % cfg.schedule.log_every == 0:
            log_info(f"step {self.global_step}: model_loss={world_metrics['model_loss']:.4f} "
                     f"dyn={world_metrics['dyn_loss']:.4f} rep={world_metrics['rep_loss']:.4f} "
                     f"actor={agent_metrics['actor_loss']:.4f} critic={agent_metrics['critic_loss']:.4f}")

    # ------------------------------------------------------------------
    # Run
    # ------------------------------------------------------------------
    def train(self):
        """
        Run both phases, then write logs, plots, the config snapshot and the checkpoint.

        Returns:
            str: Checkpoint path
        """
        cfg = self.config
        log_info(f"Training on {cfg.env.task} with seed {cfg.seed}, output {self.out}")
        for _ in range(cfg.schedule.seed_episodes):
            self.collect_episode('random')
        self.ensure_replay('random')
        self.pretrain_encoder()

        while self.global_step < cfg.schedule.world_model_steps:
            for _ in range(cfg.schedule.collect_interval):
                self.collect_episode('agent')
            self.ensure_replay('agent')
            for _ in range(cfg.schedule.updates_per_collect):
                if self.global_step >= cfg.schedule.world_model_steps:
                    break
                self.world_model_step()
        return self.finish()

    def finish(self):
        with open(os.path.join(self.out, 'config.txt'), 'w', encoding='utf-8') as handle:
            handle.write(self.config.to_text())
        for log in (self.encoder_log, self.world_log, self.agent_log):
            log.write()
        path = os.path.join(self.out, 'checkpoint.hwck')
        save_checkpoint(path, self.config, self.global_step, self.components.modules())
        if len(self.world_log) and len(self.encoder_log):
            emit_plots(self.out, os.path.join(self.out, 'plots'))
        else:
            log_warning("Skipping loss plots: a log has no rows")
        return path
