# harness/evaluation.py
"""
Policy evaluation and open-loop rollout reports.
"""
import os

import numpy as np
import pandas as pd
import torch

from ..config import EnvConfig, RunConfig
from ..envsim import DrivingEnv, write_ppm
from ..errors import ConfigurationError, UsageError
from ..metrics import EvalRecord, format_report_table, frechet_distance, report_frame
from ..agent import ReturnAccumulator
from ..utils import ensure_dir, log_info, log_warning, seed_everything, torch_generator
from .checkpoint import apply_checkpoint, read_checkpoint
from .training import Components, PolicyRunner, run_episode

ROLLOUT_WINDOW = 16


def restore(checkpoint_path, task=None):
    """
    Rebuild the trained components and an environment.

    Args:
        checkpoint_path (str): HWCK file
        task (str): Evaluate on this task instead of the training task

    Returns:
        tuple: (RunConfig, Components, DrivingEnv)
    """
    checkpoint = read_checkpoint(checkpoint_path)
    config = RunConfig.from_text(checkpoint.config_text)
    env_config = config.env
    if task is not None and task != config.env.task:
        env_config = EnvConfig.for_task(task, seed=config.env.seed)
    env = DrivingEnv(env_config)
    if env.action_dim != config.env.action_dim:
        raise ConfigurationError(
            f"Checkpoint was trained with a {config.env.action_space} action space "
            f"({config.env.action_dim} dims); {env_config.task} uses {env_config.action_space} "
            f"({env.action_dim} dims)")
    components = Components(config, env.action_dim, env.discrete, with_optimizers=False)
    modules = components.modules()
    apply_checkpoint(checkpoint, modules)
    log_info(f"Restored checkpoint {checkpoint_path} (step {checkpoint.global_step})")
    return config, components, env


def evaluate(checkpoint_path=None, task=None, episodes=100, seed=0, policy='agent', policy_mode='mode',
             out_dir=None, gamma=0.997):
    """
    Run evaluation episodes and aggregate collision rate, average reward,
    success rate and off-road rate.

    Args:
        checkpoint_path (str): Trained checkpoint; optional for the random policy
        task (str): Environment task; defaults to the checkpoint's
        episodes (int): Number of episodes
        seed (int): Base seed; episode i uses seed + i
        policy (str): 'agent' or 'random'
        policy_mode (str): 'mode' or 'sample' for the agent
        out_dir (str): Where to write eval_report.csv, eval_report.txt, eval_episodes.csv

    Returns:
        tuple: (list of EvalRecord, report DataFrame)
    """
    if episodes < 1:
        raise UsageError("episodes must be >= 1")
    rng = seed_everything(seed)
    generator = torch_generator(seed)
    if policy == 'random':
        if checkpoint_path is not None:
            config, _, env = restore(checkpoint_path, task)
            gamma = config.agent.gamma
        else:
            env = DrivingEnv(EnvConfig.for_task(task or 'highway'))

        def choose(frame):
            return env.sample_action(rng)
        first = None
    elif policy == 'agent':
        if checkpoint_path is None:
            raise UsageError("Agent evaluation needs a checkpoint")
        config, components, env = restore(checkpoint_path, task)
        gamma = config.agent.gamma
        runner = PolicyRunner(components, env, mode=policy_mode, generator=generator)
        choose = runner.act

        def first(obs):
            runner.reset(obs.image)
    else:
        raise UsageError(f"Unknown policy '{policy}'")

    records = []
    for i in range(episodes):
        accumulator = ReturnAccumulator(gamma)
        stats = run_episode(env, seed + i, choose,
                            on_step=lambda obs, action, result: accumulator.add(result.reward),
                            first_frame=first)
        records.append(EvalRecord(episode_id=i, reward_sum=stats.reward_sum, collided=stats.collided,
                                  length=stats.length, success=stats.success,
                                  discounted_return=accumulator.value, off_road=stats.off_road))

    report = report_frame(env.config.task, records)
    table = format_report_table(report)
    log_info(f"Evaluation of {policy} policy on {env.config.task}:\n{table}")
    if out_dir:
        ensure_dir(out_dir)
        report.to_csv(os.path.join(out_dir, 'eval_report.csv'), index=False)
        pd.DataFrame([vars(r) for r in records]).to_csv(os.path.join(out_dir, 'eval_episodes.csv'), index=False)
        with open(os.path.join(out_dir, 'eval_report.txt'), 'w', encoding='utf-8') as handle:
            handle.write(table)
    return records, report


def rollout(checkpoint_path, task=None, steps=200, seed=0, dump_frames=None, window=ROLLOUT_WINDOW):
    """
    Drive the trained policy, optionally dump PPM frames, and compare real
    embeddings with open-loop imagined ones.

    The run is cut into windows; for each window the model filters up to its
    start and then imagines the window under the actions actually taken.
    The embedding-space Frechet distance compares per-window mean embeddings.

    Returns:
        dict: steps, episodes, windows, fvd (None when fewer than 2 windows)
    """
    seed_everything(seed)
    generator = torch_generator(seed)
    config, components, env = restore(checkpoint_path, task)
    runner = PolicyRunner(components, env, mode='mode', generator=generator)
    if dump_frames:
        ensure_dir(dump_frames)

    episodes = []
    frames, actions = [], []
    episode_seed = seed
    observation = env.reset(seed=episode_seed)
    runner.reset(observation.image)
    frames.append(observation.image)
    actions.append(np.zeros(env.action_dim, dtype=np.float32))
    for step in range(steps):
        if dump_frames:
            write_ppm(os.path.join(dump_frames, f"frame_{step:05d}.ppm"), observation.image)
        action = runner.act(observation.image)
        result = env.step(action)
        observation = result.observation
        frames.append(observation.image)
        actions.append(env.encode_action(action))
        if result.terminated or result.truncated:
            episodes.append((np.stack(frames), np.stack(actions)))
            episode_seed += 1
            observation = env.reset(seed=episode_seed)
            runner.reset(observation.image)
            frames, actions = [observation.image], [np.zeros(env.action_dim, dtype=np.float32)]
    if len(frames) > 1:
        episodes.append((np.stack(frames), np.stack(actions)))

    real, imagined = [], []
    encoder, rssm = components.encoder, components.rssm
    with torch.no_grad():
        for ep_frames, ep_actions in episodes:
            inputs = ep_frames
            if encoder.config.frame_stack == 2:
                inputs = np.concatenate([np.concatenate([ep_frames[:1], ep_frames[:-1]]), ep_frames], axis=-1)
            embeddings = encoder.embed(inputs)[None]
            action_tensor = torch.as_tensor(ep_actions, dtype=embeddings.dtype)[None]
            for start in range(1, len(ep_frames) - window + 1, window):
                posterior = rssm.observe_sequence(embeddings[:, :start], action_tensor[:, :start],
                                                  generator=generator)
                predicted = rssm.open_loop_embeddings(posterior.last_state(),
                                                      action_tensor[:, start:start + window], generator)
                real.append(embeddings[0, start:start + window].mean(0).cpu().numpy())
                imagined.append(predicted[0].mean(0).cpu().numpy())

    fvd = None
    if len(real) >= 2:
        fvd = frechet_distance(np.stack(real), np.stack(imagined))
        log_info(f"Open-loop embedding Frechet distance over {len(real)} windows: {fvd:.4f}")
    else:
        log_warning(f"Only {len(real)} complete {window}-step windows; skipping the Frechet distance")
    return {'steps': steps, 'episodes': len(episodes), 'windows': len(real), 'fvd': fvd}
