# config.py
"""
Configuration settings for training and evaluation runs.

Defaults live in plain dictionaries grouped by concern, the way the rest of
the tooling keeps its settings. A run config file is flat UTF-8 text with one
dotted `key = value` pair per line, e.g.

    env.task = merge
    agent.gamma = 0.997
    encoder.tau = 0.996

Every key has a default; unknown keys are rejected with the offending name.
"""

import dataclasses
from dataclasses import dataclass, field
from typing import Tuple

from .constants import META_ACTIONS
from .errors import ConfigurationError

# ============================================================================
# Per-task environment settings
# ============================================================================
# Shaping coefficients are marked only qualitatively in the environment table
# (Strong / Moderate / Low); the numbers below are chosen here and every one
# of them can be overridden from a config file.
TASK_DEFAULTS = {
    'highway': {
        'action_space': 'continuous',
        'time_limit': 200,
        'vehicle_count': 50,
        'vehicle_density': 1.5,
        'speed_target': (23.0, 27.0),
        'collision_penalty': -5.0,
        'off_road_penalty': -5.0,
        'success_reward': 1.0,
        'shaping_weight': 0.85,
        'lanes_count': 4,
        'arrival_rate': 0.0,
        'speed_weight': 0.4,
        'safe_distance_penalty': 0.4,  # strong penalty for tailgating
        'safe_distance_reward': 0.0,
        'lane_change_weight': 0.1,  # smart lane change rewarded
        'progress_weight': 0.2,  # moderate
        'heading_weight': 0.1,
        'survival_weight': 0.0,
    },
    'merge': {
        'action_space': 'discrete',
        'time_limit': 800,
        'vehicle_count': 12,
        'vehicle_density': 0.0,
        'speed_target': (20.0, 28.0),
        'collision_penalty': -1.0,
        'off_road_penalty': -1.0,
        'success_reward': 0.8,
        'shaping_weight': 0.8,
        'lanes_count': 2,
        'arrival_rate': 0.4,
        'speed_weight': 0.2,
        'safe_distance_penalty': 0.2,
        'safe_distance_reward': 0.05,
        'lane_change_weight': -0.1,  # lane changes penalized
        'progress_weight': 0.4,  # strong
        'heading_weight': 0.1,
        'survival_weight': 0.02,  # low
    },
    'roundabout': {
        'action_space': 'discrete',
        'time_limit': 800,
        'vehicle_count': 10,
        'vehicle_density': 0.0,
        'speed_target': (8.0, 15.0),
        'collision_penalty': -1.0,
        'off_road_penalty': -1.0,
        'success_reward': 1.0,
        'shaping_weight': 0.8,
        'lanes_count': 2,
        'arrival_rate': 0.25,
        'speed_weight': 0.2,
        'safe_distance_penalty': 0.3,  # stronger
        'safe_distance_reward': 0.08,
        'lane_change_weight': -0.03,  # slight penalty
        'progress_weight': 0.2,
        'heading_weight': 0.2,  # strong
        'survival_weight': 0.05,  # moderate
    },
}

# Vehicle dynamics shared by every task
DYNAMICS_SETTINGS = {
    'dt': 0.1,
    'max_acceleration': 5.0,
    'max_steering': 0.6,
    'safe_headway': 1.5,  # seconds
    'bev_meters_per_pixel': 1.0,
}

# Optimizer settings
OPTIMIZER_SETTINGS = {
    'model_lr': 3e-4,
    'actor_lr': 8e-5,
    'critic_lr': 8e-5,
    'encoder_lr': 1e-4,
    'grad_clip': 100.0,
    'eps': 1e-8,
}

# Training schedule
SCHEDULE_SETTINGS = {
    'seed_episodes': 5,
    'encoder_pretrain_steps': 2000,
    'encoder_batch': 32,
    'world_model_steps': 5000,
    'collect_interval': 1,  # episodes collected per round
    'updates_per_collect': 50,
    'log_every': 50,
}

TASKS = tuple(TASK_DEFAULTS)
ACTION_SPACES = ('continuous', 'discrete')


@dataclass
class EnvConfig:
    task: str = 'highway'
    action_space: str = 'continuous'
    time_limit: int = 200
    vehicle_count: int = 50
    vehicle_density: float = 1.5
    speed_target: Tuple[float, float] = (23.0, 27.0)
    collision_penalty: float = -5.0
    off_road_penalty: float = -5.0
    success_reward: float = 1.0
    shaping_weight: float = 0.85
    lanes_count: int = 4
    arrival_rate: float = 0.0
    speed_weight: float = 0.4
    safe_distance_penalty: float = 0.4
    safe_distance_reward: float = 0.0
    lane_change_weight: float = 0.1
    progress_weight: float = 0.2
    heading_weight: float = 0.1
    survival_weight: float = 0.0
    dt: float = DYNAMICS_SETTINGS['dt']
    max_acceleration: float = DYNAMICS_SETTINGS['max_acceleration']
    max_steering: float = DYNAMICS_SETTINGS['max_steering']
    safe_headway: float = DYNAMICS_SETTINGS['safe_headway']
    bev_meters_per_pixel: float = DYNAMICS_SETTINGS['bev_meters_per_pixel']
    seed: int = 0

    @classmethod
    def for_task(cls, task, **overrides):
        """
        Build the config of a task from its defaults.

        Args:
            task (str): highway, merge or roundabout
            **overrides: Field values replacing the task defaults

        Returns:
            EnvConfig: Validated config
        """
        if task not in TASK_DEFAULTS:
            raise ConfigurationError(f"Unknown task '{task}', expected one of {', '.join(TASKS)}")
        values = dict(TASK_DEFAULTS[task])
        values.update(overrides)
        config = cls(task=task, **values)
        config.validate()
        return config

    def validate(self):
        if self.task not in TASK_DEFAULTS:
            raise ConfigurationError(f"Unknown task '{self.task}'")
        if self.action_space not in ACTION_SPACES:
            raise ConfigurationError(f"env.action_space must be one of {ACTION_SPACES}, got '{self.action_space}'")
        if self.time_limit < 1:
            raise ConfigurationError("env.time_limit must be >= 1")
        if self.dt <= 0:
            raise ConfigurationError("env.dt must be > 0")
        lo, hi = self.speed_target
        if not lo < hi:
            raise ConfigurationError(f"env.speed_target needs lo < hi, got {self.speed_target}")
        if self.vehicle_count < 0 or self.lanes_count < 1:
            raise ConfigurationError("env.vehicle_count must be >= 0 and env.lanes_count >= 1")
        if self.collision_penalty > 0.0 or self.off_road_penalty > 0.0:
            raise ConfigurationError("env.collision_penalty and env.off_road_penalty must be <= 0")

    @property
    def action_dim(self):
        """Width of the action vector fed to the world model."""
        return 2 if self.action_space == 'continuous' else len(META_ACTIONS)

    def terminal_penalty(self):
        """Largest absolute penalty of a terminating failure (collision or leaving the road)."""
        return max(abs(self.collision_penalty), abs(self.off_road_penalty))

    def shaping_magnitude(self):
        """Largest absolute value the shaped reward part can take before weighting."""
        return (abs(self.speed_weight) + max(abs(self.safe_distance_penalty), abs(self.safe_distance_reward))
                + abs(self.lane_change_weight) + abs(self.progress_weight)
                + abs(self.heading_weight) + abs(self.survival_weight))


@dataclass
class EncoderConfig:
    patch_size: int = 8
    token_count: int = 64
    embed_dim: int = 128
    channels: int = 32
    predictor_hidden: int = 256
    mask_ratio: float = 0.5
    tau: float = 0.996
    alpha: float = 1.0
    beta: float = 1.0
    gamma_w: float = 0.1
    eps: float = 1e-4
    frame_stack: int = 1
    train_mode: str = 'frozen'  # frozen after pretraining, or joint
    summary: str = 'mean'  # token summary fed to the RSSM: mean or flatten

    def validate(self, image_size=64):
        if image_size % self.patch_size != 0:
            raise ConfigurationError(f"encoder.patch_size {self.patch_size} does not tile {image_size}x{image_size}")
        grid = image_size // self.patch_size
        if grid * grid != self.token_count:
            raise ConfigurationError(
                f"encoder.token_count {self.token_count} does not match the {grid}x{grid} patch grid")
        if not 0.0 < self.mask_ratio < 1.0:
            raise ConfigurationError("encoder.mask_ratio must lie in (0, 1)")
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigurationError("encoder.tau must lie in [0, 1]")
        if self.frame_stack not in (1, 2):
            raise ConfigurationError("encoder.frame_stack must be 1 or 2")
        if self.train_mode not in ('frozen', 'joint'):
            raise ConfigurationError("encoder.train_mode must be 'frozen' or 'joint'")
        if self.summary not in ('mean', 'flatten'):
            raise ConfigurationError("encoder.summary must be 'mean' or 'flatten'")

    @property
    def summary_dim(self):
        return self.embed_dim if self.summary == 'mean' else self.embed_dim * self.token_count


@dataclass
class RssmConfig:
    h_dim: int = 256
    z_dim: int = 32
    hidden: int = 256
    free_bits: float = 1.0
    w_pred: float = 1.0
    w_dyn: float = 0.5
    w_rep: float = 0.1
    initial: str = 'zeros'  # zeros or learned
    detach_z: bool = False
    log_std_min: float = -5.0
    log_std_max: float = 2.0

    def validate(self):
        if min(self.h_dim, self.z_dim, self.hidden) <= 0:
            raise ConfigurationError("rssm dims must be > 0")
        if self.free_bits < 0:
            raise ConfigurationError("rssm.free_bits must be >= 0")
        if self.initial not in ('zeros', 'learned'):
            raise ConfigurationError("rssm.initial must be 'zeros' or 'learned'")
        if not self.log_std_min < self.log_std_max:
            raise ConfigurationError("rssm.log_std_min must be below rssm.log_std_max")


@dataclass
class AgentConfig:
    horizon: int = 15
    gamma: float = 0.997
    lam: float = 0.95
    entropy_beta: float = 3e-4
    hidden: int = 256
    normalize_advantages: bool = False
    continuation_weighting: bool = True

    def validate(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigurationError("agent.lam must lie in [0, 1]")
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigurationError("agent.gamma must lie in [0, 1)")
        if self.horizon < 1:
            raise ConfigurationError("agent.horizon must be >= 1")


@dataclass
class ReplayConfig:
    capacity: int = 100000
    seq_length: int = 16
    batch: int = 16

    def validate(self):
        if self.capacity < 1 or self.seq_length < 1 or self.batch < 1:
            raise ConfigurationError("replay.capacity, replay.seq_length and replay.batch must be >= 1")


@dataclass
class ScheduleConfig:
    seed_episodes: int = SCHEDULE_SETTINGS['seed_episodes']
    encoder_pretrain_steps: int = SCHEDULE_SETTINGS['encoder_pretrain_steps']
    encoder_batch: int = SCHEDULE_SETTINGS['encoder_batch']
    world_model_steps: int = SCHEDULE_SETTINGS['world_model_steps']
    collect_interval: int = SCHEDULE_SETTINGS['collect_interval']
    updates_per_collect: int = SCHEDULE_SETTINGS['updates_per_collect']
    log_every: int = SCHEDULE_SETTINGS['log_every']

    def validate(self):
        if min(self.encoder_pretrain_steps, self.world_model_steps) < 0:
            raise ConfigurationError("schedule step counts must be >= 0")
        if min(self.seed_episodes, self.encoder_batch, self.collect_interval,
               self.updates_per_collect, self.log_every) < 1:
            raise ConfigurationError("schedule batch, interval and logging values must be >= 1")


@dataclass
class OptimConfig:
    model_lr: float = OPTIMIZER_SETTINGS['model_lr']
    actor_lr: float = OPTIMIZER_SETTINGS['actor_lr']
    critic_lr: float = OPTIMIZER_SETTINGS['critic_lr']
    encoder_lr: float = OPTIMIZER_SETTINGS['encoder_lr']
    grad_clip: float = OPTIMIZER_SETTINGS['grad_clip']
    eps: float = OPTIMIZER_SETTINGS['eps']


@dataclass
class EvalConfig:
    policy_mode: str = 'mode'  # mode or sample
    episodes: int = 100
    fvd: bool = False

    def validate(self):
        if self.policy_mode not in ('mode', 'sample'):
            raise ConfigurationError("eval.policy_mode must be 'mode' or 'sample'")
        if self.episodes < 1:
            raise ConfigurationError("eval.episodes must be >= 1")


SECTIONS = ('env', 'encoder', 'rssm', 'agent', 'replay', 'schedule', 'optim', 'eval')


@dataclass
class RunConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    rssm: RssmConfig = field(default_factory=RssmConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    replay: ReplayConfig = field(default_factory=ReplayConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    seed: int = 0
    out: str = 'runs/default'

    def validate(self):
        self.env.validate()
        self.encoder.validate()
        self.rssm.validate()
        self.agent.validate()
        self.replay.validate()
        self.schedule.validate()
        self.eval.validate()
        # reset frame plus one transition per step
        if self.replay.capacity < self.env.time_limit + 1:
            raise ConfigurationError(
                f"replay.capacity ({self.replay.capacity}) cannot hold one {self.env.time_limit}-step episode")
        return self

    def to_dict(self):
        """Flatten into an ordered {dotted key: value} dictionary."""
        flat = {}
        for section in SECTIONS:
            for f in dataclasses.fields(getattr(self, section)):
                flat[f"{section}.{f.name}"] = getattr(getattr(self, section), f.name)
        flat['seed'] = self.seed
        flat['out'] = self.out
        return flat

    def to_text(self):
        """Serialize to the key = value format, one key per line."""
        return "".join(f"{key} = {format_value(value)}\n" for key, value in self.to_dict().items())

    @classmethod
    def from_text(cls, text):
        return parse_config_text(text)

    def with_overrides(self, overrides):
        """Return a copy with dotted-key overrides applied (values already parsed or as text)."""
        base = self.to_dict()
        if 'env.task' in overrides and overrides['env.task'] != self.env.task:
            # a new task brings its own env defaults
            base = {k: v for k, v in base.items() if not k.startswith('env.') or k == 'env.seed'}
        base.update(overrides)
        return parse_config_text("".join(f"{k} = {format_value(v)}\n" for k, v in base.items()))


def format_value(value):
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, tuple):
        return ", ".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _cast(key, raw, default):
    """Cast the text `raw` to the type of `default`."""
    try:
        if isinstance(default, bool):
            lowered = raw.lower()
            if lowered not in ('true', 'false', '1', '0', 'yes', 'no'):
                raise ValueError(raw)
            return lowered in ('true', '1', 'yes')
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            parts = tuple(float(p) for p in raw.replace('[', '').replace(']', '').split(',') if p.strip())
            if len(parts) != len(default):
                raise ValueError(raw)
            return parts
        return raw
    except ValueError:
        raise ConfigurationError(f"Invalid value for {key}: '{raw}'")


def parse_config_text(text):
    """
    Parse key = value text into a validated RunConfig.

    `env.task` is applied first so that task defaults sit underneath any
    explicit env.* override, wherever the task line appears in the file.

    Args:
        text (str): Config file contents

    Returns:
        RunConfig: Parsed and validated config
    """
    pairs = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise ConfigurationError(f"Line {line_no}: expected 'key = value', got '{line}'")
        key, raw = (part.strip() for part in line.split('=', 1))
        pairs.append((key, raw))

    config = RunConfig()
    task = [raw for key, raw in pairs if key == 'env.task']
    if task:
        config.env = EnvConfig.for_task(task[-1])

    known = config.to_dict()
    for key, raw in pairs:
        if key not in known:
            raise ConfigurationError(f"Unknown config key: {key}")
        if key == 'env.task':
            continue
        value = _cast(key, raw, known[key])
        if '.' in key:
            section, name = key.split('.', 1)
            setattr(getattr(config, section), name, value)
        else:
            setattr(config, key, value)
    return config.validate()


def load_config(path):
    """
    Read and parse a config file.

    Args:
        path (str): Path to a UTF-8 key = value file

    Returns:
        RunConfig: Parsed config
    """
    try:
        with open(path, 'r', encoding='utf-8') as handle:
            return parse_config_text(handle.read())
    except OSError as e:
        raise ConfigurationError(f"Cannot read config file {path}: {e}")
