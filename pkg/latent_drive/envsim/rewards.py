# envsim/rewards.py
"""
Per-task reward shaping.

reward = collision_penalty * collided + off_road_penalty * (off_road and not collided)
         + success_reward * success
         + shaping_weight * (speed + safe_distance + lane_change + progress + heading + survival)

Each shaping term is a unit-range signal scaled by its coefficient in the
env config, so the per-step reward is bounded by
config.terminal_penalty() + success_reward + shaping_weight * config.shaping_magnitude().
"""
import math
from dataclasses import dataclass, asdict

import numpy as np


@dataclass
class RewardContext:
    """What the reward needs to know about one transition."""
    speed: float
    heading_error: float
    progress: float
    front_gap: float = None
    collided: bool = False
    off_road: bool = False
    success: bool = False
    lane_changed: bool = False
    smart_lane_change: bool = False


@dataclass
class RewardBreakdown:
    speed: float = 0.0
    safe_distance: float = 0.0
    lane_change: float = 0.0
    progress: float = 0.0
    heading: float = 0.0
    survival: float = 0.0
    collision: float = 0.0
    off_road: float = 0.0
    success: float = 0.0
    total: float = 0.0

    def as_dict(self):
        return asdict(self)


def speed_term(speed, speed_target):
    """1 inside the target band, falling linearly to 0 one band-width outside it."""
    lo, hi = speed_target
    if lo <= speed <= hi:
        return 1.0
    distance = lo - speed if speed < lo else speed - hi
    return max(0.0, 1.0 - distance / (hi - lo))


def safe_distance_term(front_gap, speed, config):
    """Penalty below the safe time headway, reward above it."""
    if front_gap is None:
        return config.safe_distance_reward
    headway = max(front_gap, 0.0) / max(speed, 1.0)
    if headway < config.safe_headway:
        return -config.safe_distance_penalty * (1.0 - headway / config.safe_headway)
    return config.safe_distance_reward


def lane_change_term(context, config):
    """
    Positive coefficients reward lane changes that open up the gap ahead and
    penalise the others; negative coefficients penalise every lane change.
    """
    if not context.lane_changed:
        return 0.0
    weight = config.lane_change_weight
    if weight > 0.0:
        return weight if context.smart_lane_change else -weight
    return weight


def reward_fn(config, context):
    """
    Compute the shaped reward of one step.

    Args:
        config (EnvConfig): Task configuration holding every coefficient
        context (RewardContext): Outcome of the step

    Returns:
        RewardBreakdown: Individual terms and the total
    """
    terms = RewardBreakdown()
    terms.speed = config.speed_weight * speed_term(context.speed, config.speed_target)
    terms.safe_distance = safe_distance_term(context.front_gap, context.speed, config)
    terms.lane_change = lane_change_term(context, config)
    max_progress = config.speed_target[1] * config.dt
    terms.progress = config.progress_weight * float(np.clip(context.progress / max_progress, -1.0, 1.0))
    terms.heading = config.heading_weight * math.cos(context.heading_error)
    failed = context.collided or context.off_road
    terms.survival = 0.0 if failed else config.survival_weight
    terms.collision = config.collision_penalty if context.collided else 0.0
    terms.off_road = config.off_road_penalty if context.off_road and not context.collided else 0.0
    terms.success = config.success_reward if context.success else 0.0

    shaped = (terms.speed + terms.safe_distance + terms.lane_change
              + terms.progress + terms.heading + terms.survival)
    terms.total = terms.collision + terms.off_road + terms.success + config.shaping_weight * shaped
    return terms
