# envsim/__init__.py
"""
Driving micro-simulator: lane geometry, kinematics, traffic, rewards and the
bird's-eye-view rasteriser.
"""

from .env import DrivingEnv, StepResult, speed_setpoints
from .render import Observation, render_bev, write_ppm
from .rewards import RewardBreakdown, RewardContext, reward_fn
from .roads import Road, build_road
from .vehicles import VehicleState, bicycle_step, overlap

__all__ = [
    'DrivingEnv', 'StepResult', 'speed_setpoints',
    'Observation', 'render_bev', 'write_ppm',
    'RewardBreakdown', 'RewardContext', 'reward_fn',
    'Road', 'build_road',
    'VehicleState', 'bicycle_step', 'overlap',
]
