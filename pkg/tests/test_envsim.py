import copy

import numpy as np
import pytest

from latent_drive.config import EnvConfig
from latent_drive.constants import BEV_COLORS, META_ACTIONS
from latent_drive.envsim import (
    DrivingEnv, RewardContext, VehicleState, bicycle_step, overlap, render_bev, reward_fn, speed_setpoints,
)
from latent_drive.envsim.env import FASTER, IDLE, LANE_LEFT
from latent_drive.envsim.roads import CircularLane
from latent_drive.errors import ConfigurationError, UsageError


def _pixels(image, colour):
    return np.all(image == np.array(colour, dtype=np.uint8), axis=-1)


def _clear_highway(**overrides):
    env = DrivingEnv(EnvConfig.for_task('highway', **overrides))
    env.reset(seed=0)
    env.traffic = []
    return env


def test_task_defaults():
    highway = EnvConfig.for_task('highway')
    assert highway.action_space == 'continuous'
    assert highway.time_limit == 200
    assert highway.collision_penalty == -5.0
    merge = EnvConfig.for_task('merge')
    assert merge.action_space == 'discrete'
    assert merge.success_reward == 0.8
    assert EnvConfig.for_task('roundabout').speed_target == (8.0, 15.0)
    with pytest.raises(ConfigurationError):
        EnvConfig.for_task('parking')


def test_same_seed_gives_identical_episodes():
    def run():
        env = DrivingEnv(EnvConfig.for_task('highway', vehicle_count=10))
        rng = np.random.default_rng(5)
        frames = [env.reset(seed=11).image]
        rewards = []
        for _ in range(15):
            result = env.step(env.sample_action(rng))
            frames.append(result.observation.image)
            rewards.append(result.reward)
            if result.terminated or result.truncated:
                break
        return np.stack(frames), rewards

    frames_a, rewards_a = run()
    frames_b, rewards_b = run()
    assert frames_a.tobytes() == frames_b.tobytes()
    assert rewards_a == rewards_b


def test_highway_spawns_fifty_vehicles():
    env = DrivingEnv(EnvConfig.for_task('highway'))
    env.reset(seed=0)
    assert len(env.traffic) == 50


def test_roundabout_ego_on_approach_arm():
    env = DrivingEnv(EnvConfig.for_task('roundabout'))
    env.reset(seed=0)
    assert env.ego.lane_id == 10
    assert any(isinstance(lane, CircularLane) for lane in env.road.lanes.values())


def test_reset_observation_shape():
    env = DrivingEnv(EnvConfig.for_task('merge'))
    obs = env.reset(seed=0)
    assert obs.image.shape == (64, 64, 3)
    assert obs.image.dtype == np.uint8
    assert obs.step_index == 0


def test_bicycle_straight_line():
    vehicle = VehicleState(x=0.0, y=0.0, heading=0.0, speed=10.0)
    bicycle_step(vehicle, 0.0, 0.0, 0.1)
    assert vehicle.x == pytest.approx(1.0)
    assert vehicle.y == 0.0
    assert vehicle.speed == 10.0


def test_ego_advances_along_heading():
    env = _clear_highway()
    x0, y0, v0 = env.ego.x, env.ego.y, env.ego.speed
    result = env.step([0.0, 0.0])
    assert env.ego.x == pytest.approx(x0 + v0 * env.config.dt)
    assert env.ego.y == y0
    assert not result.collided


def test_overlap_ends_highway_episode_with_penalty():
    env = DrivingEnv(EnvConfig.for_task('highway'))
    env.reset(seed=0)
    ego = env.ego
    blocker = VehicleState(x=ego.x + 3.0, y=ego.y, heading=ego.heading, speed=ego.speed,
                           lane_id=ego.lane_id, target_lane=ego.lane_id, target_speed=ego.speed)
    env.traffic = [blocker]
    result = env.step([0.0, 0.0])
    assert result.collided
    assert result.terminated
    assert result.info['reward_terms']['collision'] == -5.0
    with pytest.raises(UsageError):
        env.step([0.0, 0.0])


def test_highway_truncates_at_time_limit():
    env = _clear_highway()
    for step in range(200):
        result = env.step([0.0, 0.0])
        if step < 199:
            assert not (result.terminated or result.truncated)
    assert result.truncated
    assert not result.terminated
    assert result.success


def test_rewards_stay_inside_bound():
    config = EnvConfig.for_task('highway', vehicle_count=20)
    bound = config.terminal_penalty() + config.success_reward + config.shaping_weight * config.shaping_magnitude()
    env = DrivingEnv(config)
    env.reset(seed=3)
    rng = np.random.default_rng(3)
    for _ in range(50):
        result = env.step(env.sample_action(rng))
        assert abs(result.reward) <= bound
        if result.terminated or result.truncated:
            break


def test_reward_terms_for_highway_lane_keeping():
    config = EnvConfig.for_task('highway')
    terms = reward_fn(config, RewardContext(speed=25.0, heading_error=0.0, progress=2.5))
    assert terms.speed == config.speed_weight
    assert terms.safe_distance == 0.0
    assert terms.collision == 0.0
    assert terms.lane_change == 0.0


def test_reward_success_and_collision_terms():
    merge = EnvConfig.for_task('merge')
    terms = reward_fn(merge, RewardContext(speed=22.0, heading_error=0.0, progress=2.0, success=True))
    assert terms.success == 0.8
    roundabout = EnvConfig.for_task('roundabout')
    terms = reward_fn(roundabout, RewardContext(speed=10.0, heading_error=0.0, progress=1.0, collided=True))
    assert terms.collision == -1.0
    assert terms.survival == 0.0


def test_discrete_actions():
    env = DrivingEnv(EnvConfig.for_task('merge'))
    env.reset(seed=0)
    vector = env.encode_action(FASTER)
    assert vector.tolist() == [0.0, 0.0, 0.0, 1.0, 0.0]
    assert env.decode_action(vector) == FASTER
    result = env.step(LANE_LEFT)
    assert result.info['lane_id'] == 1
    with pytest.raises(UsageError, match='LANE_LEFT, IDLE, LANE_RIGHT, FASTER, SLOWER'):
        env.step(7)
    assert env.action_dim == len(META_ACTIONS) == 5


def test_speed_setpoints():
    assert speed_setpoints((20.0, 28.0)) == [15.0, 20.0, 24.0, 28.0]
    assert speed_setpoints((3.0, 5.0))[0] == 0.0


def test_continuous_action_validation():
    env = _clear_highway()
    with pytest.raises(UsageError):
        env.step([0.0])
    with pytest.raises(UsageError):
        env.step([float('nan'), 0.0])


def test_empty_road_renders_no_traffic():
    env = _clear_highway()
    image = render_bev(env.road, env.ego, [], 0).image
    assert not _pixels(image, BEV_COLORS['traffic']).any()
    assert _pixels(image, BEV_COLORS['ego']).any()
    assert _pixels(image, BEV_COLORS['road']).any()


def test_render_is_pure_and_clips_far_vehicles():
    env = _clear_highway()
    ego_before = copy.deepcopy(env.ego)
    a = render_bev(env.road, env.ego, env.traffic, env.step_index).image
    b = render_bev(env.road, copy.deepcopy(env.ego), [], env.step_index).image
    assert vars(env.ego) == vars(ego_before)
    assert np.array_equal(a, b)
    far = VehicleState(x=env.ego.x + 500.0, y=env.ego.y, heading=0.0, speed=20.0)
    c = render_bev(env.road, env.ego, [far], 0).image
    assert np.array_equal(a, c)


def test_overlap_separating_axis():
    a = VehicleState(x=0.0, y=0.0, heading=0.0, speed=0.0)
    assert overlap(a, VehicleState(x=4.0, y=0.0, heading=0.0, speed=0.0))
    assert not overlap(a, VehicleState(x=0.0, y=4.0, heading=0.0, speed=0.0))


def test_leaving_the_road_ends_episode_without_collision():
    env = _clear_highway()
    env.ego.y = 20.0
    result = env.step([0.0, 0.0])
    assert result.off_road
    assert not result.collided
    assert result.terminated
    assert not result.success
    terms = result.info['reward_terms']
    assert terms['off_road'] == env.config.off_road_penalty
    assert terms['collision'] == 0.0
    assert terms['survival'] == 0.0


def test_overlap_off_road_pays_only_the_collision_penalty():
    config = EnvConfig.for_task('highway', off_road_penalty=-2.0)
    terms = reward_fn(config, RewardContext(speed=25.0, heading_error=0.0, progress=0.0,
                                            collided=True, off_road=True))
    assert terms.collision == -5.0
    assert terms.off_road == 0.0
    terms = reward_fn(config, RewardContext(speed=25.0, heading_error=0.0, progress=0.0, off_road=True))
    assert terms.off_road == -2.0
    assert config.terminal_penalty() == 5.0
    with pytest.raises(ConfigurationError):
        EnvConfig.for_task('highway', off_road_penalty=1.0)


@pytest.mark.parametrize('lanes_count', [1, 2, 3])
def test_merge_ramp_follows_lane_count(lanes_count):
    env = DrivingEnv(EnvConfig.for_task('merge', lanes_count=lanes_count))
    env.reset(seed=0)
    assert env.road.ramp_lane == lanes_count
    assert env.ego.lane_id == lanes_count
    assert env.road.main_lanes == tuple(range(lanes_count))
    result = env.step(IDLE)
    assert not result.off_road
    assert not result.collided


def test_merge_ramp_barrier_with_three_lanes():
    env = DrivingEnv(EnvConfig.for_task('merge', lanes_count=3))
    env.reset(seed=0)
    env.traffic = []
    env.ego.x = 205.0
    result = env.step(IDLE)
    assert result.off_road
    assert not result.collided
    assert result.terminated
