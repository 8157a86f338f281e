import math

import numpy as np
import pytest

from latent_drive.encoder import JepaEncoder
from latent_drive.errors import NumericError, UsageError
from latent_drive.metrics import (
    EvalRecord, average_reward, collision_rate, episode_features, fid_over_frames, format_report_table,
    frechet_distance, frechet_from_moments, fvd_over_rollouts, off_road_rate, report_frame, success_rate,
)


def records(sums, collided=None, success=None):
    collided = collided or [False] * len(sums)
    success = success or [False] * len(sums)
    return [EvalRecord(episode_id=i, reward_sum=s, collided=c, length=10, success=ok)
            for i, (s, c, ok) in enumerate(zip(sums, collided, success))]


def test_average_reward():
    assert average_reward(records([6.0])) == (6.0, 0.0)
    mean, std = average_reward(records([1.0, 3.0]))
    assert mean == 2.0
    assert std == pytest.approx(math.sqrt(2.0))


def test_collision_rate():
    assert collision_rate(records([0] * 4, collided=[True, False, False, True])) == (0.5, 0.5)
    assert collision_rate(records([0] * 3)) == (0.0, 0.0)
    assert collision_rate(records([0], collided=[True])) == (1.0, 0.0)


def test_success_rate():
    mean, _ = success_rate(records([0] * 4, success=[True, True, True, False]))
    assert mean == 0.75


def test_off_road_rate_excludes_collisions():
    recs = records([0] * 4, collided=[False, False, True, False])
    recs[0].off_road = True
    recs[2].off_road = True
    mean, std = off_road_rate(recs)
    assert mean == 0.25
    assert std == pytest.approx(math.sqrt(0.1875))
    assert collision_rate(recs)[0] == 0.25


def test_empty_record_lists_rejected():
    for metric in (average_reward, collision_rate, success_rate, off_road_rate):
        with pytest.raises(UsageError):
            metric([])


def test_frechet_closed_forms():
    assert frechet_from_moments([0.0], [[1.0]], [1.0], [[1.0]]) == pytest.approx(1.0, abs=1e-6)
    assert frechet_from_moments([0.0], [[1.0]], [0.0], [[4.0]]) == pytest.approx(1.0, abs=1e-5)


def test_frechet_self_distance_and_symmetry():
    rng = np.random.default_rng(0)
    real = rng.normal(size=(200, 4))
    gen = rng.normal(loc=0.5, scale=2.0, size=(150, 4))
    assert abs(frechet_distance(real, real)) < 1e-6
    assert frechet_distance(real, gen) == pytest.approx(frechet_distance(gen, real), rel=1e-6)
    assert frechet_distance(real, gen) > 0.0


def test_frechet_errors():
    with pytest.raises(UsageError):
        frechet_distance(np.zeros((5, 3)), np.zeros((5, 4)))
    with pytest.raises(UsageError):
        frechet_distance(np.zeros((1, 3)), np.zeros((5, 3)))
    with pytest.raises(NumericError):
        frechet_from_moments([0.0], [[np.inf]], [0.0], [[1.0]])


def test_fvd_of_identical_rollouts_is_zero():
    rng = np.random.default_rng(1)
    episodes = [rng.normal(size=(16, 3)) for _ in range(6)]
    assert abs(fvd_over_rollouts(episodes, episodes)) < 1e-6
    assert episode_features(episodes).shape == (6, 3)
    with pytest.raises(UsageError):
        fvd_over_rollouts([], episodes)


def test_frame_distances_use_the_encoder(small_encoder_config, random_frames):
    encoder = JepaEncoder(small_encoder_config)
    assert abs(fid_over_frames(random_frames, random_frames, encoder)) < 1e-6
    clips = [random_frames[:2], random_frames[2:]]
    assert episode_features(clips, encoder).shape == (2, 8)
    with pytest.raises(UsageError):
        episode_features(clips)


def test_report_frame_and_table():
    report = report_frame('highway', records([1.0, 3.0], collided=[True, False]))
    assert list(report.columns) == ['env', 'metric', 'mean', 'std', 'episodes']
    assert list(report['metric']) == ['collision_rate', 'average_reward', 'success_rate', 'off_road_rate']
    row = report.set_index('metric').loc['average_reward']
    assert row['mean'] == 2.0 and row['episodes'] == 2
    table = format_report_table(report)
    assert 'Collision rate' in table
    assert '0.500 ± 0.500' in table
    assert 'Off-road rate' in table
