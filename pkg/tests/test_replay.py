import numpy as np
import pytest

from latent_drive.errors import CheckpointError, EmptyReplayError, UsageError
from latent_drive.replay import EpisodeRecord, ReplayQueue, dump_episodes, load_episodes


def make_episode(length, episode_id=0, action_dim=2):
    record = EpisodeRecord(episode_id=episode_id)
    for t in range(length):
        frame = np.full((64, 64, 3), t % 256, dtype=np.uint8)
        action = np.full(action_dim, t, dtype=np.float32) if t else np.zeros(action_dim, dtype=np.float32)
        record.add(frame, action, reward=float(t), continue_flag=0.0 if t == length - 1 else 1.0)
    return record.finalize()


def test_append_to_empty_queue():
    queue = ReplayQueue(capacity=100)
    episode = make_episode(5)
    queue.append(episode)
    assert len(queue) == 1
    assert queue.total == 5
    assert queue.episodes[0] is episode


def test_fifo_eviction_keeps_capacity():
    queue = ReplayQueue(capacity=100)
    for i in range(3):
        queue.append(make_episode(30, episode_id=i))
    assert queue.total == 90
    queue.append(make_episode(20, episode_id=3))
    assert queue.total <= 100
    assert [ep.episode_id for ep in queue.episodes] == [1, 2, 3]


def test_episode_longer_than_capacity_rejected():
    queue = ReplayQueue(capacity=10)
    queue.append(make_episode(6, episode_id=0))
    with pytest.raises(UsageError, match="capacity of 10"):
        queue.append(make_episode(12, episode_id=1))
    assert [ep.episode_id for ep in queue.episodes] == [0]
    assert queue.total == 6
    queue.append(make_episode(10, episode_id=2))
    assert [ep.episode_id for ep in queue.episodes] == [2]


def test_unfinalized_episode_rejected():
    queue = ReplayQueue(capacity=10)
    record = EpisodeRecord()
    record.add(np.zeros((64, 64, 3), dtype=np.uint8), np.zeros(2), 0.0, 1.0)
    with pytest.raises(UsageError):
        queue.append(record)
    record.finalize()
    with pytest.raises(UsageError):
        record.add(np.zeros((64, 64, 3), dtype=np.uint8), np.zeros(2), 0.0, 1.0)


def test_empty_queue_sampling_fails():
    queue = ReplayQueue(capacity=10)
    with pytest.raises(EmptyReplayError):
        queue.sample_sequences(2, 4, np.random.default_rng(0))
    with pytest.raises(EmptyReplayError):
        queue.sample_frames(2, np.random.default_rng(0))


def test_short_episodes_stored_but_never_sampled():
    queue = ReplayQueue(capacity=1000)
    queue.append(make_episode(10, episode_id=0))
    with pytest.raises(EmptyReplayError):
        queue.sample_sequences(1, 16, np.random.default_rng(0))
    assert len(queue) == 1


def test_exact_length_episode_is_sampled_whole():
    queue = ReplayQueue(capacity=1000)
    queue.append(make_episode(16))
    batch = queue.sample_sequences(3, 16, np.random.default_rng(0))
    assert batch.frames.shape == (3, 16, 64, 64, 3)
    assert batch.actions.shape == (3, 16, 2)
    for b in range(3):
        assert batch.rewards[b].tolist() == list(range(16))
    assert np.all(batch.actions[:, 0] == 0.0)


def test_sampling_offsets_cover_valid_range():
    queue = ReplayQueue(capacity=1000)
    queue.append(make_episode(10, episode_id=0))
    queue.append(make_episode(50, episode_id=1))
    rng = np.random.default_rng(0)
    starts = set()
    for _ in range(100):
        batch = queue.sample_sequences(100, 16, rng)
        starts.update(int(s) for s in batch.rewards[:, 0])
    assert starts == set(range(35))


def test_windows_are_contiguous():
    queue = ReplayQueue(capacity=1000)
    queue.append(make_episode(40))
    batch = queue.sample_sequences(8, 6, np.random.default_rng(1))
    assert np.all(np.diff(batch.rewards, axis=1) == 1.0)
    assert np.all(batch.frames[:, :, 0, 0, 0] == batch.rewards.astype(np.uint8))


def test_sample_frames():
    queue = ReplayQueue(capacity=1000)
    queue.append(make_episode(3, episode_id=0))
    queue.append(make_episode(4, episode_id=1))
    frames = queue.sample_frames(20, np.random.default_rng(0))
    assert frames.shape == (20, 64, 64, 3)
    assert set(np.unique(frames[:, 0, 0, 0])) <= {0, 1, 2, 3}


def test_episode_file_round_trip(tmp_path):
    path = str(tmp_path / 'episodes.bin')
    episodes = [make_episode(3, episode_id=7), make_episode(2, episode_id=8)]
    dump_episodes(path, episodes)
    loaded = load_episodes(path)
    assert [ep.episode_id for ep in loaded] == [7, 8]
    assert all(ep.finalized for ep in loaded)
    for original, restored in zip(episodes, loaded):
        for a, b in zip(original.transitions, restored.transitions):
            assert np.array_equal(a.observation, b.observation)
            assert np.array_equal(a.action, b.action)
            assert a.reward == b.reward
            assert a.continue_flag == b.continue_flag


def test_truncated_episode_file(tmp_path):
    path = tmp_path / 'episodes.bin'
    dump_episodes(str(path), [make_episode(3)])
    path.write_bytes(path.read_bytes()[:-100])
    with pytest.raises(CheckpointError, match='truncated'):
        load_episodes(str(path))


def test_episode_file_bad_magic(tmp_path):
    path = tmp_path / 'episodes.bin'
    path.write_bytes(b'NOPE' + b'\x00' * 8)
    with pytest.raises(CheckpointError, match='magic'):
        load_episodes(str(path))
