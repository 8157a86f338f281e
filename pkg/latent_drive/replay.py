# replay.py
"""
Bounded episodic replay.

Completed episodes are appended whole and evicted oldest-first when the
stored transition count would exceed capacity. Training samples fixed-length
contiguous windows from inside a single episode.

Each transition holds the frame o_t, the action that led to it (zeros at
reset), the reward received on arriving at o_t and the continue flag
(0 only on a terminal arrival).
"""
import struct
import threading
from collections import deque
from dataclasses import dataclass, field
from typing import List

import numpy as np

from .constants import EPISODE_MAGIC, EPISODE_VERSION, IMAGE_CHANNELS, IMAGE_SIZE
from .errors import CheckpointError, EmptyReplayError, UsageError
from .utils import log_error, log_info


@dataclass
class Transition:
    observation: np.ndarray  # (64, 64, 3) uint8
    action: np.ndarray  # encoded action vector, float32
    reward: float
    continue_flag: float


@dataclass
class EpisodeRecord:
    transitions: List[Transition] = field(default_factory=list)
    episode_id: int = 0
    finalized: bool = False

    @property
    def length(self):
        return len(self.transitions)

    def add(self, observation, action, reward, continue_flag):
        if self.finalized:
            raise UsageError(f"Episode {self.episode_id} is finalized")
        self.transitions.append(Transition(
            observation=np.asarray(observation, dtype=np.uint8),
            action=np.asarray(action, dtype=np.float32),
            reward=float(reward),
            continue_flag=float(continue_flag),
        ))

    def finalize(self):
        self.finalized = True
        # stack once so sampling is plain slicing
        self._frames = np.stack([t.observation for t in self.transitions]) if self.transitions else None
        self._actions = np.stack([t.action for t in self.transitions]) if self.transitions else None
        self._rewards = np.array([t.reward for t in self.transitions], dtype=np.float32)
        self._continues = np.array([t.continue_flag for t in self.transitions], dtype=np.float32)
        return self

    def window(self, start, length):
        end = start + length
        return (self._frames[start:end], self._actions[start:end],
                self._rewards[start:end], self._continues[start:end])


@dataclass
class SequenceBatch:
    """B windows of T steps each."""
    frames: np.ndarray  # (B, T, 64, 64, 3) uint8
    actions: np.ndarray  # (B, T, A)
    rewards: np.ndarray  # (B, T)
    continues: np.ndarray  # (B, T)


class ReplayQueue:
    """
    FIFO of finalized episodes bounded by total transitions.

    One writer, many readers: append/evict take the lock, sampling takes the
    same lock so it never observes a half-evicted queue.
    """

    def __init__(self, capacity=100000, min_length=16):
        if capacity < 1:
            raise UsageError("Replay capacity must be >= 1")
        self.capacity = int(capacity)
        self.min_length = int(min_length)
        self.episodes = deque()
        self.total = 0
        self._lock = threading.Lock()

    def __len__(self):
        return len(self.episodes)

    def append(self, episode):
        """
        Store a finalized episode, evicting whole episodes from the front
        until the capacity bound holds.
        """
        if not episode.finalized:
            raise UsageError(f"Episode {episode.episode_id} must be finalized before it is stored")
        if episode.length > self.capacity:
            raise UsageError(f"Episode {episode.episode_id} has {episode.length} transitions, "
                             f"more than the replay capacity of {self.capacity}")
        with self._lock:
            self.episodes.append(episode)
            self.total += episode.length
            while self.total > self.capacity and self.episodes:
                evicted = self.episodes.popleft()
                self.total -= evicted.length

    def eligible(self, length=None):
        length = self.min_length if length is None else length
        return [ep for ep in self.episodes if ep.length >= length]

    def sample_sequences(self, batch, length, rng):
        """
        Draw `batch` contiguous windows of `length` transitions.

        Args:
            batch (int): B
            length (int): T
            rng (numpy.random.Generator): Source of episode and offset choices

        Returns:
            SequenceBatch
        """
        with self._lock:
            candidates = self.eligible(length)
            if not candidates:
                raise EmptyReplayError(f"No stored episode has at least {length} transitions")
            windows = []
            for _ in range(batch):
                episode = candidates[int(rng.integers(len(candidates)))]
                start = int(rng.integers(episode.length - length + 1))
                windows.append(episode.window(start, length))
        frames, actions, rewards, continues = (np.stack(parts) for parts in zip(*windows))
        return SequenceBatch(frames=frames, actions=actions, rewards=rewards, continues=continues)

    def sample_frames(self, count, rng):
        """Single frames drawn uniformly over stored transitions, for encoder pretraining."""
        with self._lock:
            if self.total == 0:
                raise EmptyReplayError("Replay queue is empty")
            lengths = np.array([ep.length for ep in self.episodes])
            flat = rng.integers(self.total, size=count)
            bounds = np.cumsum(lengths)
            frames = []
            for index in flat:
                ep_index = int(np.searchsorted(bounds, index, side='right'))
                offset = int(index - (bounds[ep_index] - lengths[ep_index]))
                frames.append(self.episodes[ep_index]._frames[offset])
        return np.stack(frames)


# ----------------------------------------------------------------------
# Episode container
# ----------------------------------------------------------------------
_HEADER = struct.Struct('<4sII')  # magic, version, episode count
_EPISODE = struct.Struct('<qII')  # episode id, transition count, action width
_STEP = struct.Struct('<ff')  # reward, continue flag
_FRAME_BYTES = IMAGE_SIZE * IMAGE_SIZE * IMAGE_CHANNELS


def dump_episodes(path, episodes):
    """
    Write episodes as a little-endian HWEP container.

    Layout: header, then per episode (id, count, action width) followed by
    `count` records of (reward, continue, action floats, frame bytes).
    """
    episodes = list(episodes)
    try:
        with open(path, 'wb') as handle:
            handle.write(_HEADER.pack(EPISODE_MAGIC, EPISODE_VERSION, len(episodes)))
            for episode in episodes:
                width = int(episode.transitions[0].action.size) if episode.transitions else 0
                handle.write(_EPISODE.pack(episode.episode_id, episode.length, width))
                for t in episode.transitions:
                    handle.write(_STEP.pack(t.reward, t.continue_flag))
                    handle.write(np.asarray(t.action, dtype='<f4').tobytes())
                    handle.write(np.ascontiguousarray(t.observation, dtype=np.uint8).tobytes())
    except OSError as e:
        log_error(f"Error writing episodes to {path}: {str(e)}")
        raise CheckpointError(f"Cannot write episode file {path}: {e}")
    log_info(f"Wrote {len(episodes)} episodes to {path}")


def _read(handle, size, path):
    data = handle.read(size)
    if len(data) != size:
        raise CheckpointError(f"Episode file {path} is truncated")
    return data


def load_episodes(path):
    """Read a HWEP container back into finalized EpisodeRecords."""
    try:
        with open(path, 'rb') as handle:
            magic, version, count = _HEADER.unpack(_read(handle, _HEADER.size, path))
            if magic != EPISODE_MAGIC:
                raise CheckpointError(f"{path} is not an episode file (magic {magic!r})")
            if version != EPISODE_VERSION:
                raise CheckpointError(f"Unsupported episode file version {version} in {path}")
            episodes = []
            for _ in range(count):
                episode_id, length, width = _EPISODE.unpack(_read(handle, _EPISODE.size, path))
                record = EpisodeRecord(episode_id=episode_id)
                for _ in range(length):
                    reward, cont = _STEP.unpack(_read(handle, _STEP.size, path))
                    action = np.frombuffer(_read(handle, 4 * width, path), dtype='<f4').astype(np.float32)
                    frame = np.frombuffer(_read(handle, _FRAME_BYTES, path), dtype=np.uint8)
                    record.add(frame.reshape(IMAGE_SIZE, IMAGE_SIZE, IMAGE_CHANNELS), action, reward, cont)
                episodes.append(record.finalize())
    except OSError as e:
        log_error(f"Error reading episodes from {path}: {str(e)}")
        raise CheckpointError(f"Cannot read episode file {path}: {e}")
    return episodes
