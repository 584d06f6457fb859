"""FIFO store of whole episodes, sampled as contiguous windows."""

from __future__ import annotations

from collections import deque

import numpy as np

from ..batch import SequenceBatch
from ..ndgrad import ContractError
from ..worlds.recording import Episode


class SequenceReplay:
    """Holds up to ``capacity`` episodes; the oldest is dropped first."""

    def __init__(self, seq_len: int, capacity: int = 10_000):
        if seq_len < 1 or capacity < 1:
            raise ContractError("seq_len and capacity must be positive")
        self.seq_len = seq_len
        self.capacity = capacity
        self.episodes: deque[Episode] = deque()

    def __len__(self) -> int:
        return len(self.episodes)

    @property
    def steps(self) -> int:
        return sum(ep.steps for ep in self.episodes)

    def push(self, episode: Episode) -> None:
        if episode.steps < self.seq_len:
            raise ContractError(f"episode of {episode.steps} steps is shorter than the window {self.seq_len}")
        self.episodes.append(episode)
        while len(self.episodes) > self.capacity:
            self.episodes.popleft()

    def window_index(self) -> np.ndarray:
        """(episode, offset) for every valid window, in storage order."""
        pairs = [(i, k) for i, ep in enumerate(self.episodes) for k in range(ep.steps - self.seq_len + 1)]
        return np.array(pairs, dtype=np.int64).reshape(-1, 2)

    def sample(self, n: int, rng: np.random.Generator, seq_len: int | None = None) -> SequenceBatch:
        """``n`` windows drawn uniformly (with replacement) over all (episode, offset) pairs."""
        t = seq_len or self.seq_len
        if not self.episodes:
            raise ContractError("cannot sample from an empty buffer")
        if t > self.seq_len:
            raise ContractError("window longer than the buffer's guaranteed episode length")
        counts = np.array([ep.steps - t + 1 for ep in self.episodes])
        flat = rng.integers(0, counts.sum(), size=n)
        ep_idx = np.searchsorted(np.cumsum(counts), flat, side="right")
        offsets = flat - np.concatenate([[0], np.cumsum(counts)[:-1]])[ep_idx]
        obs, acts, rews = [], [], []
        for i, k in zip(ep_idx, offsets):
            ep = self.episodes[int(i)]
            obs.append(ep.observations[k:k + t])
            acts.append(ep.actions[k:k + t])
            rews.append(ep.rewards[k:k + t])
        return SequenceBatch(np.stack(obs), np.stack(acts), np.stack(rews))
