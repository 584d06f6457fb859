"""Sequence batches shared by the loss, the views and the agents."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ndgrad import ContractError


@dataclass
class SequenceBatch:
    """N windows of length T. ``observations`` is ``(N, T, *obs_shape)``,
    ``actions`` ``(N, T, action_dim)``, ``rewards`` ``(N, T)``."""

    observations: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    old_states: np.ndarray | None = None

    def __post_init__(self):
        n, t = self.observations.shape[:2]
        if self.actions.shape[:2] != (n, t) or self.rewards.shape != (n, t):
            raise ContractError("observations, actions and rewards are not aligned")
        if not np.all(np.isfinite(self.rewards)):
            raise ContractError("non-finite rewards")
        if self.old_states is not None and self.old_states.shape[:2] != (n, t):
            raise ContractError("old_states are not aligned")

    @property
    def n(self) -> int:
        return self.observations.shape[0]

    @property
    def t(self) -> int:
        return self.observations.shape[1]

    def replace(self, **kw) -> "SequenceBatch":
        d = dict(observations=self.observations, actions=self.actions,
                 rewards=self.rewards, old_states=self.old_states)
        d.update(kw)
        return SequenceBatch(**d)
