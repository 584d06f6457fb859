"""State threaded between single acting steps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..rssm import LatentState


@dataclass
class Carry:
    state: LatentState
    action: np.ndarray  # previous action as fed to the encoder, (raw_action_dim,)


def initial_carry(model) -> Carry:
    """Zero state and zero action, as at the start of every episode."""
    return Carry(model.initial_state(), np.zeros(model.config.raw_action_dim))
