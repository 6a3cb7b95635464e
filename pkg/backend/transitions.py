"""
Transition Types Module

Single transitions and column-wise minibatches shared by the episode
buffer and the prioritized transition store.
"""

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np


class Transition(NamedTuple):
    """One (s || g, a, r, s' || g) step with a sparse reward in {-1, 0}."""

    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    goal: np.ndarray
    done: bool


@dataclass
class TransitionBatch:
    """Minibatch stored column-wise; row i is one sampled transition."""

    observations: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_observations: np.ndarray
    goals: np.ndarray
    dones: np.ndarray
    relabeled: np.ndarray
    episode_indices: Optional[np.ndarray] = None
    timesteps: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.rewards)
