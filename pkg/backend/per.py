"""
Prioritized Replay Module

Sum-tree backed proportional sampling and the TD-error prioritized
transition store used as the HER + PER baseline.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from backend.transitions import TransitionBatch
from utils.constants import PER_ALPHA, PER_EPSILON
from utils.errors import EmptyBufferError, InvalidPriorityError, PrefixRangeError, TreeIndexError

logger = logging.getLogger(__name__)


def _next_power_of_two(n: int) -> int:
    capacity = 1
    while capacity < n:
        capacity *= 2
    return capacity


class SumTree:
    """
    Complete binary tree over a flat array of 2 * capacity - 1 nodes.

    Leaf i lives at node capacity - 1 + i; every internal node holds the sum
    of its two children. Capacity is rounded up to a power of two and unused
    leaves hold priority 0.
    """

    def __init__(self, capacity: int, rebuild_interval: int = 100_000):
        if capacity < 1:
            raise ValueError(f"SumTree capacity must be positive, got {capacity}")
        self.capacity = _next_power_of_two(int(capacity))
        self.depth = self.capacity.bit_length() - 1
        self.nodes = np.zeros(2 * self.capacity - 1, dtype=np.float64)
        self.rebuild_interval = rebuild_interval
        self._updates_since_rebuild = 0

    @property
    def total(self) -> float:
        return float(self.nodes[0])

    @property
    def leaves(self) -> np.ndarray:
        return self.nodes[self.capacity - 1:]

    def update(self, leaf_index: int, priority: float) -> None:
        """
        Set one leaf and refresh its ancestors.

        Ancestors are recomputed from their children rather than adjusted by
        a delta, so no drift accumulates between rebuilds.

        Raises:
            TreeIndexError: If leaf_index is outside [0, capacity)
            InvalidPriorityError: If priority is negative or non-finite
        """
        if not 0 <= leaf_index < self.capacity:
            raise TreeIndexError(f"Leaf index {leaf_index} outside [0, {self.capacity})")
        if not (np.isfinite(priority) and priority >= 0):
            raise InvalidPriorityError(f"Priority must be finite and >= 0, got {priority}")

        node = self.capacity - 1 + int(leaf_index)
        self.nodes[node] = priority
        while node > 0:
            node = (node - 1) // 2
            self.nodes[node] = self.nodes[2 * node + 1] + self.nodes[2 * node + 2]

        self._updates_since_rebuild += 1
        if self._updates_since_rebuild >= self.rebuild_interval:
            self.rebuild()

    def rebuild(self) -> None:
        """Recompute every internal node bottom-up from the leaves."""
        for node in range(self.capacity - 2, -1, -1):
            self.nodes[node] = self.nodes[2 * node + 1] + self.nodes[2 * node + 2]
        self._updates_since_rebuild = 0
        logger.debug(f"Rebuilt sum-tree with {self.capacity} leaves, total {self.total:.6g}")

    def find_prefix_indices(self, prefixes: np.ndarray) -> np.ndarray:
        """
        Vectorized prefix-sum descent.

        For each prefix v returns the leaf i with cumsum[0, i) <= v < cumsum[0, i].

        Raises:
            PrefixRangeError: If any prefix lies outside [0, total)
        """
        prefixes = np.atleast_1d(np.asarray(prefixes, dtype=np.float64))
        total = self.nodes[0]
        if prefixes.size and (np.any(prefixes < 0) or np.any(prefixes >= total)):
            raise PrefixRangeError(f"Prefix values must lie in [0, {total})")

        idx = np.zeros(prefixes.shape, dtype=np.int64)
        values = prefixes.copy()
        for _ in range(self.depth):
            left = 2 * idx + 1
            left_sum = self.nodes[left]
            go_right = values >= left_sum
            values = np.where(go_right, values - left_sum, values)
            idx = np.where(go_right, left + 1, left)

        leaves = idx - (self.capacity - 1)

        # float rounding near the right edge can land on an empty leaf
        empty = self.leaves[leaves] <= 0
        if np.any(empty):
            positive = np.flatnonzero(self.leaves > 0)
            pos = np.searchsorted(positive, leaves[empty], side="right") - 1
            leaves[empty] = positive[np.maximum(pos, 0)]
        return leaves

    def sample(self, prefix: float) -> int:
        """Leaf index selected by a single prefix value."""
        return int(self.find_prefix_indices(np.array([prefix]))[0])


def tree_update(tree: SumTree, leaf_index: int, new_priority: float) -> SumTree:
    tree.update(leaf_index, new_priority)
    return tree


def tree_sample(tree: SumTree, prefix_value: float) -> int:
    return tree.sample(prefix_value)


@dataclass(frozen=True)
class PerConfig:
    """Proportional PER hyperparameters."""

    alpha: float = PER_ALPHA
    epsilon: float = PER_EPSILON
    use_max_priority: bool = True

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError(f"PER alpha must be >= 0, got {self.alpha}")
        if not self.epsilon > 0:
            raise ValueError(f"PER epsilon must be > 0, got {self.epsilon}")


class PrioritizedTransitionBuffer:
    """
    Transition-level store sampled proportionally to (|delta| + eps) ** alpha.

    Transitions are written in ring order; when full the oldest slot and its
    priority are overwritten.
    """

    def __init__(self, capacity: int, obs_dim: int, action_dim: int, goal_dim: int,
                 config: Optional[PerConfig] = None):
        self.config = config or PerConfig()
        self.capacity = int(capacity)
        self.tree = SumTree(self.capacity)
        self.observations = np.zeros((self.capacity, obs_dim))
        self.actions = np.zeros((self.capacity, action_dim))
        self.rewards = np.zeros(self.capacity)
        self.next_observations = np.zeros((self.capacity, obs_dim))
        self.goals = np.zeros((self.capacity, goal_dim))
        self.dones = np.zeros(self.capacity, dtype=bool)
        self.relabeled = np.zeros(self.capacity, dtype=bool)
        self.cursor = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def max_leaf_priority(self) -> float:
        """Largest priority among stored transitions, 1 for an empty store."""
        if self.size == 0:
            return 1.0
        return float(self.tree.leaves[:self.size].max())

    def priority_of(self, td_errors: np.ndarray) -> np.ndarray:
        return (np.abs(td_errors) + self.config.epsilon) ** self.config.alpha

    def insert(self, observation, action, reward, next_observation, goal,
               done: bool = False, relabeled: bool = False) -> int:
        """
        Store one transition at the current max leaf priority (1 when empty).

        Returns:
            int: the slot written
        """
        slot = self.cursor
        priority = self.max_leaf_priority() if self.config.use_max_priority else 1.0
        self.observations[slot] = observation
        self.actions[slot] = action
        self.rewards[slot] = reward
        self.next_observations[slot] = next_observation
        self.goals[slot] = goal
        self.dones[slot] = done
        self.relabeled[slot] = relabeled

        self.tree.update(slot, priority)

        self.cursor = (self.cursor + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        return slot

    def update_priorities(self, indices: Sequence[int], td_errors: Sequence[float]) -> None:
        """
        Set leaf i to (|delta_i| + eps) ** alpha.

        Raises:
            InvalidPriorityError: If any TD error is non-finite
        """
        td_errors = np.asarray(td_errors, dtype=np.float64)
        if not np.all(np.isfinite(td_errors)):
            raise InvalidPriorityError("TD errors must be finite")
        priorities = self.priority_of(td_errors)
        for index, priority in zip(indices, priorities):
            if not 0 <= int(index) < self.size:
                raise TreeIndexError(f"Transition index {index} outside [0, {self.size})")
            self.tree.update(int(index), float(priority))

    def sample_indices(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        if self.size == 0:
            raise EmptyBufferError("Cannot sample from an empty prioritized buffer")
        total = self.tree.total
        prefixes = rng.uniform(0.0, total, size=batch_size)
        prefixes = np.minimum(prefixes, np.nextafter(total, 0.0))
        return self.tree.find_prefix_indices(prefixes)

    def sample(self, batch_size: int, rng: np.random.Generator):
        """
        Draw a proportional minibatch.

        Returns:
            Tuple[np.ndarray, TransitionBatch]: slot indices and the batch
        """
        idx = self.sample_indices(batch_size, rng)
        batch = TransitionBatch(
            observations=self.observations[idx],
            actions=self.actions[idx],
            rewards=self.rewards[idx],
            next_observations=self.next_observations[idx],
            goals=self.goals[idx],
            dones=self.dones[idx],
            relabeled=self.relabeled[idx],
        )
        return idx, batch


def per_insert(store: PrioritizedTransitionBuffer, transition) -> PrioritizedTransitionBuffer:
    """Insert a Transition into the prioritized store."""
    store.insert(transition.state, transition.action, transition.reward,
                 transition.next_state, transition.goal, transition.done)
    return store


def per_update_priorities(store: PrioritizedTransitionBuffer, indices: Sequence[int],
                          td_errors: Sequence[float]) -> PrioritizedTransitionBuffer:
    store.update_priorities(indices, td_errors)
    return store
