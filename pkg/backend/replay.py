"""
Episode Replay Module

Stores complete episodes with their cached trajectory energy, samples them
uniformly or proportionally to energy, and relabels goals with achieved
goals from strictly future timesteps (HER "future" strategy).
"""

import logging
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Callable, List, Optional, Tuple, Union

import numpy as np

from backend.energy import EnergyParams, ObjectState, trajectory_energy
from backend.per import SumTree
from backend.transitions import TransitionBatch
from utils.errors import EmptyBufferError, InvalidEpisodeError, NoFutureGoalError
from utils.helpers import export_to_jsonl, safe_divide

logger = logging.getLogger(__name__)

RewardFn = Callable[[np.ndarray, np.ndarray], Union[float, np.ndarray]]

STRATEGY_UNIFORM = "uniform"
STRATEGY_ENERGY = "energy"


@dataclass
class Episode:
    """
    One complete rollout.

    Attributes:
        observations (np.ndarray): (T + 1, obs_dim)
        actions (np.ndarray): (T, action_dim)
        rewards (np.ndarray): (T,), reward after each action, in {-1, 0}
        goal (np.ndarray): desired goal for the whole episode
        achieved_goals (List[ObjectState]): object state at t = 0 .. T
        goal_vectors (np.ndarray): (T + 1, goal_dim), achieved goals in goal space
        trajectory_energy (float): set once by the buffer on insertion
        insertion_index (int): monotone counter set by the buffer
    """

    observations: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    goal: np.ndarray
    achieved_goals: List[ObjectState]
    goal_vectors: np.ndarray
    trajectory_energy: Optional[float] = None
    insertion_index: Optional[int] = None

    @property
    def horizon(self) -> int:
        return len(self.actions)

    @property
    def success(self) -> bool:
        return bool(len(self.rewards) and self.rewards[-1] == 0)

    @property
    def episode_return(self) -> float:
        return float(np.sum(self.rewards))

    def validate(self) -> None:
        """
        Check that all per-step arrays agree on the horizon.

        Raises:
            InvalidEpisodeError: On any length mismatch or a horizon below 1
        """
        T = self.horizon
        if T < 1:
            raise InvalidEpisodeError("Episode must contain at least one transition")
        checks = {
            "observations": (len(self.observations), T + 1),
            "rewards": (len(self.rewards), T),
            "achieved_goals": (len(self.achieved_goals), T + 1),
            "goal_vectors": (len(self.goal_vectors), T + 1),
        }
        for name, (actual, expected) in checks.items():
            if actual != expected:
                raise InvalidEpisodeError(
                    f"Episode {name} has length {actual}, expected {expected} for {T} transitions"
                )
        if not np.all(np.isin(self.rewards, (-1.0, 0.0))):
            raise InvalidEpisodeError("Sparse rewards must be -1 or 0")


class ReplayBuffer:
    """
    FIFO ring of episodes with energy-proportional or uniform sampling.

    The running energy sum is accumulated exactly (rational arithmetic on
    the float energies); `energy_sum` is its correctly rounded float value.
    A sum-tree over slot energies gives O(log N) proportional draws.
    """

    def __init__(self, capacity: int, reward_fn: RewardFn, energy_params: EnergyParams,
                 strategy: str = STRATEGY_ENERGY):
        if capacity < 1:
            raise ValueError(f"Buffer capacity must be positive, got {capacity}")
        if strategy not in (STRATEGY_UNIFORM, STRATEGY_ENERGY):
            raise ValueError(f"Unknown sampling strategy: {strategy}")

        self.capacity = int(capacity)
        self.reward_fn = reward_fn
        self.energy_params = energy_params
        self.strategy = strategy
        self.episodes: List[Optional[Episode]] = [None] * self.capacity
        self.tree = SumTree(self.capacity)
        self.count = 0
        self.next_index = 0
        self._energy_sum = Fraction(0)
        self._fallback_logged = False

    def __len__(self) -> int:
        return self.count

    @property
    def energy_sum(self) -> float:
        return float(self._energy_sum)

    def insert(self, episode: Episode) -> Episode:
        """
        Compute and cache the episode energy, then store it.

        At capacity the oldest episode is evicted and its energy removed
        from the running sum.

        Raises:
            InvalidEpisodeError: If the episode arrays are inconsistent
        """
        episode.validate()
        episode.trajectory_energy = trajectory_energy(episode.achieved_goals, self.energy_params)
        episode.insertion_index = self.next_index

        slot = self.next_index % self.capacity
        evicted = self.episodes[slot]
        if evicted is not None:
            self._energy_sum -= Fraction(evicted.trajectory_energy)
            logger.debug(f"Evicted episode {evicted.insertion_index} (energy {evicted.trajectory_energy:.4f})")
        else:
            self.count += 1

        self.episodes[slot] = episode
        self.tree.update(slot, episode.trajectory_energy)
        self._energy_sum += Fraction(episode.trajectory_energy)
        self.next_index += 1

        if self._energy_sum > 0:
            self._fallback_logged = False
        return episode

    def stored_episodes(self) -> List[Episode]:
        """Stored episodes in insertion order (oldest first)."""
        stored = [ep for ep in self.episodes if ep is not None]
        return sorted(stored, key=lambda ep: ep.insertion_index)

    def energies(self) -> np.ndarray:
        return np.array([ep.trajectory_energy for ep in self.stored_episodes()], dtype=np.float64)

    def energy_stats(self) -> Tuple[float, float]:
        """Mean and max trajectory energy of stored episodes (0, 0 when empty)."""
        energies = self.energies()
        if energies.size == 0:
            return 0.0, 0.0
        return float(energies.mean()), float(energies.max())

    def uses_energy(self) -> bool:
        """True when draws follow the energy distribution rather than the uniform fallback."""
        return self.strategy == STRATEGY_ENERGY and self._energy_sum > 0

    def sampling_probabilities(self) -> np.ndarray:
        """Live sampling distribution over `stored_episodes()`."""
        if self.count == 0:
            raise EmptyBufferError("Replay buffer is empty")
        if not self.uses_energy():
            return np.full(self.count, 1.0 / self.count)
        energies = self.energies()
        return energies / energies.sum()

    def sample_slots(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Draw n buffer slots according to the active strategy."""
        if self.count == 0:
            raise EmptyBufferError("Cannot sample from an empty replay buffer")

        if self.uses_energy():
            total = self.tree.total
            prefixes = rng.uniform(0.0, total, size=n)
            prefixes = np.minimum(prefixes, np.nextafter(total, 0.0))
            return self.tree.find_prefix_indices(prefixes)

        if self.strategy == STRATEGY_ENERGY and not self._fallback_logged:
            logger.debug("Total trajectory energy is zero; sampling episodes uniformly")
            self._fallback_logged = True
        # slots fill in order, so the occupied ones are exactly [0, count)
        return rng.integers(0, self.count, size=n)

    def sample_episode(self, rng: np.random.Generator) -> Episode:
        return self.episodes[int(self.sample_slots(1, rng)[0])]

    def make_batch(self, batch_size: int, her_ratio: float, rng: np.random.Generator) -> TransitionBatch:
        """
        Assemble a minibatch: episode by strategy, timestep uniform, then
        with probability her_ratio a future achieved goal replaces the goal.

        Final transitions have no future goal and always keep the original.
        """
        if not 0.0 <= her_ratio <= 1.0:
            raise ValueError(f"her_ratio must be in [0, 1], got {her_ratio}")

        slots = self.sample_slots(batch_size, rng)
        first = self.episodes[int(slots[0])]
        obs_dim = first.observations.shape[1]
        action_dim = first.actions.shape[1]
        goal_dim = len(first.goal)

        observations = np.empty((batch_size, obs_dim))
        actions = np.empty((batch_size, action_dim))
        rewards = np.empty(batch_size)
        next_observations = np.empty((batch_size, obs_dim))
        goals = np.empty((batch_size, goal_dim))
        dones = np.zeros(batch_size, dtype=bool)
        relabeled = np.zeros(batch_size, dtype=bool)
        episode_indices = np.empty(batch_size, dtype=np.int64)
        timesteps = np.empty(batch_size, dtype=np.int64)

        for i, slot in enumerate(slots):
            episode = self.episodes[int(slot)]
            T = episode.horizon
            t = int(rng.integers(0, T))
            wants_relabel = rng.random() < her_ratio

            observations[i] = episode.observations[t]
            actions[i] = episode.actions[t]
            next_observations[i] = episode.observations[t + 1]
            dones[i] = t == T - 1
            episode_indices[i] = episode.insertion_index
            timesteps[i] = t

            if wants_relabel and t < T - 1:
                goals[i], rewards[i] = relabel_future(episode, t, rng, self.reward_fn)
                relabeled[i] = True
            else:
                goals[i] = episode.goal
                rewards[i] = episode.rewards[t]

        return TransitionBatch(observations, actions, rewards, next_observations, goals,
                               dones, relabeled, episode_indices, timesteps)

    def export_episode_log(self, path: Union[str, Path]) -> Path:
        """Write one JSON-lines record per stored episode."""
        records = [
            {
                "episode_index": ep.insertion_index,
                "trajectory_energy": ep.trajectory_energy,
                "success": ep.success,
                "return": ep.episode_return,
            }
            for ep in self.stored_episodes()
        ]
        written = export_to_jsonl(records, path)
        mean_energy = safe_divide(sum(r["trajectory_energy"] for r in records), len(records))
        logger.info(f"✓ Exported {len(records)} episodes (mean energy {mean_energy:.4f}) to {written}")
        return written


def relabel_future(episode: Episode, t: int, rng: np.random.Generator,
                   reward_fn: RewardFn) -> Tuple[np.ndarray, float]:
    """
    Replace the goal of transition t with an achieved goal from a strictly
    later timestep t' in (t, T - 1], drawn uniformly.

    Returns:
        Tuple[np.ndarray, float]: virtual goal g' and the recomputed reward
        r(achieved goal at t + 1, g')

    Raises:
        NoFutureGoalError: If t >= T - 1
    """
    T = episode.horizon
    if t < 0 or t >= T - 1:
        raise NoFutureGoalError(f"Timestep {t} has no future goal in an episode of length {T}")
    future = int(rng.integers(t + 1, T))
    virtual_goal = episode.goal_vectors[future].copy()
    reward = float(reward_fn(episode.goal_vectors[t + 1], virtual_goal))
    return virtual_goal, reward


def insert(buffer: ReplayBuffer, episode: Episode) -> ReplayBuffer:
    buffer.insert(episode)
    return buffer


def sample_episode(buffer: ReplayBuffer, rng: np.random.Generator) -> Episode:
    return buffer.sample_episode(rng)


def make_batch(buffer: ReplayBuffer, batch_size: int, her_ratio: float,
               rng: np.random.Generator) -> TransitionBatch:
    return buffer.make_batch(batch_size, her_ratio, rng)
