import math

import numpy as np
import pandas as pd
import pytest
from scipy.stats import chisquare

from backend.energy import EnergyParams, ObjectState
from backend.replay import (
    STRATEGY_ENERGY,
    STRATEGY_UNIFORM,
    Episode,
    ReplayBuffer,
    insert,
    make_batch,
    relabel_future,
    sample_episode,
)
from utils.constants import EPISODE_LOG_COLUMNS
from utils.errors import EmptyBufferError, InvalidEpisodeError, NoFutureGoalError

TOLERANCE = 0.05
PARAMS = EnergyParams(e_tran_max=100.0)


def reward_fn(achieved, desired):
    distance = np.linalg.norm(np.asarray(achieved) - np.asarray(desired), axis=-1)
    reward = np.where(distance <= TOLERANCE, 0.0, -1.0)
    return float(reward) if np.ndim(reward) == 0 else reward


def make_episode(lift=0.0, T=4, x0=0.0, goal=(1.0, 1.0, 1.0)):
    """Object lifted by `lift` metres in the first step, then held; x moves 0.1 per step."""
    positions = []
    for t in range(T + 1):
        z = lift if t >= 1 else 0.0
        positions.append(np.array([x0 + 0.1 * t if lift else x0, 0.0, z]))
    states = [ObjectState(p) for p in positions]
    goal = np.asarray(goal, dtype=np.float64)
    goal_vectors = np.array(positions)
    rewards = np.array([reward_fn(goal_vectors[t + 1], goal) for t in range(T)])
    return Episode(
        observations=np.arange((T + 1) * 3, dtype=np.float64).reshape(T + 1, 3),
        actions=np.zeros((T, 2)),
        rewards=rewards,
        goal=goal,
        achieved_goals=states,
        goal_vectors=goal_vectors,
    )


def make_buffer(capacity=10, strategy=STRATEGY_ENERGY):
    return ReplayBuffer(capacity, reward_fn, PARAMS, strategy)


# -- insertion ---------------------------------------------------------------

def test_insert_into_empty_buffer():
    buffer = make_buffer()
    episode = insert(buffer, make_episode(0.1)).stored_episodes()[0]
    assert len(buffer) == 1
    assert episode.trajectory_energy > 0
    assert buffer.energy_sum == episode.trajectory_energy


def test_insert_at_capacity_evicts_oldest():
    buffer = make_buffer(capacity=3)
    for lift in (0.1, 0.2, 0.3, 0.4, 0.5):
        buffer.insert(make_episode(lift))
    stored = buffer.stored_episodes()
    assert len(buffer) == 3
    assert [ep.insertion_index for ep in stored] == [2, 3, 4]
    assert buffer.energy_sum == math.fsum(ep.trajectory_energy for ep in stored)


def test_energy_sum_exact_after_many_evictions():
    rng = np.random.default_rng(0)
    buffer = make_buffer(capacity=17)
    for _ in range(1_000):
        buffer.insert(make_episode(float(rng.uniform(0, 0.3)), T=int(rng.integers(2, 6))))
        assert buffer.energy_sum == math.fsum(buffer.energies())


def test_malformed_episode_rejected():
    episode = make_episode(0.1)
    episode.achieved_goals = episode.achieved_goals[:-1]
    with pytest.raises(InvalidEpisodeError):
        make_buffer().insert(episode)


def test_non_sparse_rewards_rejected():
    episode = make_episode(0.1)
    episode.rewards = episode.rewards * 0.5
    with pytest.raises(InvalidEpisodeError):
        make_buffer().insert(episode)


def test_energy_stats():
    buffer = make_buffer()
    assert buffer.energy_stats() == (0.0, 0.0)
    buffer.insert(make_episode(0.0))
    buffer.insert(make_episode(0.2))
    mean, peak = buffer.energy_stats()
    assert peak == buffer.energies().max()
    assert mean == pytest.approx(peak / 2)


# -- sampling distribution -----------------------------------------------------

def _frequencies_match(buffer, expected, draws=100_000, seed=0):
    rng = np.random.default_rng(seed)
    slots = buffer.sample_slots(draws, rng)
    counts = np.bincount(slots, minlength=len(expected))
    return chisquare(counts, draws * np.asarray(expected)).pvalue > 0.01


def test_probabilities_are_energy_proportional():
    buffer = make_buffer()
    for lift in (0.05, 0.1, 0.3):
        buffer.insert(make_episode(lift))
    energies = buffer.energies()
    np.testing.assert_allclose(buffer.sampling_probabilities(), energies / energies.sum(), rtol=1e-12)
    assert _frequencies_match(buffer, energies / energies.sum())


def test_probabilities_for_one_to_three_ratio():
    buffer = make_buffer()
    buffer.insert(make_episode(0.1))
    buffer.insert(make_episode(0.1))
    buffer.insert(make_episode(0.1))
    buffer.tree.update(0, 1.0)
    buffer.tree.update(1, 3.0)
    buffer.tree.update(2, 0.0)
    rng = np.random.default_rng(1)
    counts = np.bincount(buffer.sample_slots(100_000, rng), minlength=3)
    assert counts[2] == 0
    assert chisquare(counts[:2], 100_000 * np.array([0.25, 0.75])).pvalue > 0.01


def test_zero_energy_buffer_falls_back_to_uniform():
    buffer = make_buffer()
    for _ in range(3):
        buffer.insert(make_episode(0.0))
    assert buffer.energy_sum == 0.0
    np.testing.assert_allclose(buffer.sampling_probabilities(), [1 / 3, 1 / 3, 1 / 3])
    assert _frequencies_match(buffer, [1 / 3, 1 / 3, 1 / 3])


def test_uniform_strategy_ignores_energy():
    buffer = make_buffer(strategy=STRATEGY_UNIFORM)
    for lift in (0.0, 0.05, 0.3):
        buffer.insert(make_episode(lift))
    np.testing.assert_allclose(buffer.sampling_probabilities(), [1 / 3] * 3)
    assert _frequencies_match(buffer, [1 / 3] * 3)


def test_scaling_energies_leaves_probabilities_unchanged():
    energies = np.array([0.3, 1.7, 0.05, 2.0])
    base = energies / energies.sum()
    for c in (1e-3, 2.0, 1e4):
        scaled = energies * c
        np.testing.assert_allclose(scaled / scaled.sum(), base, rtol=1e-12)


def test_evicted_episodes_are_never_sampled():
    buffer = make_buffer(capacity=2)
    for lift in (0.3, 0.1, 0.2):
        buffer.insert(make_episode(lift))
    rng = np.random.default_rng(2)
    seen = {sample_episode(buffer, rng).insertion_index for _ in range(500)}
    assert seen == {1, 2}


def test_empty_buffer_cannot_sample():
    with pytest.raises(EmptyBufferError):
        make_buffer().sample_episode(np.random.default_rng(0))


# -- relabeling ---------------------------------------------------------------

def test_relabel_uses_strictly_future_goals():
    episode = make_episode(0.2, T=6)
    rng = np.random.default_rng(3)
    t = 1
    picks = []
    for _ in range(6_000):
        goal, reward = relabel_future(episode, t, rng, reward_fn)
        future = int(np.flatnonzero(np.all(episode.goal_vectors == goal, axis=1))[0])
        assert t < future <= episode.horizon - 1
        assert reward == reward_fn(episode.goal_vectors[t + 1], goal)
        picks.append(future)
    counts = np.bincount(picks, minlength=6)[2:6]
    assert chisquare(counts).pvalue > 0.01


def test_relabel_reward_examples():
    episode = make_episode(0.2, T=3)
    rng = np.random.default_rng(4)
    for _ in range(50):
        goal, reward = relabel_future(episode, 1, rng, reward_fn)
        # T = 3 leaves only t' = 2 = t + 1
        assert reward == 0.0
    episode = make_episode(0.2, T=6)
    while True:
        goal, reward = relabel_future(episode, 0, rng, reward_fn)
        if not np.array_equal(goal, episode.goal_vectors[1]):
            break
    assert reward == -1.0


@pytest.mark.parametrize("t", [3, 4, -1])
def test_relabel_without_future_raises(t):
    with pytest.raises(NoFutureGoalError):
        relabel_future(make_episode(0.1, T=4), t, np.random.default_rng(0), reward_fn)


def test_her_ratio_zero_keeps_original_goals():
    buffer = make_buffer()
    buffer.insert(make_episode(0.1))
    batch = make_batch(buffer, 500, 0.0, np.random.default_rng(5))
    assert not batch.relabeled.any()
    np.testing.assert_array_equal(batch.goals, np.tile([1.0, 1.0, 1.0], (500, 1)))


def test_her_ratio_one_relabels_every_non_final_transition():
    buffer = make_buffer()
    buffer.insert(make_episode(0.1))
    batch = buffer.make_batch(500, 1.0, np.random.default_rng(6))
    final = batch.timesteps == 3
    assert batch.relabeled[~final].all()
    assert not batch.relabeled[final].any()
    assert batch.dones[final].all()


def test_her_ratio_fraction_within_three_sigma():
    buffer = make_buffer()
    for lift in (0.1, 0.2):
        buffer.insert(make_episode(lift))
    batch = buffer.make_batch(10_000, 0.8, np.random.default_rng(7))
    eligible = batch.timesteps < 3
    n = int(eligible.sum())
    fraction = batch.relabeled[eligible].mean()
    assert abs(fraction - 0.8) <= 3 * math.sqrt(0.8 * 0.2 / n)


def test_relabeled_rewards_match_reward_function():
    buffer = make_buffer()
    for lift in (0.1, 0.2, 0.3):
        buffer.insert(make_episode(lift, T=5))
    batch = buffer.make_batch(2_000, 0.8, np.random.default_rng(8))
    episodes = {ep.insertion_index: ep for ep in buffer.stored_episodes()}
    for i in range(len(batch)):
        episode = episodes[int(batch.episode_indices[i])]
        achieved = episode.goal_vectors[int(batch.timesteps[i]) + 1]
        assert batch.rewards[i] == reward_fn(achieved, batch.goals[i])


def test_batch_rows_come_from_the_sampled_timestep():
    buffer = make_buffer()
    buffer.insert(make_episode(0.1))
    batch = buffer.make_batch(200, 0.5, np.random.default_rng(9))
    for obs, next_obs, t in zip(batch.observations, batch.next_observations, batch.timesteps):
        np.testing.assert_array_equal(obs, np.arange(3 * t, 3 * t + 3))
        np.testing.assert_array_equal(next_obs, np.arange(3 * t + 3, 3 * t + 6))


def test_invalid_her_ratio_rejected():
    buffer = make_buffer()
    buffer.insert(make_episode(0.1))
    with pytest.raises(ValueError):
        buffer.make_batch(4, 1.5, np.random.default_rng(0))


# -- export ---------------------------------------------------------------------

def test_export_episode_log(tmp_path):
    buffer = make_buffer()
    for lift in (0.0, 0.1):
        buffer.insert(make_episode(lift))
    path = buffer.export_episode_log(tmp_path / "episodes.jsonl")
    df = pd.read_json(path, lines=True)
    assert list(df.columns) == EPISODE_LOG_COLUMNS
    assert df["episode_index"].tolist() == [0, 1]
    assert df["trajectory_energy"].tolist() == pytest.approx(buffer.energies().tolist())
    assert df["return"].tolist() == [-4.0, -4.0]
