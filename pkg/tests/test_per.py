import numpy as np
import pytest
from scipy.stats import chisquare

from backend.per import (
    PerConfig,
    PrioritizedTransitionBuffer,
    SumTree,
    per_insert,
    per_update_priorities,
    tree_sample,
    tree_update,
)
from backend.transitions import Transition
from utils.errors import EmptyBufferError, InvalidPriorityError, PrefixRangeError, TreeIndexError


def _tree(priorities):
    tree = SumTree(len(priorities))
    for i, p in enumerate(priorities):
        tree_update(tree, i, p)
    return tree


def _store(n, config=None):
    store = PrioritizedTransitionBuffer(n, obs_dim=2, action_dim=1, goal_dim=1, config=config)
    for i in range(n):
        store.insert([i, i], [0.0], -1.0, [i + 1, i + 1], [0.0])
    return store


# -- sum-tree ----------------------------------------------------------------

def test_single_leaf_sets_root():
    tree = SumTree(4)
    tree.update(0, 1.0)
    assert tree.total == 1.0


def test_root_tracks_updates():
    tree = _tree([1, 2, 3, 4])
    assert tree.total == 10
    tree.update(2, 0.0)
    assert tree.total == 7


def test_capacity_rounds_to_power_of_two():
    tree = SumTree(5)
    assert tree.capacity == 8
    assert np.all(tree.leaves[5:] == 0)


@pytest.mark.parametrize("prefix,leaf", [(3.5, 2), (0.0, 0), (0.999, 0), (1.0, 1), (9.999, 3)])
def test_prefix_search_examples(prefix, leaf):
    assert tree_sample(_tree([1, 2, 3, 4]), prefix) == leaf


@pytest.mark.parametrize("prefix", [-0.1, 10.0, 12.0])
def test_prefix_out_of_range(prefix):
    with pytest.raises(PrefixRangeError):
        _tree([1, 2, 3, 4]).sample(prefix)


def test_update_rejects_bad_index_and_priority():
    tree = SumTree(4)
    with pytest.raises(TreeIndexError):
        tree.update(4, 1.0)
    with pytest.raises(IndexError):
        tree.update(-1, 1.0)
    with pytest.raises(InvalidPriorityError):
        tree.update(0, -1.0)
    with pytest.raises(InvalidPriorityError):
        tree.update(0, float("nan"))


def test_prefix_frequencies_follow_priorities():
    tree = _tree([1, 2, 3, 4])
    rng = np.random.default_rng(0)
    leaves = tree.find_prefix_indices(rng.uniform(0, 10, size=100_000))
    counts = np.bincount(leaves, minlength=4)
    assert chisquare(counts, 100_000 * np.array([0.1, 0.2, 0.3, 0.4])).pvalue > 0.01


def test_prefix_search_matches_linear_scan_fuzz():
    rng = np.random.default_rng(1)
    queries = 0
    for size in (1, 2, 3, 5, 8, 31, 64, 100, 257, 1024):
        # dyadic priorities keep every partial sum exact
        priorities = rng.integers(0, 17, size=size) / 8.0
        priorities[rng.integers(0, size)] = 1.0
        tree = _tree(priorities)

        for _ in range(3):
            leaf = int(rng.integers(0, size))
            new = rng.integers(0, 17) / 8.0
            tree.update(leaf, new)
            priorities[leaf] = new
        if priorities.sum() == 0:
            tree.update(0, 1.0)
            priorities[0] = 1.0

        cumsum = np.cumsum(priorities)
        boundaries = cumsum[cumsum < cumsum[-1]]
        prefixes = np.concatenate([rng.uniform(0, tree.total, size=10_000), [0.0], boundaries])
        prefixes = prefixes[prefixes < tree.total]
        found = tree.find_prefix_indices(prefixes)
        expected = np.searchsorted(cumsum, prefixes, side="right")
        np.testing.assert_array_equal(found, expected)
        assert np.all(priorities[found] > 0)
        queries += len(prefixes)
    assert queries >= 100_000


def test_rebuild_matches_leaf_sum():
    rng = np.random.default_rng(2)
    tree = SumTree(300, rebuild_interval=50)
    values = rng.uniform(0, 1, size=300)
    for i, v in enumerate(values):
        tree.update(i, v)
    tree.rebuild()
    assert tree.total == pytest.approx(values.sum(), rel=1e-12)


def test_drift_before_rebuild_is_bounded():
    rng = np.random.default_rng(3)
    tree = SumTree(64, rebuild_interval=10**9)
    for _ in range(20_000):
        tree.update(int(rng.integers(0, 64)), float(rng.uniform(0, 5)))
    assert abs(tree.total - tree.leaves.sum()) <= 1e-9 * tree.leaves.sum()


# -- prioritized transition store --------------------------------------------

def test_first_insert_gets_priority_one():
    store = _store(1)
    assert store.tree.leaves[0] == 1.0


def test_insert_uses_current_max_leaf_priority():
    store = PrioritizedTransitionBuffer(4, 2, 1, 1, PerConfig(alpha=1.0, epsilon=0.01))
    store.insert([0, 0], [0], -1, [0, 0], [0])
    store.update_priorities([0], [4.99])
    slot = store.insert([1, 1], [0], -1, [1, 1], [0])
    assert store.tree.leaves[slot] == pytest.approx(5.0)


def test_insert_priority_can_fall_below_one():
    store = PrioritizedTransitionBuffer(4, 2, 1, 1, PerConfig(alpha=0.6, epsilon=0.01))
    store.insert([0, 0], [0], -1, [0, 0], [0])
    store.update_priorities([0], [0.0])
    slot = store.insert([1, 1], [0], -1, [1, 1], [0])
    assert store.tree.leaves[slot] == pytest.approx(0.01 ** 0.6)
    assert store.tree.leaves[slot] < 1.0


def test_evicted_priority_no_longer_sets_the_max():
    store = PrioritizedTransitionBuffer(2, 2, 1, 1, PerConfig(alpha=1.0, epsilon=0.0001))
    store.insert([0, 0], [0], -1, [0, 0], [0])
    store.insert([1, 1], [0], -1, [1, 1], [0])
    store.update_priorities([0, 1], [4.9999, 0.0999])
    slot = store.insert([2, 2], [0], -1, [2, 2], [0])
    assert slot == 0
    store.update_priorities([0], [0.0999])
    slot = store.insert([3, 3], [0], -1, [3, 3], [0])
    assert slot == 1
    assert store.tree.leaves[1] == pytest.approx(0.1)


@pytest.mark.parametrize("delta,alpha,expected", [(0.0, 0.6, 0.01 ** 0.6), (1.0, 1.0, 1.01)])
def test_priority_formula(delta, alpha, expected):
    store = _store(2, PerConfig(alpha=alpha, epsilon=0.01))
    store.update_priorities([1], [delta])
    assert store.tree.leaves[1] == pytest.approx(expected)
    assert 0.01 ** 0.6 == pytest.approx(0.0631, abs=1e-4)


def test_alpha_zero_gives_unit_priorities():
    store = _store(3, PerConfig(alpha=0.0))
    store.update_priorities([0, 1, 2], [0.0, 3.0, -7.5])
    np.testing.assert_allclose(store.tree.leaves[:3], 1.0)


def test_alpha_zero_sampling_is_uniform():
    store = _store(6, PerConfig(alpha=0.0))
    store.update_priorities(range(6), [0.0, 0.1, 1.0, 5.0, 10.0, 100.0])
    rng = np.random.default_rng(4)
    counts = np.bincount(store.sample_indices(100_000, rng), minlength=6)
    assert chisquare(counts).pvalue > 0.01


def test_sampling_follows_td_priorities():
    store = _store(4, PerConfig(alpha=0.6, epsilon=0.01))
    deltas = np.array([0.0, 0.5, 1.0, 2.0])
    store.update_priorities(range(4), deltas)
    expected = (np.abs(deltas) + 0.01) ** 0.6
    rng = np.random.default_rng(5)
    idx, batch = store.sample(100_000, rng)
    counts = np.bincount(idx, minlength=4)
    assert chisquare(counts, 100_000 * expected / expected.sum()).pvalue > 0.01
    np.testing.assert_array_equal(batch.observations[:, 0], idx)


def test_non_finite_td_error_rejected():
    store = _store(2)
    with pytest.raises(InvalidPriorityError):
        store.update_priorities([0], [np.inf])


def test_update_outside_filled_range_rejected():
    store = PrioritizedTransitionBuffer(8, 2, 1, 1)
    store.insert([0, 0], [0], -1, [0, 0], [0])
    with pytest.raises(TreeIndexError):
        store.update_priorities([3], [0.1])


def test_empty_store_cannot_sample():
    with pytest.raises(EmptyBufferError):
        PrioritizedTransitionBuffer(4, 2, 1, 1).sample(1, np.random.default_rng(0))


def test_ring_overwrites_oldest():
    store = _store(3)
    slot = store.insert([9, 9], [0], 0.0, [9, 9], [0])
    assert slot == 0
    assert len(store) == 3
    assert store.observations[0, 0] == 9


def test_module_level_helpers():
    store = PrioritizedTransitionBuffer(4, 2, 1, 1)
    transition = Transition(np.zeros(2), np.zeros(1), -1.0, np.ones(2), np.zeros(1), False)
    per_insert(store, transition)
    per_update_priorities(store, [0], [0.0])
    assert len(store) == 1
    assert store.tree.total == pytest.approx(0.01 ** 0.6)


def test_per_config_validation():
    with pytest.raises(ValueError):
        PerConfig(alpha=-0.1)
    with pytest.raises(ValueError):
        PerConfig(epsilon=0.0)
