"""
Desk-scale benchmark checks. Minutes to tens of minutes each; run with

    pytest -m bench
"""

import math

import numpy as np
import pytest

from backend.config import RunConfig
from backend.harness import SeedRun, correlation_epoch, train
from backend.metrics import efficiency_ratio, samples_to_threshold

pytestmark = pytest.mark.bench

SEEDS = (0, 1, 2, 3, 4)


def _benchmark(env, strategy, **overrides):
    values = dict(env=env, strategy=strategy, seeds=SEEDS, epochs=30)
    values.update(overrides)
    return RunConfig(**values)


@pytest.mark.parametrize("env", ["PlanarPush", "PlanarPickPlace"])
def test_ebp_needs_fewer_samples_than_uniform(env):
    uniform = train(_benchmark(env, "uniform-her"))
    ebp = train(_benchmark(env, "ebp-her"))

    wins, ratios = 0, []
    for seed in SEEDS:
        base = samples_to_threshold(uniform[seed], 0.8)
        ours = samples_to_threshold(ebp[seed], 0.8)
        if ours is None:
            continue
        if base is None or ours < base:
            wins += 1
        if base is not None:
            ratios.append(efficiency_ratio(base, ours))
    assert wins >= 4
    assert ratios and float(np.median(ratios)) >= 1.2


def test_energy_correlates_with_td_error_mid_training():
    records = train(_benchmark("PlanarPickPlace", "ebp-her", epochs=10))
    mid = correlation_epoch(10)
    correlated = sum(
        1 for seed in SEEDS
        if not math.isnan(records[seed][mid].pearson_r) and records[seed][mid].pearson_r > 0.2
    )
    assert correlated >= 4


def _epoch_seconds(strategy, epochs=3):
    run = SeedRun(RunConfig(env="PlanarPickPlace", strategy=strategy, seeds=(0,), epochs=epochs), seed=0)
    return float(np.median([run.run_epoch(epoch).wall_clock for epoch in range(epochs)]))


def test_energy_prioritization_adds_little_overhead():
    uniform = _epoch_seconds("uniform-her")
    ebp = _epoch_seconds("ebp-her")
    per = _epoch_seconds("per-her")
    assert ebp <= 1.25 * uniform
    assert per > max(uniform, ebp)
