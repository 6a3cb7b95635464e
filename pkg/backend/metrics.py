"""
Metrics Module

Per-epoch training records and the benchmark metrics built on them:
success curves, samples-to-threshold, sample-efficiency ratios against a
baseline and the energy / TD-error correlation. Writes plot-ready CSV.
"""

import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd

from utils.constants import SEED_COLUMNS, STRATEGY_EBP, TIMING_COLUMNS
from utils.errors import ShapeError, UndefinedCorrelationError
from utils.helpers import export_to_csv

logger = logging.getLogger(__name__)

STATUS_OK = "ok"
STATUS_DIVERGED = "diverged"

THRESHOLD_COLUMNS = ["env", "strategy", "seed", "samples_to_threshold"]
EFFICIENCY_COLUMNS = ["env", "baseline", "seed", "baseline_samples", "ebp_samples", "efficiency_ratio"]


@dataclass
class EpochRecord:
    """
    Metrics of one training epoch for one seed.

    Attributes:
        epoch (int): 0-based epoch index
        success_rate (float): mean test success in [0, 1]
        cumulative_samples (int): environment transitions consumed so far
        mean_energy (float): mean trajectory energy in the buffer
        max_energy (float): max trajectory energy in the buffer
        pearson_r (float): energy vs mean |TD error| correlation, NaN when
            not measured this epoch or undefined
        critic_loss (float): mean critic loss over the epoch's updates
        wall_clock (float): seconds spent in the epoch
        status (str): "ok" or "diverged"
    """

    epoch: int
    success_rate: float
    cumulative_samples: int
    mean_energy: float = 0.0
    max_energy: float = 0.0
    pearson_r: float = math.nan
    critic_loss: float = math.nan
    wall_clock: float = 0.0
    status: str = STATUS_OK

    def __post_init__(self):
        if not (math.isnan(self.success_rate) or 0.0 <= self.success_rate <= 1.0):
            raise ValueError(f"Success rate must be in [0, 1], got {self.success_rate}")


RecordsBySeed = Mapping[int, Sequence[EpochRecord]]


def pearson_r(xs: Sequence[float], ys: Sequence[float]) -> float:
    """
    Pearson product-moment correlation.

    Args:
        xs: per-episode trajectory energies
        ys: per-episode TD-error magnitudes

    Returns:
        float: r in [-1, 1]

    Raises:
        ShapeError: If the lengths differ or fewer than 2 pairs are given
        UndefinedCorrelationError: If either series has zero variance
    """
    x = pd.Series(np.asarray(xs, dtype=np.float64))
    y = pd.Series(np.asarray(ys, dtype=np.float64))
    if len(x) != len(y):
        raise ShapeError(f"Series lengths differ: {len(x)} vs {len(y)}")
    if len(x) < 2:
        raise ShapeError(f"Need at least 2 pairs, got {len(x)}")
    if x.var(ddof=0) == 0 or y.var(ddof=0) == 0:
        raise UndefinedCorrelationError("Correlation is undefined for a constant series")
    r = float(x.corr(y))
    return min(1.0, max(-1.0, r))


def samples_to_threshold(records: Sequence[EpochRecord], threshold: float) -> Optional[int]:
    """Cumulative samples at the first epoch whose success rate reaches threshold."""
    for record in records:
        if record.status == STATUS_OK and record.success_rate >= threshold:
            return int(record.cumulative_samples)
    return None


def efficiency_ratio(baseline_samples: float, ebp_samples: float) -> float:
    """Baseline samples / EBP samples, rounded to two decimals (93100 vs 48000 -> 1.94)."""
    if ebp_samples <= 0:
        raise ValueError(f"EBP sample count must be positive, got {ebp_samples}")
    return round(baseline_samples / ebp_samples, 2)


def seed_frame(records: Sequence[EpochRecord]) -> pd.DataFrame:
    """One row per epoch; wall-clock lives in the separate timing table."""
    rows = [asdict(r) for r in records]
    return pd.DataFrame(rows, columns=list(asdict(records[0]).keys()))[SEED_COLUMNS]


def aggregate_frame(records_by_seed: RecordsBySeed) -> pd.DataFrame:
    """
    Mean and population standard deviation across seeds, per epoch.

    Diverged epochs are excluded; `n_seeds` counts the seeds contributing.
    """
    frames = []
    for seed, records in records_by_seed.items():
        df = seed_frame(records)
        df["seed"] = seed
        frames.append(df[df["status"] == STATUS_OK])
    combined = pd.concat(frames, ignore_index=True)

    grouped = combined.groupby("epoch", sort=True)
    aggregate = pd.DataFrame({
        "success_mean": grouped["success_rate"].mean(),
        "success_std": grouped["success_rate"].std(ddof=0),
        "cumulative_samples": grouped["cumulative_samples"].mean(),
        "mean_energy": grouped["mean_energy"].mean(),
        "pearson_r_mean": grouped["pearson_r"].mean(),
        "n_seeds": grouped["seed"].nunique(),
    }).reset_index()
    return aggregate


def thresholds_frame(records_by_seed: RecordsBySeed, threshold: float,
                     env: str = "", strategy: str = "") -> pd.DataFrame:
    rows = [
        {"env": env, "strategy": strategy, "seed": seed,
         "samples_to_threshold": samples_to_threshold(records, threshold)}
        for seed, records in records_by_seed.items()
    ]
    df = pd.DataFrame(rows, columns=THRESHOLD_COLUMNS)
    df["samples_to_threshold"] = df["samples_to_threshold"].astype("Int64")
    return df


def timing_frame(records_by_seed: RecordsBySeed) -> pd.DataFrame:
    rows = [
        {"seed": seed, "epoch": r.epoch, "wall_clock": r.wall_clock}
        for seed, records in records_by_seed.items()
        for r in records
    ]
    return pd.DataFrame(rows, columns=TIMING_COLUMNS)


def report(records_by_seed: RecordsBySeed, output_dir: Union[str, Path],
           threshold: float, env: str = "", strategy: str = "") -> List[Path]:
    """
    Write seed_<k>.csv per seed, aggregate.csv, thresholds.csv and timing.csv.

    Everything except timing.csv is byte-reproducible for a fixed config.

    Raises:
        ValueError: If there are no records
        OSError: If the output directory is not writable
    """
    if not records_by_seed or not any(records_by_seed.values()):
        raise ValueError("report() needs at least one epoch record")

    output_dir = Path(output_dir)
    written = []
    for seed, records in records_by_seed.items():
        written.append(export_to_csv(seed_frame(records), output_dir / f"seed_{seed}.csv"))
    written.append(export_to_csv(aggregate_frame(records_by_seed), output_dir / "aggregate.csv"))
    written.append(export_to_csv(
        thresholds_frame(records_by_seed, threshold, env, strategy), output_dir / "thresholds.csv"))
    written.append(export_to_csv(timing_frame(records_by_seed), output_dir / "timing.csv"))

    logger.info(f"✓ Wrote {len(written)} report files to {output_dir}")
    return written


def compare(run_dirs: Sequence[Union[str, Path]],
            output_path: Optional[Union[str, Path]] = None) -> pd.DataFrame:
    """
    Pair seeds across runs and compute samples-to-threshold ratios of every
    baseline run against the EBP run of the same environment.

    Seeds where either side never reached the threshold get an empty ratio.

    Raises:
        FileNotFoundError: If a run directory has no thresholds.csv
        ValueError: If no EBP run is among the inputs
    """
    tables = []
    for run_dir in run_dirs:
        path = Path(run_dir) / "thresholds.csv"
        if not path.exists():
            raise FileNotFoundError(f"No thresholds.csv in {run_dir}")
        tables.append(pd.read_csv(path, dtype={"env": str, "strategy": str}))
    thresholds = pd.concat(tables, ignore_index=True)

    ebp = thresholds[thresholds["strategy"] == STRATEGY_EBP]
    if ebp.empty:
        raise ValueError(f"compare() needs a {STRATEGY_EBP} run among {list(run_dirs)}")

    rows = []
    baselines = thresholds[thresholds["strategy"] != STRATEGY_EBP]
    for (env, baseline), group in baselines.groupby(["env", "strategy"], sort=True):
        paired = group.merge(ebp[ebp["env"] == env], on="seed", suffixes=("_base", "_ebp"))
        for _, row in paired.sort_values("seed").iterrows():
            base, ours = row["samples_to_threshold_base"], row["samples_to_threshold_ebp"]
            ratio = efficiency_ratio(base, ours) if pd.notna(base) and pd.notna(ours) else math.nan
            rows.append({
                "env": env, "baseline": baseline, "seed": int(row["seed"]),
                "baseline_samples": base, "ebp_samples": ours, "efficiency_ratio": ratio,
            })

    df = pd.DataFrame(rows, columns=EFFICIENCY_COLUMNS)
    for (env, baseline), group in df.groupby(["env", "baseline"], sort=True):
        ratios = group["efficiency_ratio"].dropna()
        wins = int((ratios > 1.0).sum())
        median = float(ratios.median()) if len(ratios) else math.nan
        logger.info(
            f"✓ {env}: {baseline} vs {STRATEGY_EBP} median ratio {median:.2f}, "
            f"EBP faster in {wins}/{len(group)} seeds"
        )

    if output_path is not None:
        export_to_csv(df, output_path)
    return df


def median_ratio(efficiency: pd.DataFrame) -> Dict[str, float]:
    """Median efficiency ratio per baseline over seeds with a defined ratio."""
    result = {}
    for baseline, group in efficiency.groupby("baseline", sort=True):
        ratios = group["efficiency_ratio"].dropna()
        result[baseline] = float(ratios.median()) if len(ratios) else math.nan
    return result
