"""
Trace Loader Module

Loads exported JSON-lines episode traces, validates the schema and
recomputes trajectory energies offline.
"""

import logging
from pathlib import Path
from typing import Dict, List, Union

import pandas as pd

from backend.energy import EnergyParams, ObjectState, energy_breakdown
from utils.constants import TRACE_COLUMNS
from utils.errors import InvalidTrajectoryError

logger = logging.getLogger(__name__)

ANALYSIS_COLUMNS = ["episode", "steps", "trajectory_energy", "potential", "kinetic", "rotational"]


def load_trace(path: Union[str, Path]) -> pd.DataFrame:
    """
    Load a trace file and validate its schema.

    Records without an `episode` field are treated as a single episode 0.

    Returns:
        pd.DataFrame: one row per timestep, sorted by episode then t

    Raises:
        FileNotFoundError: If the file does not exist
        ValueError: If required columns are missing or the file is empty
    """
    path = Path(path)
    if not path.exists():
        logger.error(f"✗ File not found: {path}")
        raise FileNotFoundError(f"Trace file not found: {path}")

    df = pd.read_json(path, lines=True, dtype=False)
    if df.empty:
        raise ValueError(f"Trace file {path} contains no records")

    missing_columns = set(TRACE_COLUMNS) - set(df.columns)
    if missing_columns:
        raise ValueError(f"Missing required columns: {sorted(missing_columns)}")

    if "episode" not in df.columns:
        df["episode"] = 0
    df["t"] = pd.to_numeric(df["t"], errors="raise").astype(int)
    df = df.sort_values(["episode", "t"], kind="stable").reset_index(drop=True)

    logger.info(f"✓ Loaded {len(df)} trace records ({df['episode'].nunique()} episodes) from {path}")
    return df


def trace_states(df: pd.DataFrame) -> Dict[int, List[ObjectState]]:
    """Achieved-goal object states per episode, in timestep order."""
    episodes = {}
    for episode, group in df.groupby("episode", sort=True):
        episodes[int(episode)] = [
            ObjectState(position, quaternion)
            for position, quaternion in zip(group["object_position"], group["object_quaternion"])
        ]
    return episodes


def analyze_trace(path: Union[str, Path], params: EnergyParams) -> pd.DataFrame:
    """
    Per-episode trajectory energy and its potential / kinetic / rotational parts.

    Episodes with fewer than two states are skipped with a warning.
    """
    rows = []
    for episode, states in trace_states(load_trace(path)).items():
        try:
            breakdown = energy_breakdown(states, params)
        except InvalidTrajectoryError as e:
            logger.warning(f"Skipping episode {episode}: {e}")
            continue
        rows.append({
            "episode": episode,
            "steps": len(states) - 1,
            "trajectory_energy": breakdown["trajectory"],
            "potential": breakdown["potential"],
            "kinetic": breakdown["kinetic"],
            "rotational": breakdown["rotational"],
        })
    return pd.DataFrame(rows, columns=ANALYSIS_COLUMNS)
