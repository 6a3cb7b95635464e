"""
Helper Utilities Module

General utility functions for formatting, safe arithmetic, file export
and logging setup used across the application.
"""

import logging
from pathlib import Path
from typing import Iterable, Mapping, Union

import pandas as pd

PathLike = Union[str, Path]


def configure_logging(level: str = "INFO") -> None:
    """Configure root logging once for CLI runs."""
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def format_time(seconds: float) -> str:
    """Format seconds into a human-readable time string (HH:MM:SS)."""
    seconds = int(round(seconds))
    hours, rem = divmod(seconds, 3600)
    minutes, secs = divmod(rem, 60)
    return f"{hours:02d}:{minutes:02d}:{secs:02d}"


def format_percentage(value: float) -> str:
    """Format a fraction as a percentage string."""
    return f"{value * 100:.1f}%"


def safe_divide(numerator: float, denominator: float, default: float = 0.0) -> float:
    """Divide two numbers, returning `default` when the denominator is zero."""
    if denominator == 0:
        return default
    return numerator / denominator


def ensure_dir(path: PathLike) -> Path:
    """Create a directory (and parents) if needed and return it as a Path."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def export_to_csv(df: pd.DataFrame, filename: PathLike) -> Path:
    """
    Export dataframe to CSV file.

    Floats are written with `repr` precision so that identical runs produce
    byte-identical files.

    Args:
        df (pd.DataFrame): Table to write
        filename (str/Path): Destination path; parent directories are created

    Returns:
        Path: The written file
    """
    path = Path(filename)
    ensure_dir(path.parent)
    df.to_csv(path, index=False, lineterminator="\n")
    return path


def export_to_jsonl(records: Iterable[Mapping], filename: PathLike) -> Path:
    """
    Export a sequence of flat records as JSON-lines.

    Args:
        records: Iterable of dict-like rows
        filename (str/Path): Destination path

    Returns:
        Path: The written file
    """
    path = Path(filename)
    ensure_dir(path.parent)
    df = pd.DataFrame(list(records))
    with open(path, "w", encoding="utf-8") as handle:
        if not df.empty:
            text = df.to_json(orient="records", lines=True, double_precision=15)
            handle.write(text.rstrip("\n") + "\n")
    return path
