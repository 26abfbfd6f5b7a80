"""
Chart helpers for AnosovLab reports.

Each function takes the table a module already computed and writes one PNG.
Failures are logged and swallowed: a missing chart never fails a run.
"""

from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from config import GENERATE_CHARTS  # noqa: E402
from utils import get_logger  # noqa: E402

logger = get_logger(__name__)


def _save(fig, charts_dir: Path, name: str) -> Optional[Path]:
    charts_dir.mkdir(parents=True, exist_ok=True)
    chart_path = charts_dir / name
    fig.tight_layout()
    fig.savefig(chart_path, metadata={"Software": None})
    plt.close(fig)
    logger.info(f"Chart saved to {chart_path}")
    return chart_path


def covering_chart(table: pd.DataFrame, fit: dict, charts_dir: Path, name: str = "covering.png") -> Optional[Path]:
    """
    Log-log plot of covering numbers with the fitted window highlighted.

    Args:
        table: Per-scale table with columns r, N, in_window
        fit: Dimension fit with keys dim and intercept
        charts_dir: Directory to save chart
        name: File name

    Returns:
        Path to the chart, or None when charts are disabled or plotting failed
    """
    if not GENERATE_CHARTS:
        return None
    try:
        x = np.log(1.0 / table["r"].to_numpy())
        y = np.log(table["N"].to_numpy())
        window = table["in_window"].to_numpy(dtype=bool)

        fig, ax = plt.subplots(figsize=(8, 6))
        ax.plot(x[~window], y[~window], "o", color="lightgray", label="saturated")
        ax.plot(x[window], y[window], "o", color="steelblue", label="fit window")
        ax.plot(x[window], fit["intercept"] + fit["dim"] * x[window], "-", color="salmon",
                label=f"slope {fit['dim']:.3f}")
        ax.set_xlabel("log(1/r)")
        ax.set_ylabel("log N(r)")
        ax.set_title("Covering numbers")
        ax.legend()
        return _save(fig, charts_dir, name)
    except Exception as e:
        logger.error(f"Error generating covering chart: {e}")
        return None


def exponent_chart(shells: pd.DataFrame, delta: float, intercept: float, charts_dir: Path) -> Optional[Path]:
    """Counting function log N(T) against T with the fitted slope."""
    if not GENERATE_CHARTS:
        return None
    try:
        fig, ax = plt.subplots(figsize=(8, 6))
        ax.plot(shells["T"], np.log(shells["N"]), ".", color="steelblue")
        ax.plot(shells["T"], intercept + delta * shells["T"], "-", color="salmon", label=f"delta {delta:.4f}")
        ax.set_xlabel("T")
        ax.set_ylabel("log N(T)")
        ax.set_title("Orbit counting")
        ax.legend()
        return _save(fig, charts_dir, "exponent.png")
    except Exception as e:
        logger.error(f"Error generating exponent chart: {e}")
        return None


def cone_chart(directions: np.ndarray, charts_dir: Path) -> Optional[Path]:
    """
    Scatter of unit Cartan directions in an orthonormal chart of the Cartan
    subspace (first two chart coordinates).
    """
    if not GENERATE_CHARTS:
        return None
    try:
        fig, ax = plt.subplots(figsize=(7, 7))
        if directions.shape[1] == 1:
            ax.plot(directions[:, 0], np.zeros(len(directions)), ".", color="steelblue")
        else:
            ax.plot(directions[:, 0], directions[:, 1], ".", color="steelblue", markersize=2)
        ax.set_aspect("equal")
        ax.set_title("Normalized Cartan projections")
        return _save(fig, charts_dir, "limit_cone.png")
    except Exception as e:
        logger.error(f"Error generating cone chart: {e}")
        return None


def ratio_band_chart(table: pd.DataFrame, x: str, charts_dir: Path, name: str, title: str) -> Optional[Path]:
    """Percentile band (p5, p50, p95) of a ratio against a parameter, log scale."""
    if not GENERATE_CHARTS:
        return None
    try:
        fig, ax = plt.subplots(figsize=(8, 6))
        ax.fill_between(table[x], table["p5"], table["p95"], color="lightsteelblue", label="5-95%")
        ax.plot(table[x], table["p50"], "-o", color="steelblue", label="median")
        ax.set_yscale("log")
        if x == "r":
            ax.set_xscale("log")
        ax.set_xlabel(x)
        ax.set_ylabel("ratio")
        ax.set_title(title)
        ax.legend()
        return _save(fig, charts_dir, name)
    except Exception as e:
        logger.error(f"Error generating {name}: {e}")
        return None


def scan_chart(table: pd.DataFrame, columns: Sequence[str], charts_dir: Path) -> Optional[Path]:
    """Curves of the given columns against the family parameter t."""
    if not GENERATE_CHARTS:
        return None
    try:
        fig, ax = plt.subplots(figsize=(8, 6))
        for column in columns:
            ax.plot(table["t"], table[column], "-o", label=column)
        ax.set_xlabel("t")
        ax.set_title("Deformation scan")
        ax.legend()
        return _save(fig, charts_dir, "teich_scan.png")
    except Exception as e:
        logger.error(f"Error generating scan chart: {e}")
        return None
