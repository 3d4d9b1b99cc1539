"""Run directories, CSV tables and SVG plots.

Every plot is drawn from a DataFrame that is also written as CSV into the
same directory, so ``render_bundle`` can redraw a run from its CSVs alone.
"""

import json
import logging
import platform
import threading
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from .experiments import CellStore, ScalingRun  # noqa: E402

logger = logging.getLogger(__name__)

matplotlib.rcParams["svg.hashsalt"] = "hamiltonian-learning"

LOSS_COLUMNS = ("loss_data", "loss_physics", "loss_initial", "loss_total")


class RunDirectory:
    """
    Single writer for one run's output directory.

    All file writes go through this object and are serialized by its lock,
    so concurrent study cells can report into the same bundle.
    """

    def __init__(self, root: Union[str, Path], dpi: int = 100, plots: bool = True) -> None:
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.dpi = dpi
        self.plots = plots
        self._lock = threading.Lock()

    def path(self, name: str) -> Path:
        return self.root / name

    def write_csv(self, name: str, frame: pd.DataFrame, index: bool = False) -> Path:
        path = self.path(name)
        with self._lock:
            frame.to_csv(path, index=index, float_format="%.17g")
        logger.debug("Wrote %s (%d rows)", path, len(frame))
        return path

    def write_json(self, name: str, payload: Dict[str, Any]) -> Path:
        path = self.path(name)
        with self._lock:
            path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_jsonable), encoding="utf-8")
        return path

    def write_text(self, name: str, text: str) -> Path:
        path = self.path(name)
        with self._lock:
            path.write_text(text, encoding="utf-8")
        return path

    def save_figure(self, name: str, fig) -> Optional[Path]:
        path = self.path(name)
        try:
            if self.plots:
                with self._lock:
                    fig.savefig(path, format="svg", dpi=self.dpi, metadata={"Date": None})
        finally:
            plt.close(fig)
        return path if self.plots else None

    def append_line(self, name: str, line: str) -> None:
        with self._lock:
            with open(self.path(name), "a", encoding="utf-8") as handle:
                handle.write(line + "\n")

    def cell_store(self) -> "DirectoryCellStore":
        return DirectoryCellStore(self)


class DirectoryCellStore(CellStore):
    """Finished study cells persisted as JSON lines in ``cells.jsonl``."""

    FILENAME = "cells.jsonl"

    def __init__(self, directory: RunDirectory) -> None:
        super().__init__()
        self.directory = directory
        path = directory.path(self.FILENAME)
        if path.exists():
            for line in path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    row = json.loads(line)
                    self.cells[row["cell"]] = row
            logger.info("Loaded %d finished cells from %s", len(self.cells), path)

    def record(self, key: str, row: dict) -> None:
        super().record(key, row)
        self.directory.append_line(self.FILENAME, json.dumps(row, sort_keys=True, default=_jsonable))


def _jsonable(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


def run_metadata(seed: int, wall_time: float, **extra: Any) -> Dict[str, Any]:
    """Seed, wall time and library versions of a run."""
    import scipy
    import torch

    from . import __version__

    return {
        "seed": seed,
        "wall_time": wall_time,
        "versions": {
            "hamiltonian_learning": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "torch": torch.__version__,
            "scipy": scipy.__version__,
            "pandas": pd.__version__,
            "matplotlib": matplotlib.__version__,
        },
        **extra,
    }


def scaling_frame(runs: Sequence[ScalingRun]) -> pd.DataFrame:
    return pd.concat([run.to_frame() for run in runs], ignore_index=True)


def plot_scaling(frame: pd.DataFrame, title: str = "MSE scaling"):
    """Log-log MSE against query count, one series per label, fitted exponent in the legend."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, part in frame.groupby("label", sort=False):
        counts = part["query_count"].to_numpy(float)
        line = ax.loglog(counts, part["mse"], "o", label=f"{label} (l={part['exponent'].iloc[0]:.3f})")[0]
        if np.isfinite(part["exponent"].iloc[0]):
            fit_x = np.logspace(np.log10(counts.min()), np.log10(counts.max()), 50)
            fit_y = 10 ** part["intercept"].iloc[0] * fit_x ** -part["exponent"].iloc[0]
            ax.loglog(fit_x, fit_y, "--", color=line.get_color())
    ax.set_xlabel("queries N")
    ax.set_ylabel("MSE")
    ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    return fig


def plot_losses(frame: pd.DataFrame):
    """Loss components against epoch; signed data losses use a linear axis."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for column in LOSS_COLUMNS:
        if column in frame:
            ax.plot(frame["epoch"], frame[column], label=column.replace("loss_", ""))
    if "mse" in frame:
        ax.plot(frame["epoch"], frame["mse"], label="mse")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    return fig


def plot_drift(frame: pd.DataFrame):
    """Per-batch MSE after the parameter change; batch 0 is the pre-trained estimate."""
    fig, ax = plt.subplots(figsize=(6, 4))
    keys = [k for k in ("learner", "seed") if k in frame]
    parts = frame.groupby(keys, sort=False) if keys else [((), frame)]
    for key, part in parts:
        label = " ".join(f"{k}={v}" for k, v in zip(keys, key if isinstance(key, tuple) else (key,)))
        ax.semilogy(part["batch"], part["mse"], "o-", label=label or None)
    ax.set_xlabel("batch")
    ax.set_ylabel("MSE")
    ax.grid(True, which="both", alpha=0.3)
    if keys:
        ax.legend()
    fig.tight_layout()
    return fig


def plot_constraint_points(frame: pd.DataFrame):
    fig, ax = plt.subplots(figsize=(6, 4))
    for count, part in frame.groupby("query_count"):
        ax.loglog(part["P"], part["mse"], "o-", label=f"N={count}")
    ax.set_xlabel("constraint points P")
    ax.set_ylabel("MSE")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    return fig


def plot_dt_table(table: pd.DataFrame):
    fig, ax = plt.subplots(figsize=(6, 4))
    for count, row in table.iterrows():
        ax.loglog([float(c) for c in table.columns], row.to_numpy(float), "o-", label=f"N={count}")
    ax.set_xlabel("time spacing dt")
    ax.set_ylabel("MSE")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    return fig


def crosstalk_matrices(frame: pd.DataFrame, learner: str, kind: str) -> np.ndarray:
    """Symmetric squared-error matrix of one learner and coupling kind."""
    part = frame[(frame["learner"] == learner) & (frame["kind"] == kind)]
    n = int(max(part["j"].max(), part["i"].max())) if len(part) else 0
    matrix = np.zeros((n, n))
    for _, row in part.iterrows():
        matrix[row["i"] - 1, row["j"] - 1] = matrix[row["j"] - 1, row["i"] - 1] = row["squared_error"]
    return matrix


def plot_crosstalk(frame: pd.DataFrame):
    """Heat maps of per-coupling squared error: one row per learner, eta and epsilon panels."""
    learners: List[str] = list(dict.fromkeys(frame["learner"]))
    fig, axes = plt.subplots(len(learners), 2, figsize=(8, 3.5 * len(learners)), squeeze=False)
    for r, learner in enumerate(learners):
        for c, kind in enumerate(("eta", "epsilon")):
            matrix = crosstalk_matrices(frame, learner, kind)
            image = axes[r, c].imshow(matrix, cmap="viridis")
            axes[r, c].set_title(f"{learner}: {kind}")
            ticks = np.arange(matrix.shape[0])
            axes[r, c].set_xticks(ticks, [str(t + 1) for t in ticks])
            axes[r, c].set_yticks(ticks, [str(t + 1) for t in ticks])
            fig.colorbar(image, ax=axes[r, c])
    fig.tight_layout()
    return fig


def render_bundle(directory: Union[str, Path, RunDirectory]) -> List[Path]:
    """
    Redraw every plot of a run directory from its CSV files.

    Raises:
        FileNotFoundError: If the directory does not exist.
    """
    if not isinstance(directory, RunDirectory):
        if not Path(directory).is_dir():
            raise FileNotFoundError(f"Run directory not found: {directory}")
        directory = RunDirectory(directory)
    written = []
    renderers = {
        "scaling.csv": ("scaling.svg", plot_scaling),
        "losses.csv": ("losses.svg", plot_losses),
        "drift.csv": ("drift.svg", plot_drift),
        "constraint_points.csv": ("constraint_points.svg", plot_constraint_points),
        "crosstalk.csv": ("crosstalk.svg", plot_crosstalk),
    }
    for csv_name, (svg_name, draw) in renderers.items():
        path = directory.path(csv_name)
        if path.exists():
            written.append(directory.save_figure(svg_name, draw(pd.read_csv(path))))
    dt_path = directory.path("dt.csv")
    if dt_path.exists():
        written.append(directory.save_figure("dt.svg", plot_dt_table(pd.read_csv(dt_path, index_col=0))))
    logger.info("Rendered %d plots in %s", len(written), directory.root)
    return [p for p in written if p is not None]
