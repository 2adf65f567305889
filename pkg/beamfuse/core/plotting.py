# Training-curve figures rendered from train_log.csv files.
#
# Each run directory holds one CSV with a train and a val row per epoch.
# Figures are written as PNG with the non-interactive Agg backend so the
# command works on headless machines.

import csv
import logging
import os
from dataclasses import dataclass
from typing import Dict, List, Mapping, Sequence

import matplotlib as mpl
mpl.use("Agg")

import matplotlib.pyplot as plt

from beamfuse.core import config as C
from beamfuse.core.errors import DataError, DatasetIOError

logger = logging.getLogger(__name__)

LOSS_FIGURE = "loss.png"
ACCURACY_FIGURE = "val_topk.png"
QUALITY_FIGURE = "quality.png"
QUALITY_COLUMNS = (("se_drop", "mean SE drop [bits/s/Hz]"), ("f1_blk", "blocked F1"), ("rmse", "pose RMSE [m]"))


@dataclass
class Curves:
    """Per-split metric series of one run, ordered by epoch."""

    name: str
    columns: Dict[str, Dict[str, List[float]]]

    def series(self, split: str, column: str) -> List[float]:
        return self.columns.get(split, {}).get(column, [])

    def epochs(self, split: str) -> List[int]:
        return [int(e) for e in self.series(split, "epoch")]


def read_log(path: str, name: str = "") -> Curves:
    """Parse a training log into per-split float columns.

    :param path: train_log.csv written by training
    :param name: label used in legends; defaults to the parent directory name
    :returns: Curves for the run
    """
    try:
        with open(path, "r", encoding="utf-8", newline="") as handle:
            rows = list(csv.DictReader(handle))
    except OSError as e:
        raise DatasetIOError("Cannot read training log", path=path, cause=e)
    if not rows:
        raise DataError(f"Training log {path} has no rows")
    missing = set(C.TRAIN_LOG_HEADER) - set(rows[0])
    if missing:
        raise DataError(f"Training log {path} lacks columns {sorted(missing)}")
    columns: Dict[str, Dict[str, List[float]]] = {}
    for row in rows:
        split = columns.setdefault(row["split"], {})
        for key in C.TRAIN_LOG_HEADER:
            if key != "split":
                split.setdefault(key, []).append(float(row[key]))
    return Curves(name or os.path.basename(os.path.dirname(os.path.abspath(path))), columns)


def _save(fig, path: str) -> str:
    fig.tight_layout()
    try:
        fig.savefig(path, dpi=120)
    except OSError as e:
        raise DatasetIOError("Cannot write figure", path=path, cause=e)
    finally:
        plt.close(fig)
    return path


def plot_loss(runs: Sequence[Curves], path: str) -> str:
    fig, ax = plt.subplots(figsize=(6, 4))
    for run in runs:
        for split, style in (("train", "-"), ("val", "--")):
            ax.plot(run.epochs(split), run.series(split, "loss"), style, label=f"{run.name} {split}")
    ax.set_xlabel("epoch")
    ax.set_ylabel("joint loss")
    ax.legend(fontsize="small")
    return _save(fig, path)


def plot_topk(runs: Sequence[Curves], path: str) -> str:
    fig, ax = plt.subplots(figsize=(6, 4))
    for run in runs:
        line, = ax.plot(run.epochs("val"), run.series("val", "top1"), label=f"{run.name} top-1")
        ax.plot(run.epochs("val"), run.series("val", "top3"), "--", color=line.get_color(), label=f"{run.name} top-3")
    ax.set_xlabel("epoch")
    ax.set_ylabel("validation accuracy")
    ax.set_ylim(0.0, 1.0)
    ax.legend(fontsize="small")
    return _save(fig, path)


def plot_quality(runs: Sequence[Curves], path: str) -> str:
    fig, axes = plt.subplots(1, len(QUALITY_COLUMNS), figsize=(12, 3.5))
    for ax, (column, title) in zip(axes, QUALITY_COLUMNS):
        for run in runs:
            for split, style in (("train", "-"), ("val", "--")):
                ax.plot(run.epochs(split), run.series(split, column), style, label=f"{run.name} {split}")
        ax.set_title(title)
        ax.set_xlabel("epoch")
    axes[0].legend(fontsize="x-small")
    return _save(fig, path)


def plot_runs(logs: Mapping[str, str], out_dir: str) -> Dict[str, str]:
    """Render the three curve figures for one or more runs.

    :param logs: run name -> train_log.csv path
    :param out_dir: directory receiving the PNG files
    :returns: figure kind -> written path
    """
    if not logs:
        raise DataError("No training logs to plot")
    runs = [read_log(path, name) for name, path in logs.items()]
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "loss": plot_loss(runs, os.path.join(out_dir, LOSS_FIGURE)),
        "topk": plot_topk(runs, os.path.join(out_dir, ACCURACY_FIGURE)),
        "quality": plot_quality(runs, os.path.join(out_dir, QUALITY_FIGURE)),
    }
    logger.info("Wrote %d figures for %d runs to %s", len(paths), len(runs), out_dir)
    return paths
