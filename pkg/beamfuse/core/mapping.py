# Offline LiDAR map and trajectory overlay.
#
# Scans are already in the BS frame, so the map is the plain union of all
# points (optionally voxel-thinned). The top-down occupancy grid is drawn
# as log-scaled grayscale with the reference trajectory and the predicted
# one on top, saved as a binary PPM next to a CSV of both trajectories.

import csv
import io
import logging
import math
import os
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
from PIL import Image, ImageDraw

from beamfuse.core import config as C
from beamfuse.core.checkpoint import write_atomic
from beamfuse.core.errors import DataError, UsageError

logger = logging.getLogger(__name__)

MAP_IMAGE_NAME = "map.ppm"
TRAJECTORIES_NAME = "trajectories.csv"
MAP_META_NAME = "map_meta.json"
TRUTH_COLOR = (0, 200, 0)
PRED_COLOR = (230, 40, 40)


@dataclass
class PointMap:
    points: np.ndarray
    source_count: int

    def __len__(self) -> int:
        return len(self.points)

    @property
    def bounds(self) -> Tuple[float, float, float, float]:
        if len(self.points) == 0:
            return (0.0, 0.0, 0.0, 0.0)
        xs, ys = self.points[:, 0], self.points[:, 1]
        return float(xs.min()), float(xs.max()), float(ys.min()), float(ys.max())


def voxel_thin(points: np.ndarray, voxel_size: float) -> np.ndarray:
    """Keep the first point falling in each voxel, preserving input order."""
    if voxel_size <= 0 or len(points) == 0:
        return points
    keys = np.floor(points / voxel_size).astype(np.int64)
    _, first = np.unique(keys, axis=0, return_index=True)
    return points[np.sort(first)]


def aggregate_map(scans: np.ndarray, voxel_size: float = 0.0, max_range: Optional[float] = None) -> PointMap:
    """Union of every scan's points, optionally limited to `max_range` and voxel-thinned."""
    scans = np.asarray(scans, dtype=np.float64)
    if scans.ndim != 3 or scans.shape[2] != 3:
        raise DataError(f"Expected scans shaped (S, P, 3), got {scans.shape}")
    points = scans.reshape(-1, 3)
    points = points[np.all(np.isfinite(points), axis=1)]
    if max_range is not None:
        points = points[np.hypot(points[:, 0], points[:, 1]) <= max_range]
    points = voxel_thin(points, voxel_size)
    logger.debug("Aggregated %d scans into %d map points", len(scans), len(points))
    return PointMap(points, len(scans))


@dataclass
class OccupancyGrid:
    """Per-cell hit counts; cell (row, col) covers [x0 + col*c, ...) x [y0 + row*c, ...)."""

    cell_size: float
    origin_x: float
    origin_y: float
    counts: np.ndarray

    @property
    def width(self) -> int:
        return self.counts.shape[1]

    @property
    def height(self) -> int:
        return self.counts.shape[0]

    @property
    def origin_cell(self) -> Tuple[int, int]:
        return int(round(self.origin_x / self.cell_size)), int(round(self.origin_y / self.cell_size))

    def cell_of(self, x: float, y: float) -> Tuple[int, int]:
        """(column, row) of a world point, by floor indexing."""
        return (int(math.floor((x - self.origin_x) / self.cell_size)),
                int(math.floor((y - self.origin_y) / self.cell_size)))


def rasterize(point_map: PointMap, cell_size: float = 0.5,
              extent: Optional[Tuple[float, float, float, float]] = None) -> OccupancyGrid:
    """Drop z and count points per cell; the origin sits on a multiple of the cell size."""
    if cell_size <= 0:
        raise UsageError("cell_size must be positive")
    if len(point_map) == 0:
        raise DataError("Cannot rasterize an empty map")
    x_min, x_max, y_min, y_max = extent if extent is not None else point_map.bounds
    col0 = math.floor(x_min / cell_size)
    row0 = math.floor(y_min / cell_size)
    cols = math.floor(x_max / cell_size) - col0 + 1
    rows = math.floor(y_max / cell_size) - row0 + 1
    ix = np.floor(point_map.points[:, 0] / cell_size).astype(np.int64) - col0
    iy = np.floor(point_map.points[:, 1] / cell_size).astype(np.int64) - row0
    keep = (ix >= 0) & (ix < cols) & (iy >= 0) & (iy < rows)
    counts = np.zeros((rows, cols), dtype=np.int64)
    np.add.at(counts, (iy[keep], ix[keep]), 1)
    return OccupancyGrid(cell_size, col0 * cell_size, row0 * cell_size, counts)


@dataclass(frozen=True)
class PixelTransform:
    """Affine world->pixel map: px = sx*x + ox, py = sy*y + oy (y flipped)."""

    sx: float
    ox: float
    sy: float
    oy: float

    @classmethod
    def for_grid(cls, grid: OccupancyGrid, pixels_per_cell: int) -> "PixelTransform":
        scale = pixels_per_cell / grid.cell_size
        top = grid.origin_y + grid.height * grid.cell_size
        return cls(scale, -grid.origin_x * scale, -scale, top * scale)

    def to_pixel(self, x, y) -> Tuple[np.ndarray, np.ndarray]:
        px = np.floor(self.sx * np.asarray(x, dtype=np.float64) + self.ox).astype(np.int64)
        py = np.floor(self.sy * np.asarray(y, dtype=np.float64) + self.oy).astype(np.int64)
        return px, py

    def to_world(self, px, py) -> Tuple[np.ndarray, np.ndarray]:
        return ((np.asarray(px, dtype=np.float64) - self.ox) / self.sx,
                (np.asarray(py, dtype=np.float64) - self.oy) / self.sy)

    def to_dict(self) -> Dict[str, float]:
        return {"sx": self.sx, "ox": self.ox, "sy": self.sy, "oy": self.oy}


def world_to_pixel(grid: OccupancyGrid, x, y, pixels_per_cell: int = 2):
    return PixelTransform.for_grid(grid, pixels_per_cell).to_pixel(x, y)


def grayscale(grid: OccupancyGrid, pixels_per_cell: int = 2) -> np.ndarray:
    """Log-scaled counts 255*log(1+c)/log(1+c_max), north up, upsampled per cell."""
    counts = grid.counts.astype(np.float64)
    peak = counts.max()
    levels = np.zeros_like(counts) if peak <= 0 else 255.0 * np.log1p(counts) / math.log1p(peak)
    levels = np.flipud(np.round(levels).astype(np.uint8))
    return np.kron(levels, np.ones((pixels_per_cell, pixels_per_cell), dtype=np.uint8))


def _segments(seq_ids: Optional[np.ndarray], n: int) -> List[np.ndarray]:
    if seq_ids is None:
        return [np.arange(n)]
    seq_ids = np.asarray(seq_ids)
    return [np.flatnonzero(seq_ids == s) for s in np.unique(seq_ids)]


def _draw_track(draw: ImageDraw.ImageDraw, transform: PixelTransform, track: np.ndarray, color) -> None:
    px, py = transform.to_pixel(track[:, 0], track[:, 1])
    vertices = [(int(a), int(b)) for a, b in zip(px, py)]
    if len(vertices) > 1:
        draw.line(vertices, fill=color, width=1)
    draw.point(vertices, fill=color)


def render_overlay(grid: OccupancyGrid, truth: np.ndarray, pred: np.ndarray,
                   seq_ids: Optional[np.ndarray] = None, pixels_per_cell: int = 2) -> Image.Image:
    """RGB map image with the reference track drawn first and the prediction over it."""
    transform = PixelTransform.for_grid(grid, pixels_per_cell)
    image = Image.fromarray(grayscale(grid, pixels_per_cell)).convert("RGB")
    draw = ImageDraw.Draw(image)
    for rows in _segments(seq_ids, len(truth)):
        _draw_track(draw, transform, np.asarray(truth)[rows], TRUTH_COLOR)
    for rows in _segments(seq_ids, len(pred)):
        _draw_track(draw, transform, np.asarray(pred)[rows], PRED_COLOR)
    return image


def render_trajectories_csv(t: np.ndarray, truth: np.ndarray, pred: np.ndarray) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(C.TRAJECTORY_HEADER)
    for step, (xt, yt), (xp, yp) in zip(t, truth, pred):
        writer.writerow([int(step), repr(float(xt)), repr(float(yt)), repr(float(xp)), repr(float(yp))])
    return buffer.getvalue()


def overlay(grid: OccupancyGrid, truth: np.ndarray, pred: np.ndarray, out_dir: str,
            t: Optional[np.ndarray] = None, seq_ids: Optional[np.ndarray] = None,
            pixels_per_cell: int = 2, config_hash: Optional[str] = None) -> Dict[str, str]:
    """Write map.ppm (P6) and trajectories.csv; the grid is left untouched.

    With config_hash the PPM header carries a `# config_hash = ...` comment.
    """
    truth = np.asarray(truth, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    if truth.shape != pred.shape:
        raise DataError(f"Trajectory shapes differ: {truth.shape} vs {pred.shape}")
    t = np.arange(1, len(truth) + 1) if t is None else np.asarray(t)
    image = render_overlay(grid, truth, pred, seq_ids, pixels_per_cell)
    buffer = io.BytesIO()
    image.save(buffer, format="PPM")
    paths = {
        "map": os.path.join(out_dir, MAP_IMAGE_NAME),
        "trajectories": os.path.join(out_dir, TRAJECTORIES_NAME),
    }
    write_atomic(paths["map"], tag_ppm(buffer.getvalue(), config_hash))
    write_atomic(paths["trajectories"], render_trajectories_csv(t, truth, pred).encode("utf-8"))
    return paths


def tag_ppm(ppm: bytes, config_hash: Optional[str]) -> bytes:
    """Insert a hash comment right after the P6 magic line."""
    if not config_hash:
        return ppm
    magic, _, rest = ppm.partition(b"\n")
    if magic != b"P6":
        raise DataError("Expected a binary PPM image")
    return magic + f"\n# {C.CONFIG_HASH_TAG} = {config_hash}\n".encode("ascii") + rest


@dataclass
class DriftSummary:
    bias: np.ndarray
    max_deviation: float
    segments: List[Dict[str, object]]

    def to_dict(self) -> Dict[str, object]:
        return {
            "bias": [float(v) for v in self.bias],
            "max_deviation": self.max_deviation,
            "segments": self.segments,
        }


def drift_summary(truth: np.ndarray, pred: np.ndarray, segments: int = 1) -> DriftSummary:
    """Mean error vector and worst Euclidean error, overall and per contiguous segment."""
    truth = np.asarray(truth, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    if truth.shape != pred.shape or len(truth) == 0:
        raise DataError(f"Trajectories must be aligned and non-empty: {truth.shape} vs {pred.shape}")
    error = pred - truth
    distance = np.hypot(error[:, 0], error[:, 1])
    parts = []
    for chunk in np.array_split(np.arange(len(truth)), max(1, min(segments, len(truth)))):
        parts.append({
            "start": int(chunk[0]),
            "end": int(chunk[-1]) + 1,
            "bias": [float(v) for v in error[chunk].mean(axis=0)],
            "max_deviation": float(distance[chunk].max()),
        })
    return DriftSummary(error.mean(axis=0), float(distance.max()), parts)


def map_metadata(grid: OccupancyGrid, pixels_per_cell: int, point_count: int,
                 drift: Dict[str, DriftSummary], config_hash: str) -> dict:
    transform = PixelTransform.for_grid(grid, pixels_per_cell)
    return {
        "extent": {
            "x_min": grid.origin_x,
            "x_max": grid.origin_x + grid.width * grid.cell_size,
            "y_min": grid.origin_y,
            "y_max": grid.origin_y + grid.height * grid.cell_size,
        },
        "cell_size": grid.cell_size,
        "cells": [grid.width, grid.height],
        "pixels_per_cell": pixels_per_cell,
        "image_size": [grid.width * pixels_per_cell, grid.height * pixels_per_cell],
        "transform": transform.to_dict(),
        "points": point_count,
        "config_hash": config_hash,
        "drift": {key: summary.to_dict() for key, summary in drift.items()},
    }
