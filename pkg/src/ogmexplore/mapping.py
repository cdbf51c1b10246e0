"""Occupancy grid with Bayesian log-odds updates, plus crop extraction and
prediction-map composition."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .sensing import Scan

# Log-odds clamp: keeps cell odds finite so the information metrics stay
# well defined. p saturates at 1000/1001 and 1/1001.
L_MAX = math.log(1000.0)
P_MAX = 1.0 / (1.0 + math.exp(-L_MAX))
P_MIN = 1.0 - P_MAX
# Cells at least this occupied block rays during information evaluation.
WALL_P = 0.999
WALL_LOG_ODDS = math.log(WALL_P / (1.0 - WALL_P))

CROP_SIZE = 256
AREA_SIZE = 80
AREA_OFF = (CROP_SIZE - AREA_SIZE) // 2  # 88


@dataclass
class InverseSensorModel:
    delta_occ: float = 3.0
    delta_free: float = 1.0 / 3.0

    def __post_init__(self):
        if self.delta_occ <= 1.0:
            raise ValueError("delta_occ must be > 1")
        if not (0.0 < self.delta_free < 1.0):
            raise ValueError("delta_free must be in (0, 1)")


@dataclass
class OccupancyGrid:
    """Log-odds raster. log_odds == 0 means unobserved ("unknown")."""
    log_odds: np.ndarray
    resolution: float = 0.1
    origin: tuple[float, float] = (0.0, 0.0)

    @classmethod
    def unknown(cls, height: int, width: int, resolution: float = 0.1) -> "OccupancyGrid":
        return cls(np.zeros((height, width), np.float64), resolution)

    @property
    def height(self) -> int:
        return self.log_odds.shape[0]

    @property
    def width(self) -> int:
        return self.log_odds.shape[1]

    def probabilities(self) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.log_odds))

    def free_mask(self) -> np.ndarray:
        return self.log_odds < 0.0

    def occupied_mask(self) -> np.ndarray:
        return self.log_odds > 0.0

    def unknown_mask(self) -> np.ndarray:
        return self.log_odds == 0.0

    def copy(self) -> "OccupancyGrid":
        return OccupancyGrid(self.log_odds.copy(), self.resolution, self.origin)

    def dump_ascii(self, path: str | Path) -> None:
        lines = [f"ogm-world {self.width} {self.height} {self.resolution}"]
        occ = self.occupied_mask()
        for r in range(self.height):
            lines.append("".join("#" if occ[r, c] else "." for c in range(self.width)))
        Path(path).write_text("\n".join(lines) + "\n")

    def dump_probabilities_csv(self, path: str | Path) -> None:
        np.savetxt(path, self.probabilities(), fmt="%.9f", delimiter=",")


def update_map(grid: OccupancyGrid, scan: Scan, ism: InverseSensorModel) -> OccupancyGrid:
    """Apply one scan in place and return the grid.

    Per beam, every traversed cell strictly before the hit gets the free
    odds factor and the hit cell the occupied factor. Within one scan each
    cell is updated at most once (occupied wins over free).
    """
    r, c = scan.origin.cell(grid.resolution)
    if not (0 <= r < grid.height and 0 <= c < grid.width):
        raise ValueError("scan origin outside map")
    _kernels.apply_scan(grid.log_odds, scan.origin.x, scan.origin.y,
                        np.asarray(scan.angles, np.float64),
                        np.asarray(scan.ranges, np.float64),
                        np.asarray(scan.hits, np.uint8),
                        scan.max_range, grid.resolution,
                        math.log(ism.delta_occ), math.log(ism.delta_free), L_MAX)
    return grid


@dataclass
class CropInput:
    """Four aligned 256x256 masks around a frontier centroid.

    free/occupied/unknown partition the crop; predicted_area marks the
    centered 80x80 block whose unknown cells a predictor should fill.
    """
    free: np.ndarray
    occupied: np.ndarray
    unknown: np.ndarray
    predicted_area: np.ndarray
    center: tuple[int, int]

    def to_channels(self) -> np.ndarray:
        return np.stack([self.free, self.occupied, self.unknown,
                         self.predicted_area]).astype(np.float32)


def extract_crop(grid: OccupancyGrid, centroid: tuple[int, int]) -> CropInput:
    """256x256 crop centered on a cell; off-map regions read as unknown."""
    half = CROP_SIZE // 2
    r0 = centroid[0] - half
    c0 = centroid[1] - half
    lo = np.zeros((CROP_SIZE, CROP_SIZE), np.float64)
    known = np.zeros((CROP_SIZE, CROP_SIZE), bool)
    src_r = slice(max(r0, 0), min(r0 + CROP_SIZE, grid.height))
    src_c = slice(max(c0, 0), min(c0 + CROP_SIZE, grid.width))
    dst_r = slice(src_r.start - r0, src_r.stop - r0)
    dst_c = slice(src_c.start - c0, src_c.stop - c0)
    lo[dst_r, dst_c] = grid.log_odds[src_r, src_c]
    known[dst_r, dst_c] = True
    area = np.zeros((CROP_SIZE, CROP_SIZE), bool)
    area[AREA_OFF:AREA_OFF + AREA_SIZE, AREA_OFF:AREA_OFF + AREA_SIZE] = True
    return CropInput(free=known & (lo < 0.0),
                     occupied=known & (lo > 0.0),
                     unknown=(~known) | (lo == 0.0),
                     predicted_area=area,
                     center=tuple(centroid))


def area_slices(grid: OccupancyGrid, centroid: tuple[int, int]):
    """Map/crop slice pair covering the centered 80x80 block of a crop."""
    half = AREA_SIZE // 2
    r0 = centroid[0] - half
    c0 = centroid[1] - half
    src_r = slice(max(r0, 0), min(r0 + AREA_SIZE, grid.height))
    src_c = slice(max(c0, 0), min(c0 + AREA_SIZE, grid.width))
    loc_r = slice(src_r.start - r0, src_r.stop - r0)
    loc_c = slice(src_c.start - c0, src_c.stop - c0)
    return (src_r, src_c), (loc_r, loc_c)


@dataclass
class PredictionMap:
    """Map probabilities with unknown cells filled in by a predictor.

    Known cells keep their map values; unknown cells outside any predicted
    area stay at 0.5. Values are clamped to the same range the log-odds
    clamp implies so odds stay finite.
    """
    probabilities: np.ndarray
    predicted_mask: np.ndarray
    resolution: float = 0.1
    origin: tuple[float, float] = (0.0, 0.0)
    # carried from the source map so unpredicted cells keep bit-identical
    # odds (the predictive MI metric must coincide with the plain one when
    # nothing was predicted)
    _log_odds: np.ndarray | None = field(default=None, repr=False, compare=False)

    def log_odds(self) -> np.ndarray:
        if self._log_odds is None:
            p = self.probabilities
            self._log_odds = np.log(p / (1.0 - p))
        return self._log_odds


def compose_prediction_map(grid: OccupancyGrid,
                           crops: list[tuple[tuple[int, int], np.ndarray]]) -> PredictionMap:
    """Write predicted probabilities into the map's unknown cells.

    crops are (centroid, 80x80 probability raster) pairs in detection
    order; where areas overlap the last one wins. Cells known in the map
    are never overwritten.
    """
    p = grid.probabilities()
    lo = grid.log_odds.copy()
    unknown = grid.unknown_mask()
    predicted = np.zeros_like(unknown)
    for centroid, values in crops:
        values = np.asarray(values, np.float64)
        if values.shape != (AREA_SIZE, AREA_SIZE):
            raise ValueError(f"predicted area must be {AREA_SIZE}x{AREA_SIZE}")
        if values.min() < 0.0 or values.max() > 1.0:
            raise ValueError("predicted probabilities must be within [0, 1]")
        (src_r, src_c), (loc_r, loc_c) = area_slices(grid, centroid)
        target = unknown[src_r, src_c]
        vals = np.clip(values[loc_r, loc_c], P_MIN, P_MAX)
        block = p[src_r, src_c]
        block[target] = vals[target]
        p[src_r, src_c] = block
        block = lo[src_r, src_c]
        block[target] = np.log(vals[target] / (1.0 - vals[target]))
        lo[src_r, src_c] = block
        pm = predicted[src_r, src_c]
        pm[target] = True
        predicted[src_r, src_c] = pm
    return PredictionMap(p, predicted, grid.resolution, grid.origin, lo)
