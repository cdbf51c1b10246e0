"""Simulated depth sensor and the shared ray-traversal primitive."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels


def normalize_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    a = math.fmod(a, 2.0 * math.pi)
    if a <= -math.pi:
        a += 2.0 * math.pi
    elif a > math.pi:
        a -= 2.0 * math.pi
    return a


@dataclass
class Pose2D:
    x: float
    y: float
    yaw: float = 0.0

    def __post_init__(self):
        self.yaw = normalize_angle(self.yaw)

    def cell(self, resolution: float) -> tuple[int, int]:
        """(row, col) of the cell containing this pose."""
        return int(math.floor(self.y / resolution)), int(math.floor(self.x / resolution))


@dataclass
class SensorParams:
    max_range: float = 5.0
    fov: float = math.pi / 2.0
    beam_count: int = 91

    def __post_init__(self):
        if self.max_range <= 0:
            raise ValueError("max_range must be positive")
        if not (0.0 < self.fov <= 2.0 * math.pi):
            raise ValueError("fov must be in (0, 2*pi]")
        if self.beam_count < 1:
            raise ValueError("beam_count must be >= 1")

    def angles(self, yaw: float) -> np.ndarray:
        """Beam angles uniformly spanning [yaw - fov/2, yaw + fov/2]."""
        if self.beam_count == 1:
            return np.array([yaw])
        return yaw - 0.5 * self.fov + self.fov * np.arange(self.beam_count) / (self.beam_count - 1)


@dataclass
class Scan:
    origin: Pose2D
    angles: np.ndarray          # absolute beam angles, radians
    ranges: np.ndarray          # measured distances, meters
    hits: np.ndarray            # bool per beam; False means max-range miss
    max_range: float

    @property
    def beams(self):
        return list(zip(self.angles.tolist(), self.ranges.tolist(),
                        self.hits.astype(bool).tolist()))


@dataclass
class BeamTrace:
    """Cells crossed by one ray, with entry distances.

    boundaries[i] is the distance at which the ray enters cells[i];
    boundaries[n] is the exit of the last cell (clipped to the ray length).
    The origin cell is excluded by design: the robot's own cell is known.
    """
    rows: np.ndarray
    cols: np.ndarray
    boundaries: np.ndarray

    @property
    def n(self) -> int:
        return int(self.rows.shape[0])

    @property
    def cells(self) -> list[tuple[int, int]]:
        return list(zip(self.rows.tolist(), self.cols.tolist()))


class SensingError(ValueError):
    pass


def trace_beam(grid_shape: tuple[int, int], resolution: float, origin: Pose2D,
               angle: float, max_range: float) -> BeamTrace:
    """Every cell whose interior the ray segment crosses, with entry distances.

    Traversal is independent of occupancy; truncation at obstacles is the
    caller's policy.
    """
    h, w = grid_shape
    r0, c0 = origin.cell(resolution)
    if not (0 <= r0 < h and 0 <= c0 < w):
        raise SensingError(f"ray origin ({origin.x}, {origin.y}) outside grid")
    cap = _kernels.rows_capacity(max_range, resolution)
    rows = np.empty(cap, np.int64)
    cols = np.empty(cap, np.int64)
    bounds = np.empty(cap + 1, np.float64)
    n = _kernels.trace_cells(origin.x, origin.y, math.cos(angle), math.sin(angle),
                             max_range, resolution, h, w, rows, cols, bounds)
    return BeamTrace(rows[:n].copy(), cols[:n].copy(), bounds[:n + 1].copy() if n else np.empty(0))


def simulate_scan(world, pose: Pose2D, sensor: SensorParams) -> Scan:
    """Noise-free ground-truth scan of a world grid.

    Each beam reports the entry distance of the first occupied cell, or
    max_range with hit=False if nothing blocks it.
    """
    r, c = pose.cell(world.resolution)
    if not (0 <= r < world.height and 0 <= c < world.width):
        raise SensingError("pose outside world")
    if world.cells[r, c]:
        raise SensingError(f"pose cell ({r}, {c}) is occupied")
    angles = sensor.angles(pose.yaw)
    ranges = np.empty(sensor.beam_count, np.float64)
    hits = np.empty(sensor.beam_count, np.uint8)
    _kernels.scan_world(world.cells, pose.x, pose.y, angles, sensor.max_range,
                        world.resolution, ranges, hits)
    return Scan(pose, angles, ranges, hits.astype(bool), sensor.max_range)
