"""Frontier detection, clustering and viewpoint candidates."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import ndimage

from .mapping import OccupancyGrid
from .sensing import Pose2D

FOUR = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])
EIGHT = np.ones((3, 3), int)

DEFAULT_RINGS = (0.4, 0.8, 1.2)
DEFAULT_PER_RING = 12
MIN_FRONTIER_SIZE = 3
YAW_CANDIDATES = tuple(k * math.pi / 4.0 for k in range(8))


class FrontierError(ValueError):
    pass


@dataclass
class Frontier:
    id: int
    cells: np.ndarray       # (k, 2) row/col, row-major sorted
    centroid: tuple[int, int]


@dataclass
class Viewpoint:
    pose: Pose2D
    frontier_id: int
    info: float


def detect_frontiers(grid: OccupancyGrid, robot: Pose2D,
                     min_frontier_size: int = MIN_FRONTIER_SIZE) -> list[Frontier]:
    """Unknown cells bordering free space reachable from the robot.

    Reachability is the 4-connected free component containing the robot;
    frontier cells are unknown cells 4-adjacent to it, clustered with
    8-connectivity. Clusters smaller than min_frontier_size are dropped.
    Ordering is deterministic: by smallest row-major cell index.
    """
    r0, c0 = robot.cell(grid.resolution)
    if not (0 <= r0 < grid.height and 0 <= c0 < grid.width) or not grid.log_odds[r0, c0] < 0.0:
        raise FrontierError(f"robot cell ({r0}, {c0}) is not free")
    free = grid.free_mask()
    labels, _ = ndimage.label(free, structure=FOUR)
    reach = labels == labels[r0, c0]
    near_reach = np.zeros_like(reach)
    near_reach[1:, :] |= reach[:-1, :]
    near_reach[:-1, :] |= reach[1:, :]
    near_reach[:, 1:] |= reach[:, :-1]
    near_reach[:, :-1] |= reach[:, 1:]
    frontier_mask = grid.unknown_mask() & near_reach
    clusters, count = ndimage.label(frontier_mask, structure=EIGHT)
    if count == 0:
        return []
    flat = np.flatnonzero(frontier_mask)  # row-major sorted
    labels_at = clusters.reshape(-1)[flat]
    order: list[int] = []
    seen = set()
    for lab in labels_at:
        if lab not in seen:
            seen.add(lab)
            order.append(lab)
    frontiers = []
    for lab in order:
        idx = flat[labels_at == lab]
        if idx.size < min_frontier_size:
            continue
        cells = np.stack([idx // grid.width, idx % grid.width], axis=1)
        centroid = (int(math.floor(cells[:, 0].mean() + 0.5)),
                    int(math.floor(cells[:, 1].mean() + 0.5)))
        frontiers.append(Frontier(id=len(frontiers), cells=cells, centroid=centroid))
    return frontiers


def sample_viewpoints(frontier: Frontier, grid: OccupancyGrid,
                      rings: tuple[float, ...] = DEFAULT_RINGS,
                      per_ring: int = DEFAULT_PER_RING) -> list[Pose2D]:
    """Candidate sensing positions on rings around the frontier centroid.

    Positions are snapped to cell centers and kept only when that cell is
    free; yaw is chosen later. May return an empty list.
    """
    if not rings or per_ring < 1:
        raise FrontierError("need at least one ring and one sample per ring")
    res = grid.resolution
    cy = (frontier.centroid[0] + 0.5) * res
    cx = (frontier.centroid[1] + 0.5) * res
    out = []
    for radius in rings:
        for k in range(per_ring):
            ang = 2.0 * math.pi * k / per_ring
            x = cx + radius * math.cos(ang)
            y = cy + radius * math.sin(ang)
            r = int(math.floor(y / res))
            c = int(math.floor(x / res))
            if not (0 <= r < grid.height and 0 <= c < grid.width):
                continue
            if not grid.log_odds[r, c] < 0.0:
                continue
            out.append(Pose2D((c + 0.5) * res, (r + 0.5) * res, 0.0))
    return out


def best_viewpoint(candidates: list[Pose2D], frontier_id: int,
                   evaluator: Callable[[Pose2D], float],
                   resolution: float, grid_width: int) -> Viewpoint:
    """Pick the candidate/yaw pair with the highest information.

    Each candidate is tried at 8 equally spaced yaws. Ties go to the lowest
    row-major candidate cell, then the lowest yaw index.
    """
    if not candidates:
        raise FrontierError("no viewpoint candidates")
    best = None
    for cand in candidates:
        r, c = cand.cell(resolution)
        cell_key = r * grid_width + c
        for yi, yaw in enumerate(YAW_CANDIDATES):
            pose = Pose2D(cand.x, cand.y, yaw)
            value = evaluator(pose)
            key = (-value, cell_key, yi)
            if best is None or key < best[0]:
                best = (key, pose, value)
    return Viewpoint(pose=best[1], frontier_id=frontier_id, info=float(best[2]))
