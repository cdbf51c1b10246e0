import math
from collections import deque

import numpy as np
import pytest

from ogmexplore.frontier import (Frontier, FrontierError, best_viewpoint,
                                 detect_frontiers, sample_viewpoints)
from ogmexplore.mapping import L_MAX, OccupancyGrid
from ogmexplore.sensing import Pose2D


def frontier_oracle(grid, robot_cell, min_size=3):
    """Exhaustive reference: BFS reachability, whole-map adjacency scan,
    then 8-connected clustering — all plain Python."""
    h, w = grid.height, grid.width
    free = grid.log_odds < 0.0
    unknown = grid.log_odds == 0.0
    reach = np.zeros((h, w), bool)
    q = deque([robot_cell])
    reach[robot_cell] = True
    while q:
        r, c = q.popleft()
        for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            nr, nc = r + dr, c + dc
            if 0 <= nr < h and 0 <= nc < w and free[nr, nc] and not reach[nr, nc]:
                reach[nr, nc] = True
                q.append((nr, nc))
    is_frontier = np.zeros((h, w), bool)
    for r in range(h):
        for c in range(w):
            if not unknown[r, c]:
                continue
            for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                nr, nc = r + dr, c + dc
                if 0 <= nr < h and 0 <= nc < w and reach[nr, nc]:
                    is_frontier[r, c] = True
                    break
    visited = np.zeros((h, w), bool)
    clusters = []
    for r in range(h):
        for c in range(w):
            if not is_frontier[r, c] or visited[r, c]:
                continue
            comp = []
            q = deque([(r, c)])
            visited[r, c] = True
            while q:
                cr, cc = q.popleft()
                comp.append((cr, cc))
                for dr in (-1, 0, 1):
                    for dc in (-1, 0, 1):
                        nr, nc = cr + dr, cc + dc
                        if (0 <= nr < h and 0 <= nc < w and is_frontier[nr, nc]
                                and not visited[nr, nc]):
                            visited[nr, nc] = True
                            q.append((nr, nc))
            if len(comp) >= min_size:
                clusters.append(frozenset(comp))
    return clusters


def random_partial_map(rng, h=30, w=30):
    grid = OccupancyGrid.unknown(h, w)
    draw = rng.random((h, w))
    grid.log_odds[draw < 0.35] = -1.0
    grid.log_odds[(draw >= 0.35) & (draw < 0.5)] = 1.0
    free = np.argwhere(grid.log_odds < 0)
    robot = tuple(free[rng.integers(len(free))])
    return grid, (int(robot[0]), int(robot[1]))


def test_fully_known_map_has_no_frontiers():
    grid = OccupancyGrid.unknown(12, 12)
    grid.log_odds[:, :] = -1.0
    grid.log_odds[0, :] = grid.log_odds[-1, :] = 1.0
    grid.log_odds[:, 0] = grid.log_odds[:, -1] = 1.0
    assert detect_frontiers(grid, Pose2D(0.55, 0.55)) == []


def test_free_disk_has_one_rim_frontier():
    grid = OccupancyGrid.unknown(21, 21)
    rows, cols = np.indices((21, 21))
    disk = (rows - 10) ** 2 + (cols - 10) ** 2 <= 9
    grid.log_odds[disk] = -1.0
    fronts = detect_frontiers(grid, Pose2D(1.05, 1.05))
    assert len(fronts) == 1
    got = set(map(tuple, fronts[0].cells))
    want = next(iter(frontier_oracle(grid, (10, 10))))
    assert got == set(want)
    assert fronts[0].centroid == (10, 10)


def test_two_openings_give_two_frontiers():
    # two rooms joined by a walled corridor; the unknown regions past the
    # two openings form separate frontiers
    grid = OccupancyGrid.unknown(21, 31)
    grid.log_odds[:, :] = 1.0
    grid.log_odds[5:16, 2:9] = -1.0          # left room
    grid.log_odds[9:12, 9:22] = -1.0         # corridor
    grid.log_odds[5:16, 22:29] = -1.0        # right room
    grid.log_odds[6:9, 4:7] = 0.0            # unknown patch in left room
    grid.log_odds[12:15, 24:27] = 0.0        # unknown patch in right room
    fronts = detect_frontiers(grid, Pose2D(1.05, 1.05))
    oracle = frontier_oracle(grid, (10, 10))
    assert len(fronts) == 2
    assert {frozenset(map(tuple, f.cells)) for f in fronts} == set(oracle)


def test_detection_matches_oracle_on_random_maps():
    rng = np.random.default_rng(20)
    for _ in range(25):
        grid, robot = random_partial_map(rng)
        pose = Pose2D((robot[1] + 0.5) * 0.1, (robot[0] + 0.5) * 0.1)
        got = {frozenset(map(tuple, f.cells)) for f in detect_frontiers(grid, pose)}
        want = set(frontier_oracle(grid, robot))
        assert got == want


def test_min_size_filter():
    grid = OccupancyGrid.unknown(10, 10)
    grid.log_odds[:, :] = -1.0
    grid.log_odds[0, :] = grid.log_odds[-1, :] = 1.0
    grid.log_odds[:, 0] = grid.log_odds[:, -1] = 1.0
    grid.log_odds[4, 4] = 0.0  # single-cell unknown speck
    assert detect_frontiers(grid, Pose2D(0.15, 0.15)) == []
    fronts = detect_frontiers(grid, Pose2D(0.15, 0.15), min_frontier_size=1)
    assert len(fronts) == 1


def test_robot_on_unknown_cell_raises():
    grid = OccupancyGrid.unknown(10, 10)
    with pytest.raises(FrontierError):
        detect_frontiers(grid, Pose2D(0.55, 0.55))


def test_frontier_ordering_and_ids_deterministic():
    rng = np.random.default_rng(21)
    grid, robot = random_partial_map(rng)
    pose = Pose2D((robot[1] + 0.5) * 0.1, (robot[0] + 0.5) * 0.1)
    a = detect_frontiers(grid, pose)
    b = detect_frontiers(grid, pose)
    assert [f.id for f in a] == list(range(len(a)))
    for fa, fb in zip(a, b):
        assert fa.id == fb.id and np.array_equal(fa.cells, fb.cells)
    firsts = [int(f.cells[0][0]) * grid.width + int(f.cells[0][1]) for f in a]
    assert firsts == sorted(firsts)


# --- viewpoints --------------------------------------------------------------


def ring_map(h=40, w=40):
    grid = OccupancyGrid.unknown(h, w)
    grid.log_odds[:, :] = -1.0
    return grid


def test_viewpoints_surrounded_by_walls_is_empty():
    grid = OccupancyGrid.unknown(40, 40)
    grid.log_odds[:, :] = L_MAX
    f = Frontier(id=0, cells=np.array([[20, 20]]), centroid=(20, 20))
    assert sample_viewpoints(f, grid, rings=(0.4,), per_ring=8) == []


def test_viewpoints_cardinal_directions():
    grid = ring_map()
    f = Frontier(id=0, cells=np.array([[20, 20]]), centroid=(20, 20))
    vps = sample_viewpoints(f, grid, rings=(0.4,), per_ring=4)
    assert len(vps) == 4
    cells = [vp.cell(0.1) for vp in vps]
    assert cells == [(20, 24), (24, 20), (20, 16), (16, 20)]  # E, N, W, S


def test_viewpoints_off_map_dropped():
    grid = ring_map(10, 10)
    f = Frontier(id=0, cells=np.array([[5, 5]]), centroid=(5, 5))
    vps = sample_viewpoints(f, grid, rings=(2.0,), per_ring=8)
    assert vps == []


def test_viewpoint_cells_are_free():
    rng = np.random.default_rng(22)
    grid, robot = random_partial_map(rng, 40, 40)
    pose = Pose2D((robot[1] + 0.5) * 0.1, (robot[0] + 0.5) * 0.1)
    for f in detect_frontiers(grid, pose):
        for vp in sample_viewpoints(f, grid):
            r, c = vp.cell(grid.resolution)
            assert grid.log_odds[r, c] < 0.0


def test_best_viewpoint_zero_metric_tie_break():
    grid = ring_map()
    cands = [Pose2D(2.05, 2.05)]
    vp = best_viewpoint(cands, 3, lambda p: 0.0, 0.1, grid.width)
    assert vp.info == 0.0
    assert vp.pose.yaw == 0.0
    assert vp.frontier_id == 3


def test_best_viewpoint_faces_the_unknown_half():
    # metric: count of unknown cells in a crude cone; the best yaw must
    # point into the unknown half-plane (x > 3.0)
    grid = OccupancyGrid.unknown(60, 60)
    grid.log_odds[:, :30] = -1.0

    def metric(pose):
        score = 0
        for r in range(60):
            for c in range(30, 60):
                dx = (c + 0.5) * 0.1 - pose.x
                dy = (r + 0.5) * 0.1 - pose.y
                ang = abs((math.atan2(dy, dx) - pose.yaw + math.pi) % (2 * math.pi) - math.pi)
                if ang < math.pi / 4 and math.hypot(dx, dy) < 2.0:
                    score += 1
        return float(score)

    vp = best_viewpoint([Pose2D(2.05, 3.05)], 0, metric, 0.1, grid.width)
    assert abs(vp.pose.yaw) < math.pi / 3  # facing +x


def test_best_viewpoint_picks_highest_value():
    vals = {(1.05, 1.05): 2.0, (2.05, 2.05): 3.5}
    cands = [Pose2D(*k) for k in vals]
    vp = best_viewpoint(cands, 0, lambda p: vals[(p.x, p.y)], 0.1, 100)
    assert (vp.pose.x, vp.pose.y) == (2.05, 2.05)
    assert vp.info == 3.5


def test_best_viewpoint_empty_candidates_raises():
    with pytest.raises(FrontierError):
        best_viewpoint([], 0, lambda p: 1.0, 0.1, 10)
