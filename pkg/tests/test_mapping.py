import math

import numpy as np
import pytest

from ogmexplore.mapping import (AREA_OFF, AREA_SIZE, CROP_SIZE, L_MAX,
                                InverseSensorModel, OccupancyGrid,
                                compose_prediction_map, extract_crop, update_map)
from ogmexplore.sensing import Pose2D, Scan, SensorParams, simulate_scan, trace_beam
from ogmexplore.world import WorldGrid
from test_sensing import open_box_world


def make_scan(origin, beams, max_range=5.0):
    """Scan from explicit (angle, range, hit) triples."""
    return Scan(origin,
                np.array([b[0] for b in beams], float),
                np.array([b[1] for b in beams], float),
                np.array([b[2] for b in beams], bool),
                max_range)


def sequential_update_oracle(grid, scan, ism):
    """Reference: per-beam scalar walk with explicit dedup marks."""
    marks = {}
    for ang, rng_m, hit in scan.beams:
        trace = trace_beam((grid.height, grid.width), grid.resolution,
                           scan.origin, ang, scan.max_range + grid.resolution)
        for i in range(trace.n):
            cell = (int(trace.rows[i]), int(trace.cols[i]))
            if trace.boundaries[i] < rng_m - 1e-9:
                marks.setdefault(cell, "free")
            else:
                if hit and abs(trace.boundaries[i] - rng_m) <= 1e-9:
                    marks[cell] = "occ"
                break
    out = grid.log_odds.copy()
    for (r, c), kind in marks.items():
        delta = math.log(ism.delta_occ) if kind == "occ" else math.log(ism.delta_free)
        out[r, c] = min(max(out[r, c] + delta, -L_MAX), L_MAX)
    return out


def test_single_free_observation():
    grid = OccupancyGrid.unknown(10, 10)
    ism = InverseSensorModel(delta_occ=3.0, delta_free=1.0 / 3.0)
    scan = make_scan(Pose2D(0.15, 0.55, 0.0), [(0.0, 0.35, True)])
    update_map(grid, scan, ism)
    # beam from x=0.15 along +x, range 0.35: cols 2-4 seen free (entries
    # 0.05/0.15/0.25), col 5 is the hit cell (entry 0.35)
    p = grid.probabilities()
    assert p[5, 2] == pytest.approx(0.25)
    assert p[5, 5] == pytest.approx(0.75)
    assert p[5, 7] == 0.5


def test_occupied_then_free_returns_to_half():
    grid = OccupancyGrid.unknown(10, 10)
    ism = InverseSensorModel(delta_occ=4.0, delta_free=0.25)
    origin = Pose2D(0.15, 0.55, 0.0)
    update_map(grid, make_scan(origin, [(0.0, 0.35, True)]), ism)
    assert grid.probabilities()[5, 5] == pytest.approx(0.8)
    update_map(grid, make_scan(origin, [(0.0, 0.55, True)]), ism)
    assert grid.probabilities()[5, 5] == pytest.approx(0.5, abs=1e-15)


def test_full_scan_matches_sequential_oracle():
    world = open_box_world(30, 30)
    sensor = SensorParams(max_range=5.0, fov=math.pi / 2, beam_count=91)
    ism = InverseSensorModel()
    for yaw in (0.0, 1.1, -2.4):
        pose = Pose2D(1.55, 1.45, yaw)
        scan = simulate_scan(world, pose, sensor)
        grid = OccupancyGrid.unknown(30, 30)
        expected = sequential_update_oracle(grid, scan, ism)
        update_map(grid, scan, ism)
        assert np.array_equal(grid.log_odds, expected)


def test_beam_order_within_scan_is_irrelevant():
    world = open_box_world(25, 25)
    pose = Pose2D(1.25, 1.25, 0.4)
    scan = simulate_scan(world, pose, SensorParams(beam_count=45, max_range=3.0))
    ism = InverseSensorModel()
    a = OccupancyGrid.unknown(25, 25)
    update_map(a, scan, ism)
    order = np.random.default_rng(0).permutation(45)
    shuffled = Scan(pose, scan.angles[order], scan.ranges[order],
                    scan.hits[order], scan.max_range)
    b = OccupancyGrid.unknown(25, 25)
    update_map(b, shuffled, ism)
    assert np.array_equal(a.log_odds, b.log_odds)


def test_odds_product_form_over_update_sequence():
    # repeated single-beam scans: odds must equal the product of the
    # per-observation factors while unclamped
    grid = OccupancyGrid.unknown(10, 10)
    ism = InverseSensorModel(delta_occ=2.0, delta_free=0.5)
    origin = Pose2D(0.15, 0.55, 0.0)
    seq = [(0.35, True), (0.55, True), (0.35, True), (0.75, False)]
    factors = {}
    for rng_m, hit in seq:
        scan = make_scan(origin, [(0.0, rng_m, hit)], max_range=0.8)
        trace = trace_beam((10, 10), 0.1, origin, 0.0, 0.9)
        for i in range(trace.n):
            cell = (int(trace.rows[i]), int(trace.cols[i]))
            if trace.boundaries[i] < rng_m - 1e-9:
                factors[cell] = factors.get(cell, 1.0) * ism.delta_free
            elif hit and abs(trace.boundaries[i] - rng_m) <= 1e-9:
                factors[cell] = factors.get(cell, 1.0) * ism.delta_occ
                break
            else:
                break
        update_map(grid, scan, ism)
    for cell, want in factors.items():
        got = math.exp(grid.log_odds[cell])
        assert got == pytest.approx(want, rel=1e-12)


def test_log_odds_clamped():
    grid = OccupancyGrid.unknown(10, 10)
    ism = InverseSensorModel(delta_occ=1000.0, delta_free=1e-3)
    origin = Pose2D(0.15, 0.55, 0.0)
    for _ in range(5):
        update_map(grid, make_scan(origin, [(0.0, 0.35, True)]), ism)
    assert grid.log_odds.max() == pytest.approx(L_MAX)
    assert grid.log_odds.min() == pytest.approx(-L_MAX)


def test_cells_behind_walls_stay_unknown():
    cells = np.zeros((20, 20), np.uint8)
    cells[0, :] = cells[-1, :] = cells[:, 0] = cells[:, -1] = 1
    cells[:, 10] = 1
    world = WorldGrid(cells, 0.1)
    grid = OccupancyGrid.unknown(20, 20)
    scan = simulate_scan(world, Pose2D(0.55, 1.05, 0.0), SensorParams(beam_count=91))
    update_map(grid, scan, InverseSensorModel())
    assert (grid.log_odds[:, 12:] == 0.0).all()
    assert grid.log_odds[10, 10] > 0.0


def test_out_of_bounds_traversal_cells_skipped():
    grid = OccupancyGrid.unknown(6, 6)
    scan = make_scan(Pose2D(0.35, 0.35, 0.0), [(0.0, 5.0, False)], max_range=5.0)
    update_map(grid, scan, InverseSensorModel())  # beam leaves the 0.6 m map
    assert (grid.log_odds[3, 4:] < 0).all()


# --- crops ---------------------------------------------------------------


def test_crop_at_corner_pads_unknown():
    grid = OccupancyGrid.unknown(40, 40)
    grid.log_odds[:, :] = -1.0
    crop = extract_crop(grid, (0, 0))
    assert crop.unknown[0, 0]
    assert crop.free[128, 128]
    half = CROP_SIZE // 2
    assert crop.free.sum() == 40 * 40
    assert crop.unknown.sum() == CROP_SIZE * CROP_SIZE - 40 * 40


def test_crop_of_unknown_map_is_all_unknown():
    grid = OccupancyGrid.unknown(64, 64)
    crop = extract_crop(grid, (32, 32))
    assert crop.unknown.all()
    assert not crop.free.any() and not crop.occupied.any()


def test_crop_mirrors_sign_pattern():
    grid = OccupancyGrid.unknown(300, 300)
    rows, cols = np.indices((300, 300))
    checker = (rows + cols) % 2 == 0
    grid.log_odds[checker] = 1.5
    grid.log_odds[~checker] = -1.5
    crop = extract_crop(grid, (150, 150))
    sub = checker[150 - 128:150 + 128, 150 - 128:150 + 128]
    assert np.array_equal(crop.occupied, sub)
    assert np.array_equal(crop.free, ~sub)
    assert not crop.unknown.any()


def test_crop_masks_partition_and_area():
    grid = OccupancyGrid.unknown(50, 50)
    grid.log_odds[10:20, 10:20] = -2.0
    grid.log_odds[30:35, 30:35] = 2.0
    crop = extract_crop(grid, (25, 25))
    total = crop.free.astype(int) + crop.occupied.astype(int) + crop.unknown.astype(int)
    assert (total == 1).all()
    assert crop.predicted_area.sum() == AREA_SIZE * AREA_SIZE
    assert crop.predicted_area[AREA_OFF, AREA_OFF]
    assert not crop.predicted_area[AREA_OFF - 1, AREA_OFF]


# --- prediction map composition ------------------------------------------


def test_compose_without_crops_is_identity():
    grid = OccupancyGrid.unknown(30, 30)
    grid.log_odds[5:10, 5:10] = 1.0
    pm = compose_prediction_map(grid, [])
    assert np.array_equal(pm.probabilities, grid.probabilities())
    assert not pm.predicted_mask.any()
    assert np.array_equal(pm.log_odds(), grid.log_odds)


def test_compose_preserves_known_cells():
    grid = OccupancyGrid.unknown(120, 120)
    grid.log_odds[40:80, 40:80] = -2.0
    values = np.full((AREA_SIZE, AREA_SIZE), 0.9)
    pm = compose_prediction_map(grid, [((60, 60), values)])
    known = grid.log_odds != 0.0
    assert np.array_equal(pm.probabilities[known], grid.probabilities()[known])
    assert not pm.predicted_mask[known].any()


def test_compose_last_crop_wins_on_overlap():
    grid = OccupancyGrid.unknown(200, 200)
    grid.log_odds[100, 100] = 0.0  # explicit: stays unknown
    a = np.full((AREA_SIZE, AREA_SIZE), 0.2)
    b = np.full((AREA_SIZE, AREA_SIZE), 0.8)
    pm = compose_prediction_map(grid, [((100, 100), a), ((110, 110), b)])
    # (100,100) covered by both areas: the later crop's value sticks
    assert pm.probabilities[100, 100] == pytest.approx(0.8)
    assert pm.predicted_mask[100, 100]
    # cell covered only by the first (second area starts at row/col 70)
    assert pm.probabilities[65, 65] == pytest.approx(0.2)


def test_compose_rejects_bad_values():
    grid = OccupancyGrid.unknown(100, 100)
    bad = np.full((AREA_SIZE, AREA_SIZE), 1.5)
    with pytest.raises(ValueError):
        compose_prediction_map(grid, [((50, 50), bad)])


def test_unpredicted_unknown_cells_stay_half():
    grid = OccupancyGrid.unknown(300, 300)
    vals = np.full((AREA_SIZE, AREA_SIZE), 0.9)
    pm = compose_prediction_map(grid, [((60, 60), vals)])
    assert pm.probabilities[200, 200] == 0.5
    assert pm.probabilities[60, 60] == pytest.approx(0.9)


def test_ism_validation():
    with pytest.raises(ValueError):
        InverseSensorModel(delta_occ=0.9)
    with pytest.raises(ValueError):
        InverseSensorModel(delta_free=1.5)


def test_map_dumps(tmp_path):
    grid = OccupancyGrid.unknown(8, 8)
    grid.log_odds[2, 2] = 2.0
    grid.dump_ascii(tmp_path / "m.txt")
    text = (tmp_path / "m.txt").read_text().splitlines()
    assert text[0] == "ogm-world 8 8 0.1"
    assert text[3][2] == "#"
    grid.dump_probabilities_csv(tmp_path / "m.csv")
    loaded = np.loadtxt(tmp_path / "m.csv", delimiter=",")
    assert loaded[2, 2] == pytest.approx(grid.probabilities()[2, 2], abs=1e-9)
