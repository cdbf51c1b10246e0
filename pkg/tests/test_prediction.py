import math

import numpy as np
import pytest

from ogmexplore.mapping import AREA_SIZE, OccupancyGrid, extract_crop
from ogmexplore.prediction import (InpaintPredictor, PredictionEnsemble,
                                   compose_variance_map, ensemble_mean,
                                   ensemble_variance, predict)


def room_map(h=300, w=300):
    """Half-known map: free room with a wall stub ending in unknown space."""
    grid = OccupancyGrid.unknown(h, w)
    grid.log_odds[100:160, 60:150] = -2.0
    grid.log_odds[100, 60:150] = 2.0
    grid.log_odds[159, 60:150] = 2.0
    grid.log_odds[100:160, 60] = 2.0
    grid.log_odds[130, 100:150] = 2.0   # interior wall heading into unknown
    return grid


def fully_known_crop():
    grid = OccupancyGrid.unknown(300, 300)
    grid.log_odds[:, :] = -1.5
    grid.log_odds[140:160, 140:160] = 1.5
    return extract_crop(grid, (150, 150))


def test_known_area_is_reproduced_exactly():
    crop = fully_known_crop()
    ens = predict(InpaintPredictor(), crop, 4, seed=9)
    area = np.s_[88:168, 88:168]
    want = crop.occupied[area].astype(float)
    for j in range(ens.n_samples):
        assert np.array_equal(ens.samples[j], want)


def test_single_sample_variance_is_exactly_zero():
    crop = extract_crop(room_map(), (130, 150))
    ens = predict(InpaintPredictor(), crop, 1, seed=0)
    assert (ensemble_variance(ens) == 0.0).all()


def test_prediction_is_deterministic():
    crop = extract_crop(room_map(), (130, 150))
    a = predict(InpaintPredictor(), crop, 5, seed=123)
    b = predict(InpaintPredictor(), crop, 5, seed=123)
    assert np.array_equal(a.samples, b.samples)
    c = predict(InpaintPredictor(), crop, 5, seed=124)
    assert not np.array_equal(a.samples, c.samples)


def test_known_cells_exact_in_every_sample():
    grid = room_map()
    centroid = (130, 149)
    crop = extract_crop(grid, centroid)
    ens = predict(InpaintPredictor(), crop, 6, seed=5)
    area = np.s_[88:168, 88:168]
    known = (crop.free | crop.occupied)[area]
    want = crop.occupied[area].astype(float)
    for j in range(ens.n_samples):
        assert np.array_equal(ens.samples[j][known], want[known])


def test_samples_are_structured_not_iid():
    # wall continuation should put occupied mass directly ahead of the wall
    # stub far more often than in open unknown space; compare blurred wall
    # cross-sections (area index = map cell - (centroid - 40))
    grid = room_map()
    centroid = (130, 150)
    crop = extract_crop(grid, centroid)
    ens = predict(InpaintPredictor(), crop, 30, seed=7)
    mean = ensemble_mean(ens)
    # wall stub ends at map (130, 149); cells ahead are area rows 40
    ahead_of_wall = mean[39:42, 41].sum()   # map rows 129..131, col 151
    control = mean[18:21, 41].sum()         # same depth, 2 m off the wall line
    assert ahead_of_wall > 2.0 * control
    assert ahead_of_wall > 0.3


def test_ensemble_mean_basic_and_oracle():
    s = np.zeros((2, AREA_SIZE, AREA_SIZE))
    s[0, 0, 0], s[1, 0, 0] = 0.2, 0.4
    ens = PredictionEnsemble(s, (0, 0))
    assert ensemble_mean(ens)[0, 0] == pytest.approx(0.3)
    same = PredictionEnsemble(np.full((3, AREA_SIZE, AREA_SIZE), 0.7), (0, 0))
    assert np.allclose(ensemble_mean(same), 0.7, atol=1e-15)

    rng = np.random.default_rng(8)
    samples = rng.random((10, AREA_SIZE, AREA_SIZE))
    ens = PredictionEnsemble(samples, (0, 0))
    got = ensemble_mean(ens)
    want = np.empty((AREA_SIZE, AREA_SIZE))
    for r in range(AREA_SIZE):
        for c in range(AREA_SIZE):
            want[r, c] = math.fsum(samples[:, r, c]) / 10.0
    assert np.abs(got - want).max() <= 1e-12


def test_ensemble_variance_basic_and_oracle():
    s = np.zeros((2, AREA_SIZE, AREA_SIZE))
    s[0, 0, 0], s[1, 0, 0] = 0.2, 0.4
    ens = PredictionEnsemble(s, (0, 0))
    assert ensemble_variance(ens)[0, 0] == pytest.approx(0.01)
    const = PredictionEnsemble(np.full((4, AREA_SIZE, AREA_SIZE), 0.3), (0, 0))
    assert (ensemble_variance(const) == 0.0).all()

    rng = np.random.default_rng(9)
    samples = rng.random((7, AREA_SIZE, AREA_SIZE))
    ens = PredictionEnsemble(samples, (0, 0))
    got = ensemble_variance(ens)
    want = np.empty((AREA_SIZE, AREA_SIZE))
    for r in range(AREA_SIZE):
        for c in range(AREA_SIZE):
            xs = samples[:, r, c]
            m = math.fsum(xs) / 7.0
            want[r, c] = math.fsum(x * x for x in xs) / 7.0 - m * m
    assert np.abs(got - want).max() <= 1e-12


def test_mean_and_variance_permutation_invariant():
    # invariant up to summation round-off (the estimator is symmetric)
    rng = np.random.default_rng(10)
    samples = rng.random((6, AREA_SIZE, AREA_SIZE))
    a = PredictionEnsemble(samples, (0, 0))
    b = PredictionEnsemble(samples[::-1].copy(), (0, 0))
    assert np.allclose(ensemble_mean(a), ensemble_mean(b), atol=1e-15)
    assert np.allclose(ensemble_variance(a), ensemble_variance(b), atol=1e-15)


def test_variance_bounded_by_quarter():
    grid = room_map()
    crop = extract_crop(grid, (130, 150))
    ens = predict(InpaintPredictor(), crop, 10, seed=3)
    var = ensemble_variance(ens)
    assert var.min() >= 0.0
    assert var.max() <= 0.25


def test_variance_nonzero_somewhere_in_ambiguous_space():
    grid = room_map()
    crop = extract_crop(grid, (130, 150))
    ens = predict(InpaintPredictor(), crop, 10, seed=3)
    assert ensemble_variance(ens).max() > 0.0


def test_ensemble_validation():
    with pytest.raises(ValueError):
        PredictionEnsemble(np.zeros((0, AREA_SIZE, AREA_SIZE)), (0, 0))
    with pytest.raises(ValueError):
        PredictionEnsemble(np.full((1, AREA_SIZE, AREA_SIZE), 1.2), (0, 0))
    with pytest.raises(ValueError):
        PredictionEnsemble(np.zeros((1, 10, 10)), (0, 0))
    crop = extract_crop(room_map(), (130, 150))
    with pytest.raises(ValueError):
        predict(InpaintPredictor(), crop, 0, seed=1)


def test_compose_variance_map_zero_outside_predicted():
    grid = OccupancyGrid.unknown(200, 200)
    grid.log_odds[90:110, 90:110] = -1.0
    var = np.full((AREA_SIZE, AREA_SIZE), 0.1)
    out = compose_variance_map(grid, [((100, 100), var)])
    assert out[100, 100] == 0.0          # known cell: never predicted
    assert out[100, 85] == pytest.approx(0.1)   # unknown, inside area
    assert out[10, 10] == 0.0            # outside every area
    assert out.shape == (200, 200)
