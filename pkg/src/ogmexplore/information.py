"""Information metrics for viewpoint evaluation.

Seven metrics drive the planner:
  nearest        constant 1 (pure distance-greedy exploration)
  volumetric     count of unknown cells visible from the pose
  beam MI        per-beam Shannon mutual information with a uniform sensor
                 noise window, O(n) per beam via prefix sums
  and their prediction-map variants (deterministic raycast on the predicted
  map, prediction variance with either visibility rule, and MI with
  prediction-derived hit probabilities).

Two independent slow oracles accompany the fast MI path: a direct numerical
integration of the same model, and an entropy-difference computation that
never touches the per-cell gain function.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .mapping import OccupancyGrid, PredictionMap, WALL_LOG_ODDS
from .sensing import BeamTrace, Pose2D, SensorParams


@dataclass
class FsmiParams:
    """Uniform-noise MI parameters.

    noise_half_width is in cells: a measurement whose true first-occupied
    cell is k lands uniformly in cells k-h..k+h. The odds ratios shared
    with the inverse sensor model scale the per-cell Bayes update.
    """
    noise_half_width: int = 1
    delta_occ: float = 3.0
    delta_free: float = 1.0 / 3.0

    def __post_init__(self):
        if self.noise_half_width < 1:
            raise ValueError("noise_half_width must be >= 1")
        if self.delta_occ <= 1.0 or not (0.0 < self.delta_free < 1.0):
            raise ValueError("need delta_occ > 1 and 0 < delta_free < 1")


@dataclass
class BeamOdds:
    """Per-cell odds ratios along a beam plus the hit distribution.

    e[k] for k >= 1 is the probability the beam first terminates at cell k;
    e[0] is the all-cells-free residual so the whole vector sums to one.
    """
    r: np.ndarray
    e: np.ndarray


class MetricError(ValueError):
    pass


def info_nearest(viewpoint=None) -> float:
    """Constant information: reduces the planner to nearest-frontier."""
    return 1.0


def cell_gain(delta: float, r: float) -> float:
    """Information gained about one cell by a measurement that multiplies
    its occupancy odds r by delta.

    This is the expected KL divergence of the Bayes update,
    log((1+r)/(1+dr)) + dr*log(delta)/(1+dr); it is 0 at delta == 1 and
    non-negative everywhere. See tests for how it relates to the plain
    entropy difference of the update (they coincide exactly at r == 1).
    """
    if delta <= 0.0 or r <= 0.0:
        raise ValueError("delta and r must be positive")
    return _kernels.cell_gain_scalar(delta, r)


def hit_probabilities(odds: np.ndarray) -> BeamOdds:
    """Hit distribution for a beam over cells with occupancy probabilities o.

    e[k] = o_k * prod_{i<k} (1 - o_i); the residual prod(1 - o_i) is e[0].
    """
    o = np.asarray(odds, np.float64)
    if o.ndim != 1:
        raise ValueError("expected a 1-d array of probabilities")
    if o.size and (o.min() <= 0.0 or o.max() >= 1.0):
        raise ValueError("probabilities must lie strictly inside (0, 1)")
    n = o.shape[0]
    e = np.empty(n + 1, np.float64)
    surv = 1.0
    for k in range(n):
        e[k + 1] = o[k] * surv
        surv *= 1.0 - o[k]
    e[0] = surv
    return BeamOdds(r=o / (1.0 - o), e=e)


def fsmi_beam(trace: BeamTrace, odds: BeamOdds, params: FsmiParams,
              prior_r: np.ndarray | None = None) -> float:
    """O(n) mutual information of a single beam (prefix-sum path).

    prior_r overrides the odds entering the per-cell gain terms; hit
    probabilities always come from odds.
    """
    n = odds.r.shape[0]
    if trace.n != n:
        raise ValueError("trace and odds describe different cell counts")
    if n == 0:
        raise ValueError("trace is empty")
    lo_hit = np.log(odds.r)
    lo_prior = lo_hit if prior_r is None else np.log(np.asarray(prior_r, np.float64))
    return _kernels.fsmi_single_beam(lo_hit, lo_prior, params.delta_occ,
                                     params.delta_free, params.noise_half_width)


def _gain_per_hit_cell(r: np.ndarray, params: FsmiParams) -> np.ndarray:
    """value[m] = total gain over the beam when the measurement lands in
    cell m (1-based): occupied update for m, free updates before it.

    Computed with per-m slice sums on purpose — no prefix-sum reuse.
    """
    n = r.shape[0]
    f_occ = np.array([cell_gain(params.delta_occ, rj) for rj in r])
    f_free = np.array([cell_gain(params.delta_free, rj) for rj in r])
    vals = np.empty(n + 1, np.float64)
    vals[0] = 0.0
    for m in range(1, n + 1):
        vals[m] = f_occ[m - 1] + f_free[: m - 1].sum()
    return vals


def _interval_substeps(a: float, b: float, z_step: float) -> np.ndarray:
    steps = max(1, int(math.ceil((b - a) / z_step)))
    return a + (np.arange(steps) + 0.5) * (b - a) / steps


def fsmi_beam_oracle(trace: BeamTrace, odds: BeamOdds, params: FsmiParams,
                     z_step: float, prior_r: np.ndarray | None = None) -> float:
    """Direct numerical evaluation of the same beam-MI model.

    For every hypothesis k the measurement falls with mass 1/(2h+1) into
    each cell interval k-h..k+h; the integrand is re-evaluated at substep
    midpoints and mapped back to a cell by searching the boundary array, so
    this path shares nothing with the prefix-sum implementation.
    """
    n = odds.r.shape[0]
    if trace.n != n:
        raise ValueError("trace and odds describe different cell counts")
    if n == 0:
        return 0.0
    bounds = np.asarray(trace.boundaries, np.float64)
    prior = odds.r if prior_r is None else np.asarray(prior_r, np.float64)
    vals = _gain_per_hit_cell(prior, params)
    h = params.noise_half_width
    mass = 1.0 / (2 * h + 1)
    mi = 0.0
    for k in range(n + 1):
        pk = odds.e[k]
        for m in range(k - h, k + h + 1):
            if m < 1 or m > n:
                continue  # measurement mass outside the beam: no update
            zs = _interval_substeps(bounds[m - 1], bounds[m], z_step)
            cell_idx = np.searchsorted(bounds, zs, side="right")
            cell_idx[cell_idx > n] = 0  # beyond the last boundary: no cell
            integral = vals[cell_idx].mean()
            mi += pk * mass * integral
    return mi


def _binary_entropy(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, np.float64)
    return -(p * np.log(p) + (1.0 - p) * np.log(1.0 - p))


def _bayes(o: np.ndarray, delta: float) -> np.ndarray:
    r = delta * o / (1.0 - o)
    return r / (1.0 + r)


def entropy_mi_oracle(odds: BeamOdds, params: FsmiParams, z_step: float,
                      boundaries: np.ndarray | None = None) -> float:
    """Expected entropy reduction of the beam's cells under the same
    measurement model, computed from entropies and Bayes updates only.

    This is the semantic ground truth for the gain function: no gain terms,
    no prefix sums. boundaries defaults to unit-width cells (the model is
    index-based, so widths cancel).
    """
    n = odds.r.shape[0]
    if n == 0:
        return 0.0
    o = odds.r / (1.0 + odds.r)
    if boundaries is None:
        boundaries = np.arange(n + 1, dtype=np.float64)
        z_step = min(z_step, 0.1)
    bounds = np.asarray(boundaries, np.float64)
    hb_prior = _binary_entropy(o)
    hb_occ = _binary_entropy(_bayes(o, params.delta_occ))
    hb_free = _binary_entropy(_bayes(o, params.delta_free))
    s_prior = hb_prior.sum()

    def posterior_entropy(m: int) -> float:
        # measurement landed in cell m: occupied update there, free before
        return hb_free[: m - 1].sum() + hb_occ[m - 1] + hb_prior[m:].sum()

    h = params.noise_half_width
    mass = 1.0 / (2 * h + 1)
    expected_posterior = 0.0
    for k in range(n + 1):
        pk = odds.e[k]
        for m in range(k - h, k + h + 1):
            if m < 1 or m > n:
                expected_posterior += pk * mass * s_prior  # no update
                continue
            zs = _interval_substeps(bounds[m - 1], bounds[m], z_step)
            cell_idx = np.searchsorted(bounds, zs, side="right")
            vals = np.array([posterior_entropy(int(ci)) if 1 <= ci <= n else s_prior
                             for ci in cell_idx])
            expected_posterior += pk * mass * vals.mean()
    return s_prior - expected_posterior


def expected_posterior_occupancy(odds: BeamOdds, params: FsmiParams) -> np.ndarray:
    """E_z[posterior occupancy] per cell under the beam measurement model.

    Used by the tests to characterize the gap between the KL-based gain and
    the entropy difference: gap = sum_j ln(r_j) * (o_j - E[posterior_j]).
    """
    n = odds.r.shape[0]
    o = odds.r / (1.0 + odds.r)
    post_occ = _bayes(o, params.delta_occ)
    post_free = _bayes(o, params.delta_free)
    h = params.noise_half_width
    mass = 1.0 / (2 * h + 1)
    expected = np.zeros(n, np.float64)
    accounted = np.zeros(n, np.float64)
    for k in range(n + 1):
        pk = odds.e[k]
        for m in range(k - h, k + h + 1):
            if m < 1 or m > n:
                continue
            w = pk * mass
            expected[m - 1] += w * post_occ[m - 1]
            if m >= 2:
                expected[: m - 1] += w * post_free[: m - 1]
            expected[m:] += w * o[m:]
            accounted += w
    return expected + (1.0 - accounted) * o


def _pose_free_or_raise(grid: OccupancyGrid, v: Pose2D) -> None:
    r, c = v.cell(grid.resolution)
    if not (0 <= r < grid.height and 0 <= c < grid.width):
        raise MetricError(f"viewpoint cell ({r}, {c}) outside map")
    if not grid.log_odds[r, c] < 0.0:
        raise MetricError(f"viewpoint cell ({r}, {c}) is not free")


def volumetric_gain(grid: OccupancyGrid, v: Pose2D, sensor: SensorParams,
                    source: str = "current",
                    prediction: PredictionMap | None = None,
                    dedup: bool = True) -> float:
    """Number of unknown cells visible from v.

    Rays pass free and unknown cells and stop at occupied ones, judged on
    the current map (source="current") or on the prediction map thresholded
    at 0.5 (source="prediction"); counted cells are always the ones unknown
    in the current map.
    """
    _pose_free_or_raise(grid, v)
    if source == "current":
        blocked = (grid.log_odds > 0.0).astype(np.uint8)
    elif source == "prediction":
        if prediction is None:
            raise MetricError("prediction map required for source='prediction'")
        blocked = (prediction.probabilities > 0.5).astype(np.uint8)
    else:
        raise MetricError(f"unknown ray source {source!r}")
    values = grid.unknown_mask().astype(np.float64)
    return _kernels.visible_sum(blocked, values, v.x, v.y, v.yaw, sensor.fov,
                                sensor.beam_count, sensor.max_range,
                                grid.resolution, dedup)


def variance_info(var_map: np.ndarray, grid: OccupancyGrid, v: Pose2D,
                  sensor: SensorParams, ray_source: str = "current",
                  prediction: PredictionMap | None = None,
                  dedup: bool = True) -> float:
    """Sum of prediction variance over cells visible from v.

    ray_source picks the visibility rule: the current map or the
    thresholded prediction map.
    """
    _pose_free_or_raise(grid, v)
    if ray_source == "current":
        blocked = (grid.log_odds > 0.0).astype(np.uint8)
    elif ray_source == "prediction":
        if prediction is None:
            raise MetricError("prediction map required for ray_source='prediction'")
        blocked = (prediction.probabilities > 0.5).astype(np.uint8)
    else:
        raise MetricError(f"unknown ray source {ray_source!r}")
    return _kernels.visible_sum(blocked, np.asarray(var_map, np.float64),
                                v.x, v.y, v.yaw, sensor.fov, sensor.beam_count,
                                sensor.max_range, grid.resolution, dedup)


def fsmi(map_source: OccupancyGrid | PredictionMap, v: Pose2D,
         sensor: SensorParams, params: FsmiParams,
         current: OccupancyGrid | None = None,
         prior_source: str = "same") -> float:
    """Total beam MI from a viewpoint: sum of per-beam MI over the fan.

    map_source provides the odds the hit probabilities are built from (the
    current map for plain MI, the prediction map for the predictive
    variant). prior_source="current" switches the per-cell gain odds to the
    current map while keeping prediction-based hit probabilities; "same"
    uses map_source for both. Beams stop after a cell with p > 0.999.
    """
    if isinstance(map_source, PredictionMap):
        lo_hit = map_source.log_odds()
        res = map_source.resolution
    else:
        lo_hit = map_source.log_odds
        res = map_source.resolution
    if prior_source == "same":
        lo_prior = lo_hit
    elif prior_source == "current":
        if current is None:
            raise MetricError("current map required for prior_source='current'")
        lo_prior = current.log_odds
    else:
        raise MetricError(f"unknown prior source {prior_source!r}")
    check = current if current is not None else map_source
    if isinstance(check, OccupancyGrid):
        _pose_free_or_raise(check, v)
    if sensor.beam_count == 0:
        return 0.0
    return _kernels.fsmi_viewpoint(lo_hit, lo_prior, v.x, v.y, v.yaw,
                                   sensor.fov, sensor.beam_count,
                                   sensor.max_range, res, params.delta_occ,
                                   params.delta_free, params.noise_half_width,
                                   WALL_LOG_ODDS)
