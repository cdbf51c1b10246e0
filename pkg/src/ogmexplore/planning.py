"""Path costs, utility, frontier selection and the closed exploration loop."""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np

from . import frontier as frontier_mod
from . import information as info_mod
from .mapping import L_MAX, InverseSensorModel, OccupancyGrid, update_map
from .prediction import (InpaintPredictor, BridgePredictor, PredictionError,
                         compose_variance_map, ensemble_mean, ensemble_variance,
                         predict)
from .mapping import compose_prediction_map, extract_crop
from .sensing import Pose2D, SensorParams, simulate_scan
from .world import WorldGrid, default_start

_SQRT2 = math.sqrt(2.0)

# 8-connected moves: (dr, dc, is_diagonal)
_MOVES = [(-1, 0, 0), (1, 0, 0), (0, -1, 0), (0, 1, 0),
          (-1, -1, 1), (-1, 1, 1), (1, -1, 1), (1, 1, 1)]

UNREACHABLE = math.inf


class PlanningError(ValueError):
    pass


@dataclass
class UtilityParams:
    distance_weight: float = 0.05

    def __post_init__(self):
        if not math.isfinite(self.distance_weight) or self.distance_weight < 0:
            raise ValueError("distance weight must be finite and >= 0")


def _step_cost(ns: int, nd: int, res: float) -> float:
    # single expression shared by every search so equal step counts give
    # bit-identical float costs
    return ns * res + nd * (res * _SQRT2)


def astar_cost(grid: OccupancyGrid, start: Pose2D, goal: Pose2D) -> float:
    """Shortest 8-connected path length over free cells, or inf.

    Unknown and occupied cells are impassable; diagonal steps cost
    sqrt(2) * resolution. Step counts are carried as integers so the cost
    is exact for comparison against a reference search.
    """
    res = grid.resolution
    sr, sc = start.cell(res)
    gr, gc = goal.cell(res)
    h, w = grid.height, grid.width
    if not (0 <= sr < h and 0 <= sc < w) or not grid.log_odds[sr, sc] < 0.0:
        raise PlanningError(f"start cell ({sr}, {sc}) is not free")
    if not (0 <= gr < h and 0 <= gc < w):
        return UNREACHABLE
    free = grid.log_odds < 0.0
    if not free[gr, gc]:
        return UNREACHABLE

    def heuristic(r, c):
        dx = abs(r - gr)
        dy = abs(c - gc)
        lo, hi = (dx, dy) if dx < dy else (dy, dx)
        return (hi - lo) * res + lo * (res * _SQRT2)

    best = {(sr, sc): (0, 0)}
    pq = [(heuristic(sr, sc), 0.0, sr, sc, 0, 0)]
    closed = set()
    while pq:
        _, g, r, c, ns, nd = heapq.heappop(pq)
        if (r, c) in closed:
            continue
        closed.add((r, c))
        if (r, c) == (gr, gc):
            return _step_cost(ns, nd, res)
        for dr, dc, diag in _MOVES:
            nr, nc = r + dr, c + dc
            if not (0 <= nr < h and 0 <= nc < w) or not free[nr, nc]:
                continue
            cand = (ns + 1 - diag, nd + diag)
            gg = _step_cost(cand[0], cand[1], res)
            prev = best.get((nr, nc))
            if prev is None or gg < _step_cost(prev[0], prev[1], res):
                best[(nr, nc)] = cand
                heapq.heappush(pq, (gg + heuristic(nr, nc), gg, nr, nc, cand[0], cand[1]))
    return UNREACHABLE


@dataclass
class DistanceField:
    """Single-source shortest paths over free cells (exact A* costs)."""
    cost: np.ndarray       # float, inf where unreachable
    parent: np.ndarray     # flat parent index, -1 at source/unreachable
    resolution: float

    def path_to(self, cell: tuple[int, int]) -> list[tuple[int, int]]:
        w = self.cost.shape[1]
        flat = cell[0] * w + cell[1]
        if not math.isfinite(self.cost[cell]):
            raise PlanningError(f"cell {cell} unreachable")
        out = []
        while flat >= 0:
            out.append((flat // w, flat % w))
            flat = self.parent[flat // w, flat % w]
        out.reverse()
        return out


def distance_field(grid: OccupancyGrid, start_cell: tuple[int, int]) -> DistanceField:
    """Dijkstra over free cells from start, same cost arithmetic as astar_cost."""
    res = grid.resolution
    h, w = grid.height, grid.width
    free = grid.log_odds < 0.0
    if not free[start_cell]:
        raise PlanningError(f"start cell {start_cell} is not free")
    cost = np.full((h, w), math.inf)
    parent = np.full((h, w), -1, np.int64)
    counts = {}
    sr, sc = start_cell
    cost[sr, sc] = 0.0
    counts[(sr, sc)] = (0, 0)
    pq = [(0.0, sr, sc, 0, 0)]
    done = np.zeros((h, w), bool)
    while pq:
        g, r, c, ns, nd = heapq.heappop(pq)
        if done[r, c]:
            continue
        done[r, c] = True
        for dr, dc, diag in _MOVES:
            nr, nc = r + dr, c + dc
            if not (0 <= nr < h and 0 <= nc < w) or not free[nr, nc] or done[nr, nc]:
                continue
            cand = (ns + 1 - diag, nd + diag)
            gg = _step_cost(cand[0], cand[1], res)
            if gg < cost[nr, nc]:
                cost[nr, nc] = gg
                counts[(nr, nc)] = cand
                parent[nr, nc] = r * w + c
                heapq.heappush(pq, (gg, nr, nc, cand[0], cand[1]))
    return DistanceField(cost, parent, res)


def utility(info: float, cost: float, params: UtilityParams) -> float:
    """Information discounted by travel cost; unreachable scores zero."""
    if info < 0 or cost < 0:
        raise ValueError("info and cost must be non-negative")
    if not math.isfinite(cost):
        return 0.0
    return info * math.exp(-params.distance_weight * cost)


@dataclass
class ScoredFrontier:
    frontier_id: int
    viewpoint: Optional[frontier_mod.Viewpoint]
    cost: float
    utility: float


def select_best_frontier(scored: list[ScoredFrontier]) -> ScoredFrontier | None:
    """Highest-utility reachable frontier; ties to the lowest frontier id.

    Returns None (the stuck signal) when nothing is reachable.
    """
    if not scored:
        raise PlanningError("no frontiers to select from")
    reachable = [s for s in scored
                 if s.viewpoint is not None and math.isfinite(s.cost)]
    if not reachable:
        return None
    return min(reachable, key=lambda s: (-s.utility, s.frontier_id))


METRICS = ("In", "Iv", "Im", "PIv", "PIm", "PIvar1", "PIvar2")
_PREDICTIVE = {"PIv", "PIm", "PIvar1", "PIvar2"}


@dataclass
class ExplorationConfig:
    metric: str = "Iv"
    sensor: SensorParams = field(default_factory=SensorParams)
    ism: InverseSensorModel = field(default_factory=InverseSensorModel)
    fsmi: info_mod.FsmiParams = field(default_factory=info_mod.FsmiParams)
    utility: UtilityParams = field(default_factory=UtilityParams)
    rings: tuple[float, ...] = frontier_mod.DEFAULT_RINGS
    per_ring: int = frontier_mod.DEFAULT_PER_RING
    min_frontier_size: int = frontier_mod.MIN_FRONTIER_SIZE
    n_samples: int = 10
    seed: int = 0
    step_budget: int = 400
    move_stride: float = 1.0
    scan_time: float = 0.0
    double_count: bool = False
    pim_prior: str = "prediction"
    predictor: str = "builtin"      # "builtin" or "bridge:<command>"
    start_cell: Optional[tuple[int, int]] = None
    coverage_threshold: float = 0.95
    # per-step map snapshots + frontier centroids in the trial result
    # (training-data export for external predictors)
    log_snapshots: bool = False

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}; choose from {METRICS}")
        if self.pim_prior not in ("prediction", "current"):
            raise ValueError("pim_prior must be 'prediction' or 'current'")


@dataclass
class StepRecord:
    step: int
    n_frontiers: int
    frontier_id: int
    target: tuple[int, int]
    yaw: float
    info: float
    cost: float
    utility: float


@dataclass
class TrialResult:
    steps: int
    total_path_length: float
    cost: float
    scans: int
    coverage_final: float
    terminated: str                       # complete | step-budget | stuck
    coverage_curve: list[tuple[float, float]]
    step_log: list[StepRecord]
    bridge_fallbacks: int = 0
    # optional per-step map rasters ('#'/'.'/'?' rows) with the frontier
    # centroids detected on them
    snapshots: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["coverage_curve"] = [[float(a), float(b)] for a, b in self.coverage_curve]
        return d


def _snapshot_rows(grid: OccupancyGrid) -> list[str]:
    lo = grid.log_odds
    out = []
    for r in range(grid.height):
        row = lo[r]
        out.append("".join("#" if v > 0 else ("." if v < 0 else "?") for v in row))
    return out


def observable_mask(world: WorldGrid) -> np.ndarray:
    """Cells a sensor could ever classify: free space plus walls 4-adjacent
    to free space (buried wall interiors are invisible to any beam)."""
    free = world.cells == 0
    near = np.zeros_like(free)
    near[1:, :] |= free[:-1, :]
    near[:-1, :] |= free[1:, :]
    near[:, 1:] |= free[:, :-1]
    near[:, :-1] |= free[:, 1:]
    return free | ((world.cells == 1) & near)


def coverage(world: WorldGrid, grid: OccupancyGrid, observable: np.ndarray) -> float:
    correct = np.where(world.cells == 1, grid.log_odds > 0.0, grid.log_odds < 0.0)
    return float((correct & observable).sum() / observable.sum())


def _build_predictor(spec: str):
    if spec == "builtin":
        return InpaintPredictor()
    if spec.startswith("bridge:"):
        return BridgePredictor(spec[len("bridge:"):])
    raise ValueError(f"unknown predictor spec {spec!r}")


def _frontier_seed(trial_seed: int, frontier_id: int) -> int:
    return int(np.random.SeedSequence([trial_seed & 0xFFFFFFFF, frontier_id])
               .generate_state(1)[0])


class _MetricContext:
    """Per-step snapshot of everything a metric needs.

    For predictive metrics this runs the crop/predict/compose pipeline over
    all frontiers; falls back to the plain-map MI metric when the bridge
    fails, recording the event.
    """

    def __init__(self, cfg: ExplorationConfig, grid: OccupancyGrid,
                 frontiers: list[frontier_mod.Frontier], predictor):
        self.cfg = cfg
        self.grid = grid
        self.metric = cfg.metric
        self.bridge_failed = False
        self.pred_map = None
        self.var_map = None
        if cfg.metric in _PREDICTIVE:
            try:
                means, variances = [], []
                for f in frontiers:
                    crop = extract_crop(grid, f.centroid)
                    ens = predict(predictor, crop, cfg.n_samples,
                                  _frontier_seed(cfg.seed, f.id))
                    means.append((f.centroid, ensemble_mean(ens)))
                    variances.append((f.centroid, ensemble_variance(ens)))
                self.pred_map = compose_prediction_map(grid, means)
                self.var_map = compose_variance_map(grid, variances)
            except PredictionError:
                self.bridge_failed = True
                self.metric = "Im"

    def evaluate(self, pose: Pose2D) -> float:
        cfg = self.cfg
        dedup = not cfg.double_count
        m = self.metric
        if m == "In":
            return info_mod.info_nearest(pose)
        if m == "Iv":
            return info_mod.volumetric_gain(self.grid, pose, cfg.sensor,
                                            "current", dedup=dedup)
        if m == "PIv":
            return info_mod.volumetric_gain(self.grid, pose, cfg.sensor,
                                            "prediction", self.pred_map, dedup=dedup)
        if m == "Im":
            return info_mod.fsmi(self.grid, pose, cfg.sensor, cfg.fsmi)
        if m == "PIm":
            prior = "same" if cfg.pim_prior == "prediction" else "current"
            return info_mod.fsmi(self.pred_map, pose, cfg.sensor, cfg.fsmi,
                                 current=self.grid, prior_source=prior)
        if m == "PIvar1":
            return info_mod.variance_info(self.var_map, self.grid, pose,
                                          cfg.sensor, "current", dedup=dedup)
        if m == "PIvar2":
            return info_mod.variance_info(self.var_map, self.grid, pose,
                                          cfg.sensor, "prediction",
                                          self.pred_map, dedup=dedup)
        raise ValueError(m)


def run_exploration(world: WorldGrid, cfg: ExplorationConfig) -> TrialResult:
    """Closed-loop frontier exploration of a hidden world.

    Scan, update, detect frontiers, score representative viewpoints, travel
    to the best one (rescanning every move_stride meters), and repeat until
    no frontiers remain or the step budget / stuck condition triggers.
    Fully deterministic for a fixed config.
    """
    res = world.resolution
    grid = OccupancyGrid.unknown(world.height, world.width, res)
    start = cfg.start_cell or default_start(world)
    if world.cells[start]:
        raise PlanningError(f"start cell {start} is occupied")
    pose = Pose2D((start[1] + 0.5) * res, (start[0] + 0.5) * res, 0.0)
    predictor = _build_predictor(cfg.predictor)
    observable = observable_mask(world)

    path_len = 0.0
    scans = 0
    curve: list[tuple[float, float]] = []
    step_log: list[StepRecord] = []
    snapshots: list[dict] = []
    bridge_fallbacks = 0

    def do_scan(p: Pose2D):
        nonlocal scans
        update_map(grid, simulate_scan(world, p, cfg.sensor), cfg.ism)
        # beams never traverse their own origin cell; standing on it is an
        # observation that it is free
        r, c = p.cell(res)
        grid.log_odds[r, c] = max(grid.log_odds[r, c] + math.log(cfg.ism.delta_free),
                                  -L_MAX)
        scans += 1
        curve.append((path_len, coverage(world, grid, observable)))

    def walk(path, target_pose):
        """Move cell to cell along the path, scanning every move_stride
        meters; abort if a cell ahead stops being free (guard rail — the
        map only hardens under noise-free scans)."""
        nonlocal pose, path_len
        since_scan = 0.0
        for i in range(1, len(path)):
            r, c = path[i]
            if not grid.log_odds[r, c] < 0.0:
                return False
            pr, pc = path[i - 1]
            diag = int(abs(r - pr) == 1 and abs(c - pc) == 1)
            seg = _step_cost(1 - diag, diag, res)
            pose = Pose2D((c + 0.5) * res, (r + 0.5) * res,
                          math.atan2(r - pr, c - pc))
            path_len += seg
            since_scan += seg
            if since_scan >= cfg.move_stride and i < len(path) - 1:
                do_scan(pose)
                since_scan = 0.0
                for rr, cc in path[i + 1:]:
                    if not grid.log_odds[rr, cc] < 0.0:
                        return False
        pose = Pose2D(target_pose.x, target_pose.y, target_pose.yaw)
        return True

    do_scan(pose)
    steps = 0
    failures = 0
    # viewpoints whose arrival scan changed nothing; cleared on any map
    # change, so zero-cost re-selections cannot loop forever
    barren: set[tuple[tuple[int, int], float]] = set()
    terminated = "step-budget"
    while True:
        frontiers = frontier_mod.detect_frontiers(grid, pose, cfg.min_frontier_size)
        if not frontiers:
            terminated = "complete"
            break
        if steps >= cfg.step_budget:
            terminated = "step-budget"
            break
        if cfg.log_snapshots:
            snapshots.append({"step": steps + 1,
                              "map": _snapshot_rows(grid),
                              "frontiers": [list(f.centroid) for f in frontiers]})
        ctx = _MetricContext(cfg, grid, frontiers, predictor)
        if ctx.bridge_failed:
            bridge_fallbacks += 1
        dij = distance_field(grid, pose.cell(res))
        scored: list[ScoredFrontier] = []
        for f in frontiers:
            cands = frontier_mod.sample_viewpoints(f, grid, cfg.rings, cfg.per_ring)
            if cands and ctx.metric == "In":
                # constant information leaves the yaw argmax meaningless;
                # nearest-frontier drives to the frontier and looks at it,
                # skipping candidates whose view changed nothing before
                vp = _nearest_frontier_viewpoint(f, cands, dij, res, barren)
            elif cands:
                vp = frontier_mod.best_viewpoint(cands, f.id, ctx.evaluate,
                                                 res, grid.width)
            else:
                vp = _fallback_viewpoint(f, grid, dij)
            if vp is None or (vp.pose.cell(res), round(vp.pose.yaw, 9)) in barren:
                scored.append(ScoredFrontier(f.id, None, UNREACHABLE, 0.0))
                continue
            cell = vp.pose.cell(res)
            cost = float(dij.cost[cell])
            scored.append(ScoredFrontier(f.id, vp,
                                         cost if math.isfinite(cost) else UNREACHABLE,
                                         utility(vp.info, cost, cfg.utility)))
        chosen = select_best_frontier(scored)
        if chosen is None:
            terminated = "stuck"
            break
        steps += 1
        vp = chosen.viewpoint
        target = vp.pose.cell(res)
        step_log.append(StepRecord(steps, len(frontiers), chosen.frontier_id,
                                   target, vp.pose.yaw, vp.info, chosen.cost,
                                   chosen.utility))
        path = dij.path_to(target)
        before = grid.log_odds.copy()
        arrived = walk(path, vp.pose)
        if arrived:
            do_scan(pose)
            failures = 0
        else:
            failures += 1
            if failures >= 5:
                terminated = "stuck"
                break
        if np.array_equal(before, grid.log_odds):
            barren.add((target, round(vp.pose.yaw, 9)))
        else:
            barren.clear()

    cov = coverage(world, grid, observable)
    if hasattr(predictor, "close"):
        predictor.close()
    return TrialResult(steps=steps, total_path_length=path_len,
                       cost=path_len + cfg.scan_time * scans, scans=scans,
                       coverage_final=cov, terminated=terminated,
                       coverage_curve=curve, step_log=step_log,
                       bridge_fallbacks=bridge_fallbacks, snapshots=snapshots)


def _nearest_frontier_viewpoint(f, cands, dij, res, barren):
    """Constant-metric representative: reachable candidate with the lowest
    path cost (row-major tie-break), facing the frontier centroid."""
    best = None
    for cand in cands:
        r, c = cand.cell(res)
        yaw = math.atan2(f.centroid[0] - r, f.centroid[1] - c)
        if ((r, c), round(yaw, 9)) in barren:
            continue
        cost = float(dij.cost[r, c])
        if not math.isfinite(cost):
            continue
        key = (cost, r * dij.cost.shape[1] + c)
        if best is None or key < best[0]:
            best = (key, Pose2D(cand.x, cand.y, yaw))
    if best is None:
        return None
    return frontier_mod.Viewpoint(best[1], f.id, 1.0)


def _fallback_viewpoint(f, grid, dij) -> Optional[frontier_mod.Viewpoint]:
    """No ring candidate was free: head for the reachable free cell nearest
    the centroid (path metric), look toward the frontier, zero info."""
    finite = np.isfinite(dij.cost)
    if not finite.any():
        return None
    rr, cc = np.nonzero(finite)
    d2 = (rr - f.centroid[0]) ** 2 + (cc - f.centroid[1]) ** 2
    i = int(np.lexsort((cc, rr, d2))[0])
    r, c = int(rr[i]), int(cc[i])
    res = grid.resolution
    aim = f.centroid
    if aim == (r, c):
        # rounded centroid can coincide with the target cell; aim at the
        # first unresolved frontier cell instead of atan2(0, 0)
        for cell in map(tuple, f.cells):
            if cell != (r, c):
                aim = cell
                break
    yaw = math.atan2(aim[0] - r, aim[1] - c)
    return frontier_mod.Viewpoint(Pose2D((c + 0.5) * res, (r + 0.5) * res, yaw),
                                  f.id, 0.0)
