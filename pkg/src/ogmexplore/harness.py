"""Experiment runner: metric-by-environment comparison with per-trial
artifacts, aggregate tables and coverage-vs-cost curves."""
from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict, replace
from pathlib import Path

import numpy as np

from . import planning
from .information import FsmiParams
from .mapping import InverseSensorModel
from .planning import ExplorationConfig, TrialResult, UtilityParams, run_exploration
from .sensing import SensorParams
from .world import WorldGenParams, WorldGrid, generate_world, load_world, save_world


class HarnessError(RuntimeError):
    pass


@dataclass
class ExperimentConfig:
    worlds: list[str] = field(default_factory=lambda: ["gen:1"])
    metrics: list[str] = field(default_factory=lambda: ["Iv"])
    trials_per_cell: int = 1
    base_seed: int = 0
    world_params: WorldGenParams = field(default_factory=WorldGenParams)
    exploration: ExplorationConfig = field(default_factory=ExplorationConfig)
    curve_points: int = 120

    def __post_init__(self):
        if self.trials_per_cell < 1:
            raise ValueError("trials_per_cell must be >= 1")
        if not self.metrics:
            raise ValueError("need at least one metric")
        for m in self.metrics:
            if m not in planning.METRICS:
                raise ValueError(f"unknown metric {m!r}")


# flat key = value config file; one key per line, '#' starts a comment
_KEYS = {
    "worlds": ("worlds", lambda s: [w.strip() for w in s.split(",") if w.strip()]),
    "metrics": ("metrics", lambda s: [m.strip() for m in s.split(",") if m.strip()]),
    "trials": ("trials_per_cell", int),
    "base_seed": ("base_seed", int),
    "curve_points": ("curve_points", int),
    "world.width": ("world_params.width", int),
    "world.height": ("world_params.height", int),
    "world.resolution": ("world_params.resolution", float),
    "world.rooms_min": ("world_params.rooms_min", int),
    "world.rooms_max": ("world_params.rooms_max", int),
    "world.room_size_min": ("world_params.room_size_min", int),
    "world.room_size_max": ("world_params.room_size_max", int),
    "world.corridor_width": ("world_params.corridor_width", int),
    "sensor.range": ("exploration.sensor.max_range", float),
    "sensor.fov_deg": ("exploration.sensor.fov", lambda s: math.radians(float(s))),
    "sensor.beams": ("exploration.sensor.beam_count", int),
    "ism.delta_occ": ("exploration.ism.delta_occ", float),
    "ism.delta_free": ("exploration.ism.delta_free", float),
    "fsmi.noise_half_width": ("exploration.fsmi.noise_half_width", int),
    "utility.distance_weight": ("exploration.utility.distance_weight", float),
    "explore.rings": ("exploration.rings", lambda s: tuple(float(x) for x in s.split(","))),
    "explore.per_ring": ("exploration.per_ring", int),
    "explore.min_frontier": ("exploration.min_frontier_size", int),
    "explore.n_samples": ("exploration.n_samples", int),
    "explore.step_budget": ("exploration.step_budget", int),
    "explore.move_stride": ("exploration.move_stride", float),
    "explore.scan_time": ("exploration.scan_time", float),
    "explore.double_count": ("exploration.double_count", lambda s: s.lower() in ("1", "true", "yes")),
    "explore.pim_prior": ("exploration.pim_prior", str),
    "explore.predictor": ("exploration.predictor", str),
    "explore.log_snapshots": ("exploration.log_snapshots",
                              lambda s: s.lower() in ("1", "true", "yes")),
}


def parse_config_file(path: str | Path) -> ExperimentConfig:
    cfg = ExperimentConfig()
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise HarnessError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _KEYS:
            raise HarnessError(f"{path}:{lineno}: unknown key {key!r}")
        dotted, conv = _KEYS[key]
        obj = cfg
        *parents, attr = dotted.split(".")
        for p in parents:
            obj = getattr(obj, p)
        setattr(obj, attr, conv(value))
    # re-run validation on the mutated dataclasses
    cfg.exploration.sensor.__post_init__()
    cfg.exploration.ism.__post_init__()
    cfg.exploration.fsmi.__post_init__()
    cfg.exploration.utility.__post_init__()
    cfg.exploration.__post_init__()
    cfg.world_params.__post_init__()
    cfg.__post_init__()
    return cfg


def config_echo(cfg: ExperimentConfig) -> dict:
    d = asdict(cfg)
    d["exploration"]["rings"] = list(cfg.exploration.rings)
    return d


def build_world(spec: str, params: WorldGenParams) -> WorldGrid:
    if spec.startswith("gen:"):
        return generate_world(int(spec[4:]), params)
    if spec.startswith("file:"):
        return load_world(spec[5:])
    raise HarnessError(f"world spec must be gen:<seed> or file:<path>, got {spec!r}")


def trial_seed(base_seed: int, world_idx: int, metric_idx: int, trial: int) -> int:
    return int(np.random.SeedSequence(
        [base_seed & 0xFFFFFFFF, world_idx, metric_idx, trial]).generate_state(1)[0])


def _trial_name(world_idx: int, metric: str, trial: int) -> str:
    return f"trial_w{world_idx}_{metric}_t{trial}"


def _run_cell(args):
    world_spec, world_params, expl_cfg, world_idx, metric, metric_idx, trial, base_seed = args
    seed = trial_seed(base_seed, world_idx, metric_idx, trial)
    try:
        world = build_world(world_spec, world_params)
        cfg = replace(expl_cfg, metric=metric, seed=seed)
        result = run_exploration(world, cfg)
        return (world_idx, metric, trial, seed, result.to_dict(), None)
    except Exception as e:  # a failed trial must not sink the experiment
        return (world_idx, metric, trial, seed, None, f"{type(e).__name__}: {e}")


@dataclass
class SummaryRow:
    world: str
    metric: str
    n_trials: int
    n_ok: int
    mean_cost: float
    std_cost: float
    completion_rate: float


@dataclass
class SummaryTable:
    rows: list[SummaryRow]

    def lookup(self, world: str, metric: str) -> SummaryRow:
        for r in self.rows:
            if r.world == world and r.metric == metric:
                return r
        raise KeyError((world, metric))


def _workers() -> int:
    env = os.environ.get("EXPLORE_THREADS")
    if env:
        return max(1, int(env))
    return max(1, os.cpu_count() or 1)


def run_experiment(cfg: ExperimentConfig, out_dir: str | Path,
                   parallel: bool = True) -> SummaryTable:
    """Run every (world, metric, trial) cell and write all artifacts.

    Per-trial JSON in <out>/trials/, flat trials.csv, summary.csv, mean
    coverage-vs-cost curves (CSV + SVG) per world. Deterministic for a
    fixed config regardless of worker count.
    """
    out = Path(out_dir)
    (out / "trials").mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(config_echo(cfg), indent=2) + "\n")
    (out / "worlds").mkdir(exist_ok=True)
    for wi, wspec in enumerate(cfg.worlds):
        try:
            save_world(build_world(wspec, cfg.world_params), out / "worlds" / f"w{wi}.txt")
        except Exception:
            pass  # the per-trial error records carry the failure

    tasks = []
    for wi, wspec in enumerate(cfg.worlds):
        for mi, metric in enumerate(cfg.metrics):
            for t in range(cfg.trials_per_cell):
                tasks.append((wspec, cfg.world_params, cfg.exploration,
                              wi, metric, mi, t, cfg.base_seed))
    if parallel and _workers() > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=_workers()) as pool:
            results = list(pool.map(_run_cell, tasks))
    else:
        results = [_run_cell(t) for t in tasks]

    records = []
    for (world_idx, metric, trial, seed, result, error) in sorted(
            results, key=lambda r: (r[0], r[1], r[2])):
        name = _trial_name(world_idx, metric, trial)
        payload = {"world": cfg.worlds[world_idx], "world_idx": world_idx,
                   "metric": metric, "trial": trial, "seed": seed,
                   "result": result, "error": error}
        (out / "trials" / f"{name}.json").write_text(
            json.dumps(payload, indent=1, sort_keys=True) + "\n")
        records.append(payload)

    _write_trials_csv(out / "trials.csv", records)
    table = summarize(records, cfg)
    _write_summary_csv(out / "summary.csv", table)
    render_curves(out, curve_points=cfg.curve_points)
    return table


def _write_trials_csv(path: Path, records: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["world", "metric", "trial", "seed", "cost", "steps",
                     "terminated", "coverage_final"])
        for rec in records:
            r = rec["result"]
            if r is None:
                wr.writerow([rec["world"], rec["metric"], rec["trial"],
                             rec["seed"], "", "", "error", ""])
            else:
                wr.writerow([rec["world"], rec["metric"], rec["trial"],
                             rec["seed"], f"{r['cost']:.6f}", r["steps"],
                             r["terminated"], f"{r['coverage_final']:.6f}"])


def summarize(records: list[dict], cfg: ExperimentConfig) -> SummaryTable:
    rows = []
    for wspec in cfg.worlds:
        for metric in cfg.metrics:
            cell = [r for r in records if r["world"] == wspec and r["metric"] == metric]
            ok = [r["result"] for r in cell if r["result"] is not None]
            costs = [r["cost"] for r in ok]
            complete = [r for r in ok if r["terminated"] == "complete"]
            mean = float(np.mean(costs)) if costs else math.nan
            std = float(np.std(costs, ddof=1)) if len(costs) > 1 else 0.0
            rows.append(SummaryRow(world=wspec, metric=metric,
                                   n_trials=len(cell), n_ok=len(ok),
                                   mean_cost=mean, std_cost=std,
                                   completion_rate=(len(complete) / len(cell))
                                   if cell else 0.0))
    return SummaryTable(rows)


def _write_summary_csv(path: Path, table: SummaryTable) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["world", "metric", "n_trials", "n_ok", "mean_cost",
                     "std_cost", "completion_rate"])
        for r in table.rows:
            wr.writerow([r.world, r.metric, r.n_trials, r.n_ok,
                         f"{r.mean_cost:.6f}", f"{r.std_cost:.6f}",
                         f"{r.completion_rate:.4f}"])


def step_interpolate(curve: list[list[float]], grid: np.ndarray) -> np.ndarray:
    """Previous-value interpolation of a (cost, coverage) step curve."""
    xs = np.array([p[0] for p in curve])
    ys = np.array([p[1] for p in curve])
    idx = np.searchsorted(xs, grid, side="right") - 1
    out = np.where(idx >= 0, ys[np.clip(idx, 0, len(ys) - 1)], ys[0] if len(ys) else 0.0)
    return out


def render_curves(out_dir: str | Path, curve_points: int = 120) -> list[Path]:
    """Mean coverage-vs-cost curve per metric per world from trial JSONs.

    Raises with the list of absent cells if artifacts are missing.
    """
    out = Path(out_dir)
    trials_dir = out / "trials"
    cfg = json.loads((out / "config.json").read_text())
    missing = []
    per_world: dict[int, dict[str, list[dict]]] = {}
    for wi in range(len(cfg["worlds"])):
        for metric in cfg["metrics"]:
            for t in range(cfg["trials_per_cell"]):
                p = trials_dir / f"{_trial_name(wi, metric, t)}.json"
                if not p.exists():
                    missing.append(str(p.name))
                    continue
                rec = json.loads(p.read_text())
                if rec["result"] is not None:
                    per_world.setdefault(wi, {}).setdefault(metric, []).append(rec["result"])
    if missing:
        raise HarnessError("missing trial artifacts: " + ", ".join(missing))

    written = []
    for wi, by_metric in sorted(per_world.items()):
        max_cost = max((r["coverage_curve"][-1][0] for rs in by_metric.values()
                        for r in rs if r["coverage_curve"]), default=1.0)
        grid = np.linspace(0.0, max_cost, curve_points)
        series = {}
        for metric, rs in by_metric.items():
            curves = np.stack([step_interpolate(r["coverage_curve"], grid) for r in rs])
            series[metric] = curves.mean(axis=0)
        csv_path = out / f"curves_w{wi}.csv"
        with open(csv_path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["cost"] + list(series.keys()))
            for i, x in enumerate(grid):
                wr.writerow([f"{x:.6f}"] + [f"{series[m][i]:.6f}" for m in series])
        svg_path = out / f"curves_w{wi}.svg"
        _write_svg(svg_path, grid, series, title=f"world {cfg['worlds'][wi]}")
        written.extend([csv_path, svg_path])
    return written


_PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
            "#8c564b", "#17becf"]


def _write_svg(path: Path, xs: np.ndarray, series: dict[str, np.ndarray],
               title: str = "") -> None:
    """Minimal hand-rolled SVG line plot; no plotting dependency."""
    w, h, ml, mb, mt, mr = 640, 420, 60, 46, 28, 140
    x0, x1 = float(xs[0]), float(max(xs[-1], 1e-9))
    pw, ph = w - ml - mr, h - mt - mb

    def sx(x):
        return ml + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return mt + (1.0 - y) * ph

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" '
             f'viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">',
             f'<rect width="{w}" height="{h}" fill="white"/>',
             f'<text x="{ml}" y="{mt - 10}" font-size="14">{title}</text>']
    # axes and ticks
    parts.append(f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{h - mb}" stroke="black"/>')
    parts.append(f'<line x1="{ml}" y1="{h - mb}" x2="{w - mr}" y2="{h - mb}" stroke="black"/>')
    for i in range(6):
        yv = i / 5.0
        parts.append(f'<text x="{ml - 8}" y="{sy(yv) + 4}" text-anchor="end">{yv:.1f}</text>')
        parts.append(f'<line x1="{ml - 4}" y1="{sy(yv)}" x2="{ml}" y2="{sy(yv)}" stroke="black"/>')
        xv = x0 + (x1 - x0) * i / 5.0
        parts.append(f'<text x="{sx(xv)}" y="{h - mb + 18}" text-anchor="middle">{xv:.0f}</text>')
        parts.append(f'<line x1="{sx(xv)}" y1="{h - mb}" x2="{sx(xv)}" y2="{h - mb + 4}" stroke="black"/>')
    parts.append(f'<text x="{ml + pw / 2}" y="{h - 10}" text-anchor="middle">exploration cost (m)</text>')
    parts.append(f'<text x="16" y="{mt + ph / 2}" transform="rotate(-90 16 {mt + ph / 2})" '
                 f'text-anchor="middle">coverage</text>')
    for i, (name, ys) in enumerate(series.items()):
        color = _PALETTE[i % len(_PALETTE)]
        pts = " ".join(f"{sx(float(x)):.1f},{sy(float(y)):.1f}" for x, y in zip(xs, ys))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = mt + 16 * i
        parts.append(f'<line x1="{w - mr + 8}" y1="{ly}" x2="{w - mr + 28}" y2="{ly}" '
                     f'stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{w - mr + 34}" y="{ly + 4}">{name}</text>')
    parts.append("</svg>")
    path.write_text("\n".join(parts) + "\n")
