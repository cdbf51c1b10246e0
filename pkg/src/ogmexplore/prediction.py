"""Stochastic occupancy prediction for map completion.

A predictor turns a crop into n_samples plausible occupancy rasters for the
crop's 80x80 predicted area. The built-in predictor is a non-neural
structured inpainter; BridgePredictor talks to an external model process
over newline-delimited JSON on stdin/stdout.
"""
from __future__ import annotations

import json
import subprocess
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .mapping import AREA_OFF, AREA_SIZE, CropInput, OccupancyGrid, area_slices


class PredictionError(RuntimeError):
    pass


@dataclass
class PredictionEnsemble:
    """n_samples probability rasters for one crop's predicted area."""
    samples: np.ndarray          # (n_samples, 80, 80) floats in [0, 1]
    centroid: tuple[int, int]

    def __post_init__(self):
        self.samples = np.asarray(self.samples, np.float64)
        if self.samples.ndim != 3 or self.samples.shape[1:] != (AREA_SIZE, AREA_SIZE):
            raise ValueError(f"samples must be (n, {AREA_SIZE}, {AREA_SIZE})")
        if self.samples.shape[0] < 1:
            raise ValueError("need at least one sample")
        if self.samples.min() < 0.0 or self.samples.max() > 1.0:
            raise ValueError("sample values must lie in [0, 1]")

    @property
    def n_samples(self) -> int:
        return int(self.samples.shape[0])


def predict(predictor, crop: CropInput, n_samples: int, seed: int) -> PredictionEnsemble:
    """Draw n_samples stochastic completions, deterministic in (crop, seed)."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    samples = predictor.sample(crop, n_samples, seed)
    return PredictionEnsemble(samples=samples, centroid=crop.center)


def ensemble_mean(ensemble: PredictionEnsemble) -> np.ndarray:
    return ensemble.samples.mean(axis=0)


def ensemble_variance(ensemble: PredictionEnsemble) -> np.ndarray:
    """Population variance E[x^2] - E[x]^2 (divide by n, not n-1)."""
    s = ensemble.samples
    var = (s * s).mean(axis=0) - s.mean(axis=0) ** 2
    return np.maximum(var, 0.0)


# directions a wall run can be extended along (4 axes + diagonals)
_DIRS = [(-1, 0), (1, 0), (0, -1), (0, 1), (-1, -1), (-1, 1), (1, -1), (1, 1)]


class InpaintPredictor:
    """Built-in structured stochastic inpainter.

    Per sample: known walls adjacent to unknown space are continued along
    their run direction with probability p_wall per step; remaining unknown
    cells within reach of any filled cell copy their nearest filled value;
    cells farther than `reach` draw i.i.d. from the local occupancy prior;
    a small mutation rate adds speckle. The binary sample is box-blurred,
    then known cells are restored exactly.
    """

    def __init__(self, p_wall: float = 0.7, reach: float = 12.0,
                 p_mutate: float = 0.05, prior_clamp: tuple[float, float] = (0.05, 0.95)):
        self.p_wall = p_wall
        self.reach = reach
        self.p_mutate = p_mutate
        self.prior_clamp = prior_clamp

    # window = predicted area plus one ring of context cells for seeding
    _W = AREA_SIZE + 2

    def sample(self, crop: CropInput, n_samples: int, seed: int) -> np.ndarray:
        lo = AREA_OFF - 1
        hi = AREA_OFF + AREA_SIZE + 1
        occ_w = crop.occupied[lo:hi, lo:hi]
        free_w = crop.free[lo:hi, lo:hi]
        known_w = occ_w | free_w
        known_count = int(crop.free.sum() + crop.occupied.sum())
        if known_count:
            prior = float(crop.occupied.sum()) / known_count
        else:
            prior = 0.5
        prior = min(max(prior, self.prior_clamp[0]), self.prior_clamp[1])

        area = np.s_[1:-1, 1:-1]
        area_known = known_w[area]
        area_occ = occ_w[area].astype(np.float64)
        tips = self._wall_tips(occ_w, known_w)

        out = np.empty((n_samples, AREA_SIZE, AREA_SIZE), np.float64)
        for j in range(n_samples):
            rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, j]))
            filled = known_w.copy()
            value = occ_w.astype(np.uint8).copy()
            self._extend_walls(filled, value, tips, rng)
            binary = self._fill(filled, value, prior, rng)
            soft = ndimage.uniform_filter(binary[area].astype(np.float64),
                                          size=3, mode="nearest")
            soft[area_known] = area_occ[area_known]
            out[j] = np.clip(soft, 0.0, 1.0)
        return out

    def _wall_tips(self, occ_w, known_w):
        """Known occupied cells that end a straight run of >= 2 at unknown space."""
        tips = []
        h, w = occ_w.shape
        for r, c in np.argwhere(occ_w):
            for dr, dc in _DIRS:
                pr, pc = r - dr, c - dc
                nr, nc = r + dr, c + dc
                if not (0 <= pr < h and 0 <= pc < w and occ_w[pr, pc]):
                    continue
                if 0 <= nr < h and 0 <= nc < w and not known_w[nr, nc]:
                    tips.append((int(r), int(c), dr, dc))
        return tips

    def _extend_walls(self, filled, value, tips, rng):
        h, w = filled.shape
        for r, c, dr, dc in tips:
            nr, nc = r + dr, c + dc
            while 0 <= nr < h and 0 <= nc < w and not filled[nr, nc]:
                if rng.random() >= self.p_wall:
                    break
                filled[nr, nc] = True
                value[nr, nc] = 1
                nr += dr
                nc += dc

    def _fill(self, filled, value, prior, rng):
        if filled.any():
            dist, (ir, ic) = ndimage.distance_transform_edt(
                ~filled, return_indices=True)
            binary = value[ir, ic].astype(np.float64)
            far = dist > self.reach
        else:
            binary = np.zeros(filled.shape, np.float64)
            far = np.ones(filled.shape, bool)
        draws = rng.random(filled.shape)
        binary[far] = (draws[far] < prior).astype(np.float64)
        mut = rng.random(filled.shape)
        mutate = (mut < self.p_mutate) & ~filled & ~far
        binary[mutate] = (draws[mutate] < prior).astype(np.float64)
        binary[filled] = value[filled]
        return binary


class BridgePredictor:
    """Client for an external predictor process.

    The process reads one JSON request per line on stdin and answers one
    JSON object per line on stdout:
      request  {"id": int, "seed": int, "n_samples": int, "crop": [4][256][256]}
      response {"id": int, "samples": [n][80][80]} or {"id": int, "error": str}
    """

    def __init__(self, cmd: str | list[str]):
        self.cmd = cmd
        self._proc: subprocess.Popen | None = None
        self._next_id = 0

    def _ensure_started(self):
        if self._proc is None or self._proc.poll() is not None:
            self._proc = subprocess.Popen(
                self.cmd, shell=isinstance(self.cmd, str),
                stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True,
                bufsize=1)

    def request(self, payload: dict) -> dict:
        self._ensure_started()
        try:
            self._proc.stdin.write(json.dumps(payload) + "\n")
            self._proc.stdin.flush()
            line = self._proc.stdout.readline()
        except (OSError, ValueError) as e:  # broken pipe / closed stream
            raise PredictionError(f"bridge process unavailable: {e}") from None
        if not line:
            raise PredictionError("bridge process closed its output")
        try:
            return json.loads(line)
        except json.JSONDecodeError as e:
            raise PredictionError(f"bridge sent invalid JSON: {e}") from None

    def sample(self, crop: CropInput, n_samples: int, seed: int) -> np.ndarray:
        self._next_id += 1
        req = {"id": self._next_id, "seed": int(seed), "n_samples": int(n_samples),
               "crop": crop.to_channels().tolist()}
        resp = self.request(req)
        if resp.get("id") != self._next_id:
            raise PredictionError(f"bridge answered id {resp.get('id')}, expected {self._next_id}")
        if "error" in resp:
            raise PredictionError(f"bridge error: {resp['error']}")
        samples = np.asarray(resp["samples"], np.float64)
        if samples.shape != (n_samples, AREA_SIZE, AREA_SIZE):
            raise PredictionError(f"bridge returned shape {samples.shape}")
        return np.clip(samples, 0.0, 1.0)

    def close(self):
        if self._proc is not None and self._proc.poll() is None:
            self._proc.stdin.close()
            self._proc.wait(timeout=10)
        self._proc = None


def compose_variance_map(grid: OccupancyGrid,
                         crops: list[tuple[tuple[int, int], np.ndarray]]) -> np.ndarray:
    """Per-cell prediction variance aligned with the map.

    Zero outside predicted cells; overlapping areas follow the same
    last-write-wins rule as prediction-map composition.
    """
    out = np.zeros((grid.height, grid.width), np.float64)
    unknown = grid.unknown_mask()
    for centroid, values in crops:
        values = np.asarray(values, np.float64)
        (src_r, src_c), (loc_r, loc_c) = area_slices(grid, centroid)
        target = unknown[src_r, src_c]
        block = out[src_r, src_c]
        vals = values[loc_r, loc_c]
        block[target] = vals[target]
        out[src_r, src_c] = block
    return out
