"""Numba kernels shared by sensing, mapping and the information metrics.

Everything in here is deliberately allocation-light and loop-based: these
functions run tens of thousands of times per exploration trial. The Python
modules wrap them with the documented data types.
"""
import math

import numpy as np
from numba import njit

# Relative tolerance for treating a vertical and a horizontal gridline
# crossing as one corner crossing. cos/sin of the same angle can differ in
# the last ulp, so exact equality would split a corner into two sliver cells
# whose chords are ~1e-16 m long.
_TIE_REL = 1e-12


@njit(cache=True)
def trace_cells(ox, oy, dx, dy, max_range, res, height, width, rows, cols, bounds):
    """Walk the grid from (ox, oy) along unit direction (dx, dy).

    Fills rows/cols with every cell whose interior the segment of length
    max_range crosses, except the cell containing the origin, and fills
    bounds[i] with the entry distance of cell i (bounds[n] = exit of the
    last cell, clipped to max_range). Returns the cell count n.
    """
    if max_range <= 0.0:
        return 0
    r = int(math.floor(oy / res))
    c = int(math.floor(ox / res))

    if dx > 0.0:
        step_c = 1
        tmax_x = ((c + 1) * res - ox) / dx
        tdelta_x = res / dx
    elif dx < 0.0:
        step_c = -1
        tmax_x = (c * res - ox) / dx
        tdelta_x = -res / dx
    else:
        step_c = 0
        tmax_x = math.inf
        tdelta_x = math.inf
    if dy > 0.0:
        step_r = 1
        tmax_y = ((r + 1) * res - oy) / dy
        tdelta_y = res / dy
    elif dy < 0.0:
        step_r = -1
        tmax_y = (r * res - oy) / dy
        tdelta_y = -res / dy
    else:
        step_r = 0
        tmax_y = math.inf
        tdelta_y = math.inf

    n = 0
    while True:
        a = tmax_x
        b = tmax_y
        if a < b:
            t_enter = a
            tie = (b - a) <= _TIE_REL * (1.0 + a)
        else:
            t_enter = b
            tie = (a - b) <= _TIE_REL * (1.0 + b)
        if tie:
            c += step_c
            r += step_r
            tmax_x += tdelta_x
            tmax_y += tdelta_y
        elif a < b:
            c += step_c
            tmax_x += tdelta_x
        else:
            r += step_r
            tmax_y += tdelta_y

        if t_enter >= max_range:
            if n > 0:
                bounds[n] = max_range
            return n
        if r < 0 or r >= height or c < 0 or c >= width:
            if n > 0:
                bounds[n] = t_enter
            return n
        rows[n] = r
        cols[n] = c
        bounds[n] = t_enter
        n += 1
        if n == rows.shape[0] - 1:
            # capacity guard; callers size buffers generously
            bounds[n] = min(min(tmax_x, tmax_y), max_range)
            return n


@njit(cache=True)
def first_hit_range(occ, ox, oy, dx, dy, max_range, res, rows, cols, bounds):
    """Distance to the entry boundary of the first occupied cell, else -1."""
    n = trace_cells(ox, oy, dx, dy, max_range, res, occ.shape[0], occ.shape[1],
                    rows, cols, bounds)
    for j in range(n):
        if occ[rows[j], cols[j]] != 0:
            return bounds[j]
    return -1.0


@njit(cache=True)
def scan_world(occ, ox, oy, angles, max_range, res, out_ranges, out_hits):
    cap = rows_capacity(max_range, res)
    rows = np.empty(cap, np.int64)
    cols = np.empty(cap, np.int64)
    bounds = np.empty(cap + 1, np.float64)
    for i in range(angles.shape[0]):
        d = first_hit_range(occ, ox, oy, math.cos(angles[i]), math.sin(angles[i]),
                            max_range, res, rows, cols, bounds)
        if d >= 0.0:
            out_ranges[i] = d
            out_hits[i] = 1
        else:
            out_ranges[i] = max_range
            out_hits[i] = 0


@njit(cache=True, inline="always")
def rows_capacity(max_range, res):
    return int(2.0 * max_range / res) + 8


@njit(cache=True)
def apply_scan(log_odds, ox, oy, angles, ranges, hits, max_range, res,
               l_occ, l_free, l_max):
    """Bayesian log-odds update for one scan.

    Cells strictly before a beam's measured range are marked free, the cell
    whose entry boundary equals the range is marked occupied (hit beams
    only). Within the scan each cell is updated at most once; an occupied
    mark wins over a free mark.
    """
    h, w = log_odds.shape
    mark = np.zeros((h, w), np.uint8)  # 1 = free, 2 = occupied
    cap = rows_capacity(max_range, res)
    rows = np.empty(cap, np.int64)
    cols = np.empty(cap, np.int64)
    bounds = np.empty(cap + 1, np.float64)
    eps = 1e-9
    for i in range(angles.shape[0]):
        rng = ranges[i]
        n = trace_cells(ox, oy, math.cos(angles[i]), math.sin(angles[i]),
                        min(rng + res, max_range + res), res, h, w, rows, cols, bounds)
        for j in range(n):
            if bounds[j] < rng - eps:
                if mark[rows[j], cols[j]] == 0:
                    mark[rows[j], cols[j]] = 1
            else:
                if hits[i] != 0 and abs(bounds[j] - rng) <= eps:
                    mark[rows[j], cols[j]] = 2
                break
    for r in range(h):
        for c in range(w):
            m = mark[r, c]
            if m == 1:
                v = log_odds[r, c] + l_free
            elif m == 2:
                v = log_odds[r, c] + l_occ
            else:
                continue
            if v > l_max:
                v = l_max
            elif v < -l_max:
                v = -l_max
            log_odds[r, c] = v


@njit(cache=True, inline="always")
def cell_gain_scalar(delta, r):
    """Expected information gained about one cell from a measurement that
    multiplies its occupancy odds r by delta (KL of the Bayes update)."""
    dr = delta * r
    return math.log((1.0 + r) / (1.0 + dr)) + dr * math.log(delta) / (1.0 + dr)


@njit(cache=True)
def fsmi_single_beam(lo_hit, lo_prior, delta_occ, delta_free, half_width):
    """O(n) mutual information of one beam via prefix sums.

    lo_hit drives the hit probabilities, lo_prior the per-cell odds in the
    gain terms (the two differ only for the prediction-sourced metric with
    current-map priors).
    """
    n = lo_hit.shape[0]
    if n == 0:
        return 0.0
    d_prefix = np.empty(n + 1, np.float64)
    d_prefix[0] = 0.0
    free_cum = 0.0
    for m in range(n):
        rp = math.exp(lo_prior[m])
        c_m = cell_gain_scalar(delta_occ, rp) + free_cum
        free_cum += cell_gain_scalar(delta_free, rp)
        d_prefix[m + 1] = d_prefix[m] + c_m
    inv = 1.0 / (2.0 * half_width + 1.0)
    mi = 0.0
    surv = 1.0
    for k in range(1, n + 1):
        o = 1.0 / (1.0 + math.exp(-lo_hit[k - 1]))
        p_ek = o * surv
        surv *= 1.0 - o
        hi = k + half_width
        if hi > n:
            hi = n
        lo_i = k - half_width - 1
        if lo_i < 0:
            lo_i = 0
        mi += p_ek * (d_prefix[hi] - d_prefix[lo_i]) * inv
    hi = half_width
    if hi > n:
        hi = n
    mi += surv * d_prefix[hi] * inv
    return mi


@njit(cache=True)
def fsmi_viewpoint(lo_hit_grid, lo_prior_grid, ox, oy, yaw, fov, n_beams,
                   max_range, res, delta_occ, delta_free, half_width,
                   wall_log_odds):
    """Sum of per-beam mutual information over a fan of beams.

    Beams are traced on lo_hit_grid and truncated after the first cell whose
    log-odds exceed wall_log_odds (a definite wall) — that cell stays in the
    beam so the hit mass concentrates on it.
    """
    h, w = lo_hit_grid.shape
    cap = rows_capacity(max_range, res)
    rows = np.empty(cap, np.int64)
    cols = np.empty(cap, np.int64)
    bounds = np.empty(cap + 1, np.float64)
    lo_beam = np.empty(cap, np.float64)
    lp_beam = np.empty(cap, np.float64)
    total = 0.0
    for i in range(n_beams):
        if n_beams == 1:
            ang = yaw
        else:
            ang = yaw - 0.5 * fov + fov * i / (n_beams - 1)
        n = trace_cells(ox, oy, math.cos(ang), math.sin(ang), max_range, res,
                        h, w, rows, cols, bounds)
        m = 0
        for j in range(n):
            v = lo_hit_grid[rows[j], cols[j]]
            lo_beam[m] = v
            lp_beam[m] = lo_prior_grid[rows[j], cols[j]]
            m += 1
            if v > wall_log_odds:
                break
        total += fsmi_single_beam(lo_beam[:m], lp_beam[:m], delta_occ,
                                  delta_free, half_width)
    return total


@njit(cache=True)
def visible_sum(blocked, values, ox, oy, yaw, fov, n_beams, max_range, res,
                dedup):
    """Sum values over cells visible from a pose.

    A beam stops at the first blocked cell, which is not itself counted.
    With dedup, a cell crossed by several beams contributes once.
    """
    h, w = blocked.shape
    cap = rows_capacity(max_range, res)
    rows = np.empty(cap, np.int64)
    cols = np.empty(cap, np.int64)
    bounds = np.empty(cap + 1, np.float64)
    seen = np.zeros((h, w), np.uint8)
    total = 0.0
    for i in range(n_beams):
        if n_beams == 1:
            ang = yaw
        else:
            ang = yaw - 0.5 * fov + fov * i / (n_beams - 1)
        n = trace_cells(ox, oy, math.cos(ang), math.sin(ang), max_range, res,
                        h, w, rows, cols, bounds)
        for j in range(n):
            r = rows[j]
            c = cols[j]
            if blocked[r, c] != 0:
                break
            if dedup:
                if seen[r, c] != 0:
                    continue
                seen[r, c] = 1
            total += values[r, c]
    return total
