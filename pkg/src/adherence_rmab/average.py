"""Long-run average counterparts of the threshold metrics and of the MP index.

The average-criterion index is a conjectured priority rule: nothing here
claims it is optimal.  It is exposed separately from the discounted index so
callers opt in explicitly.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from .core import PatientParams, avg_passive_sum, crossing_time_array, passive_step
from .index import GridSpec, VerificationReport, default_grid, reachable_set, stieltjes_residual
from .metrics import MetricPair, classify_threshold, threshold_metrics


class AvgMetricPair(NamedTuple):
    reward_rate: float
    work_rate: float


def avg_metrics(params: PatientParams, z: float) -> AvgMetricPair:
    """Average reward and work per period of the ``z``-threshold policy (independent of the start)."""
    r = params.r
    reg = classify_threshold(params, z)
    if reg.kind == "below_p":
        return AvgMetricPair(r, 1.0)
    if reg.kind == "middle":
        s = reg.t
        return AvgMetricPair(r * (1.0 + avg_passive_sum(params, params.p, s)) / (s + 1), 1.0 / (s + 1))
    return AvgMetricPair(r * (1.0 - params.z_inf), 0.0)


def avg_marginal_metrics(params: PatientParams, x, z: float) -> AvgMetricPair:
    """Limits of the discounted marginal metrics as the discount factor tends to one.

    For ``z >= z_inf`` with ``x > z`` and ``h(x) > z`` both one-step deviations
    intervene exactly once, so the marginal work vanishes and the marginal
    reward tends to ``r (x - z_inf)``.
    """
    scalar = np.ndim(x) == 0
    x = np.asarray(x, dtype=float)
    r, rho, p = params.r, params.rho, params.p
    reg = classify_threshold(params, z)
    active = x > z
    if reg.kind == "below_p":
        f, g = r * x, np.ones_like(x)
    elif reg.kind == "middle":
        s = reg.t
        big_f, big_g = avg_metrics(params, z)
        t = np.where(active, 1, crossing_time_array(params, x, np.full_like(x, z)))
        cyc = 1.0 + avg_passive_sum(params, p, s)
        f_rest = r * (t / (s + 1) * cyc - avg_passive_sum(params, x, t))
        f = np.where(active, r * (x - 1.0) + big_f, f_rest)
        g = np.where(active, big_g, t / (s + 1))
    else:
        jump = active & (passive_step(params, x) > z)
        f = np.where(jump, r * (x - params.z_inf), r * (params.z_inf + (x - p) / (1.0 - rho)))
        g = np.where(jump, 0.0, 1.0)
    if scalar:
        return AvgMetricPair(float(f), float(g))
    return AvgMetricPair(f, g)


def avg_mp_index(params: PatientParams, x):
    """Average-criterion MP index (conjecture-grade priority, not a proven Whittle index)."""
    scalar = np.ndim(x) == 0
    x = np.asarray(x, dtype=float)
    r, p, z_inf = params.r, params.p, params.z_inf
    middle = (x >= p) & (x < z_inf)
    t = crossing_time_array(params, np.full_like(x, p), np.where(middle, x, p))
    mid = r * ((t + 1) * x + avg_passive_sum(params, p, t) - t)
    m = np.where(x < p, r * x, np.where(middle, mid, r * x / (1.0 - params.rho)))
    return float(m) if scalar else m


def avg_branch_gap(params: PatientParams, t_max: int = 200) -> float:
    """Largest disagreement between adjacent branches of ``avg_mp_index`` at the breakpoints."""
    r, p = params.r, params.p
    ts = np.arange(0, t_max)
    z = params.z_inf + (p - params.z_inf) * params.rho**ts
    left = np.where(ts == 0, r * z, r * (ts + 1) * z + r * avg_passive_sum(params, p, ts) - r * ts)
    right = r * ((ts + 2) * z + avg_passive_sum(params, p, ts + 1) - (ts + 1))
    gap = float(np.max(np.abs(left - right)))
    at_inf = r * (params.z_inf + (params.z_inf - p) / (1.0 - params.rho))
    return max(gap, abs(at_inf - r * params.z_inf / (1.0 - params.rho)))


def cycle_average(params: PatientParams, z: float, periods: int = 10**5, x0: float | None = None) -> AvgMetricPair:
    """Brute-force long-run average of the threshold policy by deterministic simulation.

    The first half of the run is discarded as burn-in.  When the policy keeps
    intervening, the average is taken between the first and last intervention
    of the second half, i.e. over whole cycles.
    """
    x = params.p if x0 is None else x0
    r = params.r
    rewards = np.empty(periods)
    acts = np.zeros(periods, dtype=bool)
    for k in range(periods):
        if x > z:
            rewards[k] = r
            acts[k] = True
            x = params.p
        else:
            rewards[k] = r * (1.0 - x)
            x = params.p + params.rho * x
    half = periods // 2
    idx = np.flatnonzero(acts[half:]) + half
    if len(idx) >= 2:
        lo, hi = idx[0], idx[-1]
        return AvgMetricPair(float(rewards[lo:hi].mean()), float(acts[lo:hi].mean()))
    return AvgMetricPair(float(rewards[half:].mean()), float(acts[half:].mean()))


def _avg_as_metric(params, x, z):
    return MetricPair(*avg_metrics(params, z))


def abelian_residuals(params: PatientParams, x, z: float, betas=(0.99, 0.999, 0.9999)):
    """``|(1 - beta) F_beta(x, z) - F_avg(z)|`` and the work analogue for each beta."""
    big_f, big_g = avg_metrics(params, z)
    out = []
    for b in betas:
        pb = params.with_changes(beta=b)
        fb, gb = threshold_metrics(pb, x, z)
        out.append((np.abs((1.0 - b) * fb - big_f), np.abs((1.0 - b) * gb - big_g)))
    return out


def verify_apcli(params: PatientParams, grid: GridSpec | None = None, bridge_tol: float = 1e-2) -> VerificationReport:
    """Average-criterion analogue of ``verify_pcl`` plus the discount-limit bridge.

    The positive-work check is evaluated on the grid as given.  ``extra`` holds
    the number of grid points with zero marginal work, all of which should sit
    in the double-intervention region ``x > z >= z_inf``, ``h(x) > z``.
    """
    grid = grid or default_grid()
    xs = np.asarray(grid.x_grid, dtype=float)
    min_work = math.inf
    zero_outside = 0
    zero_total = 0
    for z in grid.z_grid:
        z = float(z)
        g = avg_marginal_metrics(params, xs, z).work_rate
        min_work = min(min_work, float(np.min(g)))
        zero = g <= 0.0
        degenerate = (xs > z) & (z >= params.z_inf) & (passive_step(params, xs) > z)
        zero_total += int(np.sum(zero))
        zero_outside += int(np.sum(zero & ~degenerate))

    m = avg_mp_index(params, np.sort(xs))
    max_decrease = float(max(0.0, -np.min(np.diff(m))))
    cont = avg_branch_gap(params)
    monotone = max_decrease == 0.0 and cont <= 1e-10

    rng = np.random.default_rng(grid.seed)
    residual = 0.0
    for _ in range(grid.n_triples):
        x = float(rng.uniform())
        z1, z2 = np.sort(rng.uniform(size=2))
        residual = max(
            residual,
            stieltjes_residual(params, x, float(z1), float(z2), avg_mp_index, _avg_as_metric, grid.reach_tol),
        )

    bridge_ok = True
    bridge_max = 0.0
    for z in grid.z_grid:
        res = abelian_residuals(params, xs, float(z))
        for (f0, g0), (f1, g1) in zip(res, res[1:]):
            if np.any(f1 > f0 + 1e-12) or np.any(g1 > g0 + 1e-12):
                bridge_ok = False
        bridge_max = max(bridge_max, float(np.max(res[-1][0])), float(np.max(res[-1][1])))
    bridge_ok = bridge_ok and bridge_max <= bridge_tol

    return VerificationReport(
        positive_work=min_work > 0.0,
        monotone_index=monotone,
        stieltjes=residual <= grid.tol,
        min_work=min_work,
        continuity_gap=cont,
        max_decrease=max_decrease,
        stieltjes_residual=residual,
        extra={
            "abelian_bridge": bridge_ok,
            "abelian_max_residual": bridge_max,
            "zero_work_points": zero_total,
            "zero_work_outside_double_intervention": zero_outside,
        },
    )


__all__ = [
    "AvgMetricPair",
    "abelian_residuals",
    "avg_branch_gap",
    "avg_marginal_metrics",
    "avg_metrics",
    "avg_mp_index",
    "cycle_average",
    "reachable_set",
    "verify_apcli",
]
