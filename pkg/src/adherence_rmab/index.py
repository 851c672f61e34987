"""Closed-form Whittle (marginal productivity) index, optimal threshold map, and
numerical checks of the indexability conditions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .core import (
    ALWAYS_ACTIVE,
    ALWAYS_PASSIVE,
    PatientParams,
    crossing_time_array,
    disc_passive_sum,
    state_breakpoint,
    trajectory_point,
)
from .metrics import marginal_metrics, threshold_metrics

CONTINUITY_TOL = 1e-8


def _branch_coeffs(params: PatientParams, t):
    """Slope and intercept of the index on the middle branch ``[z_{t-1}, z_t)``."""
    r, beta = params.r, params.beta
    c_t = beta ** (t + 1) - beta + beta * (1.0 - beta) * disc_passive_sum(params, params.p, t)
    return r * (1.0 - beta ** (t + 1)) / (1.0 - beta), r * c_t / (1.0 - beta)


def mp_index(params: PatientParams, x):
    """Whittle/MP index ``m(x)`` minus the per-intervention cost.

    The middle branch is found from the crossing time ``tau(p, x)`` rather than a
    breakpoint scan.
    """
    scalar = np.ndim(x) == 0
    x = np.asarray(x, dtype=float)
    r, beta, rho, p, z_inf = params.r, params.beta, params.rho, params.p, params.z_inf
    middle = (x >= p) & (x < z_inf)
    t = crossing_time_array(params, np.full_like(x, p), np.where(middle, x, p))
    slope, intercept = _branch_coeffs(params, t)
    m = np.where(x < p, r * x, np.where(middle, slope * x + intercept, r * x / (1.0 - beta * rho)))
    m = m - params.cost
    return float(m) if scalar else m


def default_t_max(params: PatientParams) -> int:
    """Smallest ``t`` with ``rho**t < 1e-14``."""
    return max(1, math.ceil(math.log(1e-14) / math.log(params.rho)))


@dataclass(frozen=True)
class IndexTable:
    """Breakpoints of the piecewise-affine index for one patient.

    ``state_breakpoints`` is ``[0, z_0, ..., z_T, z_inf, 1]``; ``price_breakpoints``
    is ``[lambda_0, ..., lambda_T, lambda_inf, lambda_max]`` (index values at the
    interior state breakpoints, cost excluded).  ``slopes[k]``/``intercepts[k]``
    describe the index on ``[state_breakpoints[k], state_breakpoints[k + 1])``:
    ``k = 0`` is ``[0, p)``, ``k = t`` the middle branch ``t`` (the last middle
    branch also covers ``[z_T, z_inf)`` with error ``O(rho**T)``), and the final
    entry is ``[z_inf, 1]``.
    """

    params: PatientParams
    state_breakpoints: np.ndarray = field(repr=False)
    price_breakpoints: np.ndarray = field(repr=False)
    slopes: np.ndarray = field(repr=False)
    intercepts: np.ndarray = field(repr=False)

    @property
    def t_max(self) -> int:
        return len(self.state_breakpoints) - 4

    @property
    def lambda_max(self) -> float:
        return float(self.price_breakpoints[-1])

    def index(self, x):
        """Index by table lookup (cost subtracted, like ``mp_index``)."""
        x = np.asarray(x, dtype=float)
        k = np.clip(np.searchsorted(self.state_breakpoints, x, side="right") - 1, 0, len(self.slopes) - 1)
        return self.slopes[k] * x + self.intercepts[k] - self.params.cost

    def threshold(self, price):
        """Inverse of the uncosted index on ``[0, lambda_max]`` by table lookup."""
        price = np.asarray(price, dtype=float)
        lam = np.concatenate(([0.0], self.price_breakpoints))
        k = np.clip(np.searchsorted(lam, price, side="right") - 1, 0, len(self.slopes) - 1)
        return (price - self.intercepts[k]) / self.slopes[k]


def build_index_table(params: PatientParams, t_max: int | None = None) -> IndexTable:
    if t_max is None:
        t_max = default_t_max(params)
    if t_max < 1:
        raise ValueError("t_max must be >= 1")
    r, beta, rho = params.r, params.beta, params.rho
    ts = np.arange(0, t_max + 1)
    z = trajectory_point(params, params.p, ts)
    states = np.concatenate(([0.0], z, [params.z_inf, 1.0]))

    mid_t = np.arange(1, t_max + 2)
    mid_slope, mid_icpt = _branch_coeffs(params, mid_t)
    slopes = np.concatenate(([r], mid_slope, [r / (1.0 - beta * rho)]))
    intercepts = np.concatenate(([0.0], mid_icpt, [0.0]))

    # continuity at z_0 .. z_T: branch k-1 and branch k meet at states[k]
    left = slopes[:-2] * states[1:-2] + intercepts[:-2]
    right = slopes[1:-1] * states[1:-2] + intercepts[1:-1]
    gap = np.max(np.abs(left - right))
    if gap > CONTINUITY_TOL:
        raise RuntimeError(f"index branches disagree by {gap:.3e} at a breakpoint")

    lam_inf = r * params.z_inf / (1.0 - beta * rho)
    prices = np.concatenate((right, [lam_inf, r / (1.0 - beta * rho)]))
    return IndexTable(params, states, prices, slopes, intercepts)


@lru_cache(maxsize=4096)
def index_table(params: PatientParams) -> IndexTable:
    """Cached default-size table."""
    return build_index_table(params)


def optimal_threshold(params: PatientParams, price: float) -> float:
    """Optimal threshold ``z*(price)`` for the price-``price`` single-patient problem.

    The intervention cost is folded into the effective price ``cost + price``.
    Below 0 the patient is always worth treating; above ``lambda_max`` never.
    """
    lam = price + params.cost
    r, beta, rho = params.r, params.beta, params.rho
    lam_max = r / (1.0 - beta * rho)
    if lam < 0.0:
        return ALWAYS_ACTIVE
    if lam > lam_max:
        return ALWAYS_PASSIVE
    table = index_table(params)
    lam_inf = table.price_breakpoints[-2]
    if lam < params.p * r:
        return lam / r
    if lam >= lam_inf:
        return (1.0 - beta * rho) * lam / r
    # middle branch t: lambda_{t-1} <= lam < lambda_t
    t = int(np.searchsorted(table.price_breakpoints[:-2], lam, side="right"))
    t = min(max(t, 1), table.t_max + 1)
    c_t = beta ** (t + 1) - beta + beta * (1.0 - beta) * disc_passive_sum(params, params.p, t)
    denom = 1.0 - beta ** (t + 1)
    return (1.0 - beta) * lam / (r * denom) - c_t / denom


def optimal_threshold_array(params: PatientParams, price):
    """Vectorised ``optimal_threshold`` (sentinels as ``-inf``/``+inf``)."""
    lam = np.asarray(price, dtype=float) + params.cost
    table = index_table(params)
    z = table.threshold(np.clip(lam, 0.0, table.lambda_max))
    z = np.where(lam < 0.0, ALWAYS_ACTIVE, z)
    return np.where(lam > table.lambda_max, ALWAYS_PASSIVE, z)


@dataclass(frozen=True)
class ReachableSet:
    origin: float
    points: np.ndarray


def reachable_set(params: PatientParams, x: float, tol: float = 1e-12) -> ReachableSet:
    """Beliefs visited by any threshold policy from ``x``, truncated where ``rho**t`` is negligible."""
    if not 0.0 < tol < 1.0:
        raise ValueError("tol must lie in (0, 1)")
    z_inf, rho = params.z_inf, params.rho
    spread = max(abs(x - z_inf), abs(params.p - z_inf))
    pts = [0.0, 1.0, z_inf]
    t = 0
    while rho**t * spread >= tol:
        pts.append(trajectory_point(params, x, t))
        pts.append(state_breakpoint(params, t))
        t += 1
    if t == 0:
        pts.append(x)
    pts = np.asarray(pts)
    # anything within the dedup tolerance of z_inf collapses onto z_inf itself
    pts = np.sort(np.append(pts[np.abs(pts - z_inf) > 1e-12], z_inf))
    keep = [0]
    for i in range(1, len(pts)):
        if pts[i] - pts[keep[-1]] > 1e-12:
            keep.append(i)
        elif pts[i] == z_inf:
            keep[-1] = i
    return ReachableSet(x, pts[keep])


@dataclass
class GridSpec:
    x_grid: np.ndarray
    z_grid: np.ndarray
    n_triples: int = 200
    tol: float = 1e-6
    seed: int = 0
    reach_tol: float = 1e-13


def default_grid(n: int = 101, n_triples: int = 200, tol: float = 1e-6, seed: int = 0) -> GridSpec:
    g = np.linspace(0.0, 1.0, n)
    return GridSpec(g, g, n_triples=n_triples, tol=tol, seed=seed)


@dataclass
class VerificationReport:
    positive_work: bool
    monotone_index: bool
    stieltjes: bool
    min_work: float
    continuity_gap: float
    max_decrease: float
    stieltjes_residual: float
    extra: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.positive_work and self.monotone_index and self.stieltjes and all(
            v for k, v in self.extra.items() if isinstance(v, bool)
        )


def stieltjes_residual(params, x, z1, z2, index_fn, metrics_fn, reach_tol=1e-13) -> float:
    """``|F(x, z2) - F(x, z1) - sum m(c) dG(x, c)|`` over jump points ``c`` in ``(z1, z2]``.

    ``G`` is a staircase in the threshold with steps only at reachable beliefs,
    so the jump at ``c`` is ``G(x, c) - G(x, previous point)``, which equals the
    left-limit jump.  Points packed within ``reach_tol`` of ``z_inf`` are lumped
    into a single step at ``z_inf``.
    """
    if z2 <= z1:
        return 0.0
    pts = reachable_set(params, x, reach_tol).points
    inside = pts[(pts > z1) & (pts <= z2)]
    prev_g = metrics_fn(params, x, z1).work
    total = 0.0
    for c in inside:
        g = metrics_fn(params, x, c).work
        total += index_fn(params, c) * (g - prev_g)
        prev_g = g
    d_f = metrics_fn(params, x, z2).reward - metrics_fn(params, x, z1).reward
    return abs(d_f - total)


def _uncosted(params):
    return params if params.cost == 0.0 else params.with_changes(cost=0.0)


def verify_pcl(params: PatientParams, grid: GridSpec | None = None) -> VerificationReport:
    """Check positive marginal work, monotone continuous index and the Stieltjes identity on grids."""
    grid = grid or default_grid()
    params = _uncosted(params)
    xs = np.asarray(grid.x_grid, dtype=float)

    min_work = math.inf
    for z in grid.z_grid:
        min_work = min(min_work, float(np.min(marginal_metrics(params, xs, float(z)).work)))
    for z in (ALWAYS_ACTIVE, ALWAYS_PASSIVE):
        min_work = min(min_work, float(np.min(marginal_metrics(params, xs, z).work)))
    positive_work = min_work >= 1.0 - params.beta - 1e-12

    m = mp_index(params, np.sort(xs))
    max_decrease = float(max(0.0, -np.min(np.diff(m)))) if len(m) > 1 else 0.0
    table = build_index_table(params)
    s = table.state_breakpoints[1:-2]
    left = table.slopes[:-2] * s + table.intercepts[:-2]
    right = table.slopes[1:-1] * s + table.intercepts[1:-1]
    cont = float(np.max(np.abs(left - right)))
    positive_slopes = bool(np.all(table.slopes > 0))
    monotone = max_decrease == 0.0 and cont <= grid.tol and positive_slopes

    rng = np.random.default_rng(grid.seed)
    residual = 0.0
    for _ in range(grid.n_triples):
        x = float(rng.uniform())
        z1, z2 = np.sort(rng.uniform(size=2))
        residual = max(
            residual,
            stieltjes_residual(params, x, float(z1), float(z2), mp_index, threshold_metrics, grid.reach_tol),
        )
    return VerificationReport(
        positive_work=positive_work,
        monotone_index=monotone,
        stieltjes=residual <= grid.tol,
        min_work=min_work,
        continuity_gap=cont,
        max_decrease=max_decrease,
        stieltjes_residual=residual,
    )


@dataclass
class MonotonicityReport:
    ok: bool
    values: np.ndarray
    diffs: np.ndarray
    tags: list
    violations: list


def sensitivity_p(params: PatientParams, x: float, p_grid, tol: float = 1e-12) -> MonotonicityReport:
    """Index as a function of the lapse probability: nonincreasing, strict below ``x``, flat from ``x`` on."""
    p_grid = np.asarray(p_grid, dtype=float)
    vals = np.array([mp_index(params.with_changes(p=float(p)), x) for p in p_grid])
    diffs = np.diff(vals)
    tags = ["below_x" if p < x else "at_or_above_x" for p in p_grid]
    bad = []
    for i, d in enumerate(diffs):
        if tags[i] == tags[i + 1] == "below_x":
            if not d < -tol:
                bad.append((i, "not strictly decreasing", d))
        elif tags[i] == tags[i + 1] == "at_or_above_x":
            if abs(d) > tol:
                bad.append((i, "not constant", d))
        elif d > tol:
            bad.append((i, "increasing", d))
    return MonotonicityReport(not bad, vals, diffs, tags, bad)


def q_branch(params: PatientParams, x: float) -> str:
    """Branch label of ``x`` for the given parameters: ``first``, ``middle-t`` or ``last``."""
    if x < params.p:
        return "first"
    if x >= params.z_inf:
        return "last"
    t = int(crossing_time_array(params, params.p, x))
    return f"middle-{t}"


def sensitivity_q(params: PatientParams, x: float, q_grid, tol: float = 1e-12) -> MonotonicityReport:
    """Branchwise monotonicity in the recovery probability.

    Flat on ``x < p`` and on middle branch 1, increasing on middle branches
    ``t >= 2``, decreasing on the last branch.  Pairs straddling two branches
    are not judged.
    """
    q_grid = np.asarray(q_grid, dtype=float)
    ps = [params.with_changes(q=float(q)) for q in q_grid]
    vals = np.array([mp_index(pp, x) for pp in ps])
    tags = [q_branch(pp, x) for pp in ps]
    diffs = np.diff(vals)
    bad = []
    for i, d in enumerate(diffs):
        if tags[i] != tags[i + 1]:
            continue
        tag = tags[i]
        if tag in ("first", "middle-1"):
            if abs(d) > tol:
                bad.append((i, "not flat", d))
        elif tag == "last":
            if not d < -tol:
                bad.append((i, "not decreasing", d))
        elif not d > tol:
            bad.append((i, "not increasing", d))
    return MonotonicityReport(not bad, vals, diffs, tags, bad)
