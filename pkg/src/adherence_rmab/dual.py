"""Lagrangian relaxation of the capacity constraint and its bisection dual bound.

The single-patient price problem is solved in closed form by the optimal
threshold map, so the aggregate dual function and its right derivative cost
O(N) per evaluation.  Identical patients are evaluated once and weighted by
their multiplicity.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .core import PatientParams, disc_passive_sum, passive_step
from .index import optimal_threshold
from .metrics import _anchor, classify_threshold, threshold_metrics

UNIFORM = "uniform"
CRITICAL_TOL = 1e-9


class UniformMetricPair(NamedTuple):
    reward: float
    work: float


def _passive_integral(params: PatientParams, z: float) -> float:
    """``int_0^z Phi_inf(x) dx``."""
    beta, rho, z_inf = params.beta, params.rho, params.z_inf
    return z * (1.0 - z_inf) / (1.0 - beta) + (z * z_inf - 0.5 * z * z) / (1.0 - beta * rho)


def hitting_weight(params: PatientParams, z: float, t: int) -> float:
    """``S(z) = int_0^1 beta**tau(x, z) dx`` for ``p <= z < z_inf`` with ``t = tau(0, z)``."""
    beta, rho, z_inf = params.beta, params.rho, params.z_inf
    if abs(beta - rho) < CRITICAL_TOL:
        return 1.0 - z + rho**t * z_inf + (z_inf - z) * ((1.0 - rho) * (t - 1) - rho)
    u = (beta / rho) ** (t - 1)
    return 1.0 - z + beta**t * z_inf + beta * (z_inf - z) * (1.0 - rho - (1.0 - beta) * u) / (rho - beta)


def _passive_spell_integral(params: PatientParams, z: float, t: int) -> float:
    """``J(z) = int_0^z Phi_{tau(x, z)}(x) dx`` summed over the crossing-time intervals."""
    beta, rho, z_inf = params.beta, params.rho, params.z_inf
    k = np.arange(1, t + 1)
    xs = z_inf + (z - z_inf) / rho ** np.arange(0, t + 1)
    xs[t] = 0.0
    lengths = xs[:-1] - xs[1:]
    b_k = (1.0 - (beta * rho) ** k) / (1.0 - beta * rho)
    a_k = (1.0 - beta**k) / (1.0 - beta) * (1.0 - z_inf) + b_k * z_inf
    return float(np.sum(a_k * lengths - 0.5 * b_k * (xs[:-1] ** 2 - xs[1:] ** 2)))


def uniform_metrics(params: PatientParams, z: float) -> UniformMetricPair:
    """Reward and work of the ``z``-threshold policy averaged over a uniform initial belief."""
    r, beta = params.r, params.beta
    reg = classify_threshold(params, z)
    if reg.kind == "below_p":
        z = max(z, 0.0)
        return UniformMetricPair(r / (1.0 - beta) - 0.5 * r * z * z, 1.0 / (1.0 - beta) - z)
    if reg.kind == "middle":
        k_f, k_g = _anchor(params, reg.t)
        t = reg.t + 1  # tau(0, z) = tau(p, z) + 1 since h(0) = p
        s_z = hitting_weight(params, z, t)
        j_z = _passive_spell_integral(params, z, t)
        return UniformMetricPair(r * j_z + k_f * s_z, k_g * s_z)
    if reg.kind == "above_zinf":
        phi_p = disc_passive_sum(params, params.p, math.inf)
        return UniformMetricPair(r * (_passive_integral(params, z) + (1.0 - z) * (1.0 + beta * phi_p)), 1.0 - z)
    z_inf = params.z_inf
    return UniformMetricPair(r * ((1.0 - z_inf) / (1.0 - beta) + (z_inf - 0.5) / (1.0 - beta * params.rho)), 0.0)


def _signature(params: PatientParams, x, z: float, cap: int = 20000):
    """Brute-force action signature: -1 when active now, else passive steps until crossing (cap = never)."""
    x = np.asarray(x, dtype=float)
    sig = np.full(x.shape, cap, dtype=np.int64)
    sig[x > z] = -1
    live = np.flatnonzero(~(x > z))
    b = x[live]
    for k in range(1, cap):
        if not live.size:
            break
        nb = passive_step(params, b)
        hit = nb > z
        sig[live[hit]] = k
        # h is increasing, so a trajectory that stops rising stays at or below z
        keep = ~hit & (nb > b)
        live, b = live[keep], nb[keep]
    return sig


def uniform_metrics_quadrature(params: PatientParams, z: float, panels: int = 10**5) -> UniformMetricPair:
    """Independent quadrature of ``threshold_metrics`` over ``x`` in ``[0, 1]``.

    The integrand is affine in ``x`` between jumps, and jumps occur where the
    brute-force action signature changes.  Panels whose end signatures differ
    are split at bisected jump points; each affine piece is integrated exactly
    by the midpoint rule.
    """
    grid = np.linspace(0.0, 1.0, panels + 1)
    sig = _signature(params, grid, z)
    idx = np.flatnonzero(sig[1:] != sig[:-1])
    lo, hi = grid[idx], grid[idx + 1]
    s_lo, s_hi = sig[idx], sig[idx + 1]
    cuts = [np.array([0.0, 1.0])]
    # bisect every jump panel at once; panels holding several jumps are peeled left to right
    while lo.size:
        a, b = lo.copy(), hi.copy()
        for _ in range(60):
            mid = 0.5 * (a + b)
            same = _signature(params, mid, z) == s_lo
            a = np.where(same, mid, a)
            b = np.where(same, b, mid)
        cuts.append(b)
        s_b = _signature(params, b, z)
        more = (s_b != s_hi) & (b < hi)
        lo, hi, s_lo, s_hi = b[more], hi[more], s_b[more], s_hi[more]
    edges = np.unique(np.concatenate([grid, *cuts]))
    mids = 0.5 * (edges[:-1] + edges[1:])
    width = np.diff(edges)
    f, g = threshold_metrics(params, mids, z)
    return UniformMetricPair(float(np.sum(f * width)), float(np.sum(g * width)))


def _metrics_at(params: PatientParams, z: float, initial) -> tuple[float, float]:
    if isinstance(initial, str):
        if initial != UNIFORM:
            raise ValueError(f"unknown initial-belief mode {initial!r}")
        return uniform_metrics(params, z)
    return threshold_metrics(params, float(initial), z)


def patient_lagrangian(params: PatientParams, price: float, initial=UNIFORM) -> float:
    """Optimal value ``sup_z F(z) - (cost + price) G(z)`` of the single-patient price problem.

    ``initial`` is ``"uniform"`` or a fixed initial belief.
    """
    z = optimal_threshold(params, price)
    f, g = _metrics_at(params, z, initial)
    return f - (price + params.cost) * g


def patient_work(params: PatientParams, price: float, initial=UNIFORM) -> float:
    """Work at the optimal threshold, i.e. minus the right derivative of ``patient_lagrangian``."""
    return _metrics_at(params, optimal_threshold(params, price), initial)[1]


def _groups(cohort: Sequence[PatientParams], initial):
    if isinstance(initial, str):
        keys = [(pp, initial) for pp in cohort]
    else:
        initial = list(initial)
        if len(initial) != len(cohort):
            raise ValueError("need one initial belief per patient")
        keys = [(pp, float(x)) for pp, x in zip(cohort, initial)]
    return Counter(keys)


def _common_beta(cohort) -> float:
    betas = {pp.beta for pp in cohort}
    if len(betas) != 1:
        raise ValueError("all patients must share one discount factor")
    return betas.pop()


def _check_capacity(cohort, capacity):
    if not 0 <= capacity <= len(cohort):
        raise ValueError(f"capacity must lie in [0, {len(cohort)}], got {capacity}")


def dual_derivative(cohort: Sequence[PatientParams], capacity: float, price: float, initial=UNIFORM) -> float:
    """Right derivative ``-sum_n G_n(z_n*(price)) + M / (1 - beta)`` of the dual function."""
    _check_capacity(cohort, capacity)
    beta = _common_beta(cohort)
    work = sum(n * patient_work(pp, price, x0) for (pp, x0), n in _groups(cohort, initial).items())
    return capacity / (1.0 - beta) - work


def dual_function(cohort: Sequence[PatientParams], capacity: float, price: float, initial=UNIFORM) -> float:
    """``L(price) = sum_n L_n(price) + M price / (1 - beta)``."""
    beta = _common_beta(cohort)
    total = sum(n * patient_lagrangian(pp, price, x0) for (pp, x0), n in _groups(cohort, initial).items())
    return total + capacity * price / (1.0 - beta)


@dataclass
class DualResult:
    lambda_star: float
    bound: float
    bracket_width: float
    derivative_at_star: float
    iterations: int
    mode: str  # "at_zero", "at_max" or "interior"
    lambda_max: float
    bound_at_upper: float | None = None

    def normalized(self, n_patients: int, beta: float) -> float:
        return (1.0 - beta) * self.bound / n_patients


def dual_bound(cohort: Sequence[PatientParams], capacity: float, eps: float = 1e-6, initial=UNIFORM) -> DualResult:
    """Minimise the dual function over ``[0, lambda_max]`` by bisection on its right derivative."""
    if not eps > 0.0:
        raise ValueError("eps must be positive")
    if len(cohort) == 0:
        raise ValueError("cohort must be nonempty")
    _check_capacity(cohort, capacity)

    lam_max = max(pp.r / (1.0 - pp.beta * pp.rho) for pp in cohort)

    def deriv(lam):
        return dual_derivative(cohort, capacity, lam, initial)

    def value(lam):
        return dual_function(cohort, capacity, lam, initial)

    d0 = deriv(0.0)
    if d0 >= 0.0:
        return DualResult(0.0, value(0.0), 0.0, d0, 0, "at_zero", lam_max)
    dmax = deriv(lam_max)
    if dmax <= 0.0:
        return DualResult(lam_max, value(lam_max), 0.0, dmax, 0, "at_max", lam_max)

    lo, hi = 0.0, lam_max
    iterations = 0
    while True:
        iterations += 1
        mid = 0.5 * (lo + hi)
        d = deriv(mid)
        if abs(d) <= eps:
            return DualResult(mid, value(mid), hi - lo, d, iterations, "interior", lam_max)
        if d < 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= eps:
            star = 0.5 * (lo + hi)
            return DualResult(star, value(star), hi - lo, deriv(star), iterations, "interior", lam_max, value(hi))
