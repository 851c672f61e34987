"""Discounted reward/work metrics under threshold policies and their one-step marginals.

``threshold_metrics(x, z)`` is the pair ``(F, G)`` of discounted reward and
discounted intervention count for the policy that intervenes iff the belief
exceeds ``z``, started from belief ``x``.  ``marginal_metrics`` gives the
difference between acting and resting at time 0 and following the threshold
policy afterwards.  Functions accept a scalar threshold and a scalar or array
belief.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from .core import (
    ALWAYS_ACTIVE,
    PatientParams,
    crossing_time,
    crossing_time_array,
    disc_passive_sum,
    passive_step,
)

MAX_CROSSING = 10**6


class MetricPair(NamedTuple):
    reward: float
    work: float


class Regime(NamedTuple):
    """Which closed-form case a threshold falls in.

    ``kind`` is one of ``"below_p"``, ``"middle"``, ``"above_zinf"`` and
    ``"always_passive"``; ``t`` is the crossing index ``tau(p, z)`` on the middle
    regime (``z_{t-1} <= z < z_t``) and ``None`` otherwise.
    """

    kind: str
    t: int | None = None


def classify_threshold(params: PatientParams, z: float) -> Regime:
    if z >= 1.0:
        return Regime("always_passive")
    if z < params.p:
        return Regime("below_p")
    if z >= params.z_inf:
        return Regime("above_zinf")
    t = crossing_time(params, params.p, z)
    if t > MAX_CROSSING:
        raise RuntimeError(f"crossing index {t} too large for z={z!r}; threshold too close to z_inf")
    return Regime("middle", t)


def _anchor(params: PatientParams, t: int):
    """``K_F = r + beta F(p, z)`` and ``K_G = 1 + beta G(p, z)`` on middle regime ``t``."""
    r, beta = params.r, params.beta
    denom = 1.0 - beta ** (t + 1)
    f_p = r * (disc_passive_sum(params, params.p, t) + beta**t) / denom
    g_p = beta**t / denom
    return r + beta * f_p, 1.0 + beta * g_p


def _pair(reward, work, scalar):
    if scalar:
        return MetricPair(float(reward), float(work))
    return MetricPair(reward, work)


def threshold_metrics(params: PatientParams, x, z: float) -> MetricPair:
    """Closed-form ``(F(x, z), G(x, z))``."""
    scalar = np.ndim(x) == 0
    x = np.asarray(x, dtype=float)
    r, beta = params.r, params.beta
    active = x > z
    reg = classify_threshold(params, z)

    if reg.kind == "below_p":
        reward = np.where(active, r / (1.0 - beta), r * (1.0 / (1.0 - beta) - x))
        work = np.where(active, 1.0 / (1.0 - beta), beta / (1.0 - beta))
    elif reg.kind == "middle":
        k_f, k_g = _anchor(params, reg.t)
        s = crossing_time_array(params, x, np.full_like(x, z))
        bs = beta ** np.where(active, 0, s)
        passive_reward = r * disc_passive_sum(params, x, s) + bs * k_f
        reward = np.where(active, k_f, passive_reward)
        work = np.where(active, k_g, bs * k_g)
    elif reg.kind == "above_zinf":
        phi_p = disc_passive_sum(params, params.p, math.inf)
        reward = np.where(active, r * (1.0 + beta * phi_p), r * disc_passive_sum(params, x, math.inf))
        work = np.where(active, 1.0, 0.0)
    else:
        reward = r * disc_passive_sum(params, x, math.inf) + 0.0 * x
        work = np.zeros_like(x)
    return _pair(reward, work, scalar)


def marginal_metrics(params: PatientParams, x, z: float) -> MetricPair:
    """Marginal reward and work ``(f(x, z), g(x, z))`` of acting now versus resting now."""
    scalar = np.ndim(x) == 0
    x = np.asarray(x, dtype=float)
    r, beta, rho = params.r, params.beta, params.rho
    reg = classify_threshold(params, z)
    active = x > z

    if reg.kind == "below_p":
        f = r * x
        g = np.ones_like(x)
    elif reg.kind == "middle":
        k_f, k_g = _anchor(params, reg.t)
        s = crossing_time_array(params, x, np.full_like(x, z))
        s = np.where(active, 1, s)
        bs = beta**s
        f_rest = (1.0 - bs) * k_f - r * disc_passive_sum(params, x, s)
        f = np.where(active, (1.0 - beta) * k_f - r * (1.0 - x), f_rest)
        g = np.where(active, (1.0 - beta) * k_g, (1.0 - bs) * k_g)
    elif reg.kind == "above_zinf":
        k_f = r + beta * r * disc_passive_sum(params, params.p, math.inf)
        jump = active & (passive_step(params, x) > z)
        f = np.where(jump, r * (x - 1.0) + (1.0 - beta) * k_f, r * x / (1.0 - beta * rho))
        g = np.where(jump, 1.0 - beta, 1.0)
    else:
        f = r * x / (1.0 - beta * rho)
        g = np.ones_like(x)
    return _pair(f, g, scalar)


def mp_metric(params: PatientParams, x, z: float):
    """Marginal productivity ``f(x, z) / g(x, z)``; ``g >= 1 - beta`` so this is always defined."""
    f, g = marginal_metrics(params, x, z)
    return f / g


def truncated_oracle(params: PatientParams, x, z, horizon: int) -> MetricPair:
    """Simulate the threshold policy for ``horizon`` periods by plain iteration.

    Independent of the closed forms: it steps the belief with ``passive_step``
    and resets to ``p`` on activation.  ``x`` and ``z`` broadcast together.
    The truncation error is at most ``max(r, 1) * beta**horizon / (1 - beta)``.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    scalar = np.ndim(x) == 0 and np.ndim(z) == 0
    x, z = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(z, dtype=float))
    belief = x.copy()
    reward = np.zeros_like(belief)
    work = np.zeros_like(belief)
    disc = 1.0
    for _ in range(horizon):
        act = belief > z
        reward += disc * params.r * np.where(act, 1.0, 1.0 - belief)
        work += disc * act
        belief = np.where(act, params.p, passive_step(params, belief))
        disc *= params.beta
    return _pair(reward, work, scalar)


def deviation_oracle(params: PatientParams, x, z, horizon: int) -> MetricPair:
    """Marginal metrics from two truncated simulations (act first vs rest first)."""
    x = np.asarray(x, dtype=float)
    r, beta = params.r, params.beta
    on = truncated_oracle(params, np.full_like(x, params.p), z, horizon - 1)
    off = truncated_oracle(params, passive_step(params, x), z, horizon - 1)
    f = (r + beta * on.reward) - (r * (1.0 - x) + beta * off.reward)
    g = (1.0 + beta * on.work) - beta * off.work
    return _pair(f, g, np.ndim(f) == 0)


__all__ = [
    "ALWAYS_ACTIVE",
    "MetricPair",
    "Regime",
    "classify_threshold",
    "deviation_oracle",
    "marginal_metrics",
    "mp_metric",
    "threshold_metrics",
    "truncated_oracle",
]
