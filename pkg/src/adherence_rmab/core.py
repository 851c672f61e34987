"""Single-patient model constants and the deterministic passive belief dynamics.

Beliefs are probabilities of nonadherence.  Under the passive action the belief
moves along the affine map ``h(x) = p + rho * x``; under the active action it
resets to ``p``.  Thresholds live on the extended real line: ``ALWAYS_ACTIVE``
(``-inf``) and ``ALWAYS_PASSIVE`` (``+inf``) are the two sentinels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

ALWAYS_ACTIVE = -math.inf
ALWAYS_PASSIVE = math.inf

# crossing_time returns None for "never crosses"
NEVER = None

_CEIL_GUARD = 1e-12


@dataclass(frozen=True)
class PatientParams:
    """Model constants of one patient (arm).

    ``rho`` and ``z_inf`` are derived once at construction; every formula in the
    package reads them from here.
    """

    p: float
    q: float
    r: float = 1.0
    beta: float = 0.95
    cost: float = 0.0
    rho: float = field(init=False, repr=False)
    z_inf: float = field(init=False, repr=False)

    def __post_init__(self):
        p, q, r, beta, cost = self.p, self.q, self.r, self.beta, self.cost
        if not (0.0 < p < 1.0 and 0.0 < q < 1.0):
            raise ValueError(f"p and q must lie in (0, 1), got p={p}, q={q}")
        if not 0.0 < beta < 1.0:
            raise ValueError(f"beta must lie in (0, 1), got {beta}")
        if not r > 0.0:
            raise ValueError(f"r must be positive, got {r}")
        if cost < 0.0:
            raise ValueError(f"cost must be nonnegative, got {cost}")
        if not 1.0 - p > q:
            raise ValueError(f"need 1 - p > q (positive persistence), got p={p}, q={q}")
        object.__setattr__(self, "rho", 1.0 - p - q)
        object.__setattr__(self, "z_inf", p / (p + q))

    def with_changes(self, **kw) -> "PatientParams":
        base = dict(p=self.p, q=self.q, r=self.r, beta=self.beta, cost=self.cost)
        base.update(kw)
        return PatientParams(**base)

    @classmethod
    def parse(cls, text: str) -> "PatientParams":
        """Parse ``"p,q,r,beta[,cost]"``."""
        parts = [float(v) for v in text.split(",")]
        if len(parts) not in (4, 5):
            raise ValueError(f"expected p,q,r,beta[,cost], got {text!r}")
        return cls(*parts)


def passive_step(params: PatientParams, x):
    return params.p + params.rho * x


def trajectory_point(params: PatientParams, x, t):
    """Passive trajectory ``h_t(x) = z_inf + (x - z_inf) * rho**t`` (closed form).

    ``h_0(x)`` is returned as ``x`` itself; the closed form can miss it by an
    ulp, which would misplace the jump at ``z = p``.
    """
    # one power routine for scalars and arrays, so both paths round alike
    t = np.asarray(t)
    h = params.z_inf + (x - params.z_inf) * np.power(params.rho, t.astype(np.float64))
    if np.ndim(h) == 0:
        return x if t == 0 else float(h)
    return np.where(t == 0, x, h)


def state_breakpoint(params: PatientParams, t: int) -> float:
    """``z_{-1} = 0`` and ``z_t = h_t(p)`` for ``t >= 0``."""
    if t < -1:
        raise ValueError(f"breakpoint index must be >= -1, got {t}")
    if t == -1:
        return 0.0
    return trajectory_point(params, params.p, t)


def crossing_time(params: PatientParams, x: float, z: float) -> int | None:
    """First ``t >= 0`` with ``h_t(x) > z``, or ``None`` when the trajectory never crosses.

    The logarithmic closed form gives a candidate; it is then snapped so that
    ``h_{t-1}(x) <= z < h_t(x)`` holds for the same closed-form trajectory used
    everywhere else.  Without the snap, breakpoints ``z = z_t`` land on either
    side depending on rounding.
    """
    if z == ALWAYS_ACTIVE or x > z:
        return 0
    z_inf = params.z_inf
    if z >= z_inf:
        return NEVER
    ratio = math.log((z_inf - z) / (z_inf - x)) / math.log(params.rho)
    t = max(1, math.ceil(ratio - _CEIL_GUARD))
    while trajectory_point(params, x, t) <= z:
        t += 1
    while t > 1 and trajectory_point(params, x, t - 1) > z:
        t -= 1
    return t


def crossing_time_array(params: PatientParams, x, z):
    """Vectorised crossing time for ``x <= z < z_inf`` (elementwise, integer array).

    Entries outside that region are not meaningful; callers mask them.
    """
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    z_inf, rho = params.z_inf, params.rho
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.log((z_inf - z) / (z_inf - x)) / math.log(rho)
    ratio = np.where(np.isfinite(ratio), ratio, 1.0)
    t = np.maximum(1, np.ceil(ratio - _CEIL_GUARD)).astype(np.int64)
    # one snap step each way absorbs rounding at breakpoints
    t = np.where(trajectory_point(params, x, t) <= z, t + 1, t)
    t = np.where((t > 1) & (trajectory_point(params, x, t - 1) > z), t - 1, t)
    return t


def disc_passive_sum(params: PatientParams, x, t):
    """Discounted passive sum ``Phi_t(x) = sum_{s<t} (1 - h_s(x)) beta**s``.

    ``t = math.inf`` gives ``Phi_inf(x)``.
    """
    beta, rho, z_inf = params.beta, params.rho, params.z_inf
    if np.isscalar(t) and math.isinf(t):
        return (1.0 - z_inf) / (1.0 - beta) + (z_inf - x) / (1.0 - beta * rho)
    bt = beta ** t
    brt = (beta * rho) ** t
    return (1.0 - bt) / (1.0 - beta) * (1.0 - z_inf) + (1.0 - brt) / (1.0 - beta * rho) * (z_inf - x)


def avg_passive_sum(params: PatientParams, x, t):
    """Undiscounted passive sum ``sum_{s<t} (1 - h_s(x))``."""
    rho, z_inf = params.rho, params.z_inf
    return t * (1.0 - z_inf) + (1.0 - rho ** t) / (1.0 - rho) * (z_inf - x)
