"""Monte-Carlo evaluation of capacity-constrained intervention policies on a cohort.

Beliefs evolve deterministically given the actions, so the only randomness is
the initial belief draw and, for the random policy, the choice of patients.
Each run owns two Philox streams keyed by ``(seed, run)``: one for initial
beliefs, one for the random policy.  Every policy therefore sees the same
initial beliefs in run ``k`` (common random numbers), and results do not
depend on how runs are split across workers.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .average import avg_mp_index
from .core import PatientParams
from .index import mp_index

POLICIES = ("whittle", "whittle_avg", "myopic", "round_robin", "random", "threshold")
DEFAULT_POLICIES = ("whittle", "myopic", "round_robin", "random")

_STREAM_INIT = 0
_STREAM_POLICY = 1


def run_rng(seed: int, run: int, stream: int) -> np.random.Generator:
    ss = np.random.SeedSequence(seed, spawn_key=(run, stream))
    return np.random.Generator(np.random.Philox(ss))


@dataclass
class SimConfig:
    horizon: int = 300
    runs: int = 200
    capacity: int = 1
    seed: int = 0
    policy: str = "whittle"
    initial: str | Sequence[float] = "uniform"
    thresholds: Sequence[float] | None = None  # only for policy="threshold"
    threads: int = 1

    def __post_init__(self):
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        if self.runs <= 0:
            raise ValueError("runs must be positive")
        if self.policy not in POLICIES:
            raise ValueError(f"unknown policy {self.policy!r}; expected one of {POLICIES}")


@dataclass
class SimResult:
    policy: str
    vbar_mean: float
    vbar_stderr: float
    truncation_bias: float
    actions_per_run: float
    elapsed: float
    per_run: np.ndarray = field(repr=False)
    truncation_bias_factor: float = 0.0  # beta**T

    @property
    def vbar_adjusted(self) -> float:
        """``vbar`` rescaled by ``1 / (1 - beta**T)``; exact when per-period reward is constant."""
        return self.vbar_mean / (1.0 - self.truncation_bias_factor)


class _Cohort:
    """Column groups of identical patients for vectorised index evaluation."""

    def __init__(self, patients: Sequence[PatientParams]):
        self.patients = list(patients)
        self.n = len(self.patients)
        groups: dict[PatientParams, list[int]] = {}
        for i, pp in enumerate(self.patients):
            groups.setdefault(pp, []).append(i)
        self.groups = [(pp, np.asarray(cols)) for pp, cols in groups.items()]
        self.p = np.array([pp.p for pp in self.patients])
        self.rho = np.array([pp.rho for pp in self.patients])
        self.r = np.array([pp.r for pp in self.patients])
        self.cost = np.array([pp.cost for pp in self.patients])
        betas = {pp.beta for pp in self.patients}
        if len(betas) != 1:
            raise ValueError("all patients must share one discount factor")
        self.beta = betas.pop()

    def apply(self, fn, beliefs):
        out = np.empty_like(beliefs)
        for pp, cols in self.groups:
            out[..., cols] = fn(pp, beliefs[..., cols])
        return out


def _priorities(policy: str, cohort: _Cohort, beliefs, period: int, capacity: int, keys, thresholds):
    """Priority score and eligibility mask, shape ``(runs, N)``."""
    if policy == "whittle":
        prio = cohort.apply(mp_index, beliefs)
        return prio, prio >= 0.0
    if policy == "whittle_avg":
        prio = cohort.apply(avg_mp_index, beliefs) - cohort.cost
        return prio, prio >= 0.0
    if policy == "myopic":
        prio = cohort.r * beliefs
        return prio, np.ones(beliefs.shape, dtype=bool)
    if policy == "round_robin":
        n = cohort.n
        start = (period * capacity) % n if n else 0
        rank = (np.arange(n) - start) % n
        prio = np.broadcast_to(-rank.astype(float), beliefs.shape)
        return prio, np.ones(beliefs.shape, dtype=bool)
    if policy == "random":
        return -keys, np.ones(beliefs.shape, dtype=bool)
    if policy == "threshold":
        prio = beliefs - thresholds
        return prio, prio > 0.0
    raise ValueError(f"unknown policy {policy!r}")


def _choose(prio, eligible, capacity: int):
    """Top-``capacity`` eligible entries per row; ties go to the lower patient id."""
    runs, n = prio.shape
    act = np.zeros((runs, n), dtype=bool)
    if capacity <= 0 or n == 0:
        return act
    order = np.argsort(-prio, axis=1, kind="stable")[:, :capacity]
    rows = np.arange(runs)[:, None]
    act[rows, order] = True
    return act & eligible


def select_actions(policy: str, patients: Sequence[PatientParams], beliefs, capacity: int, period: int = 0,
                   rng: np.random.Generator | None = None, thresholds=None) -> np.ndarray:
    """Boolean action vector for one cohort state (see ``simulate`` for the batched form)."""
    cohort = _Cohort(patients)
    if not 0 <= capacity <= cohort.n:
        raise ValueError(f"capacity must lie in [0, {cohort.n}]")
    b = np.asarray(beliefs, dtype=float)[None, :]
    keys = None
    if policy == "random":
        rng = rng or np.random.default_rng()
        keys = rng.random(b.shape)
    th = None if thresholds is None else np.asarray(thresholds, dtype=float)
    prio, ok = _priorities(policy, cohort, b, period, capacity, keys, th)
    return _choose(prio, ok, capacity)[0]


def _simulate_runs(cfg: SimConfig, cohort: _Cohort, run_ids: Sequence[int]):
    n, beta = cohort.n, cohort.beta
    if isinstance(cfg.initial, str):
        if cfg.initial != "uniform":
            raise ValueError(f"unknown initial-belief mode {cfg.initial!r}")
        beliefs = np.stack([run_rng(cfg.seed, k, _STREAM_INIT).random(n) for k in run_ids])
    else:
        x0 = np.asarray(cfg.initial, dtype=float)
        if x0.shape != (n,):
            raise ValueError("explicit initial beliefs need one value per patient")
        beliefs = np.tile(x0, (len(run_ids), 1))
    policy_rngs = [run_rng(cfg.seed, k, _STREAM_POLICY) for k in run_ids] if cfg.policy == "random" else None
    thresholds = None
    if cfg.policy == "threshold":
        if cfg.thresholds is None:
            raise ValueError("threshold policy needs per-patient thresholds")
        thresholds = np.asarray(cfg.thresholds, dtype=float)

    total = np.zeros(len(run_ids))
    n_act = np.zeros(len(run_ids))
    disc = 1.0
    for t in range(cfg.horizon):
        keys = np.stack([g.random(n) for g in policy_rngs]) if policy_rngs else None
        prio, ok = _priorities(cfg.policy, cohort, beliefs, t, cfg.capacity, keys, thresholds)
        act = _choose(prio, ok, cfg.capacity)
        reward = cohort.r * np.where(act, 1.0, 1.0 - beliefs) - cohort.cost * act
        total += disc * reward.sum(axis=1)
        n_act += act.sum(axis=1)
        beliefs = np.where(act, cohort.p, cohort.p + cohort.rho * beliefs)
        disc *= beta
    return (1.0 - beta) * total / n, n_act


def simulate(cfg: SimConfig, patients: Sequence[PatientParams]) -> SimResult:
    """Estimate the normalised discounted reward of ``cfg.policy`` over ``cfg.horizon`` periods."""
    cohort = _Cohort(patients)
    if not 0 <= cfg.capacity <= cohort.n:
        raise ValueError(f"capacity must lie in [0, {cohort.n}]")
    start = time.perf_counter()
    run_ids = list(range(cfg.runs))
    if cfg.threads > 1 and cfg.runs > 1:
        chunks = [c.tolist() for c in np.array_split(run_ids, min(cfg.threads, cfg.runs))]
        with ThreadPoolExecutor(cfg.threads) as pool:
            parts = list(pool.map(lambda ids: _simulate_runs(cfg, cohort, ids), chunks))
        per_run = np.concatenate([p[0] for p in parts])
        n_act = np.concatenate([p[1] for p in parts])
    else:
        per_run, n_act = _simulate_runs(cfg, cohort, run_ids)
    stderr = float(per_run.std(ddof=1) / np.sqrt(cfg.runs)) if cfg.runs > 1 else 0.0
    bias_factor = cohort.beta**cfg.horizon
    return SimResult(
        policy=cfg.policy,
        vbar_mean=float(per_run.mean()),
        vbar_stderr=stderr,
        truncation_bias=float(cohort.r.max() * bias_factor),
        actions_per_run=float(n_act.mean()),
        elapsed=time.perf_counter() - start,
        per_run=per_run,
        truncation_bias_factor=bias_factor,
    )


def relative_gap(vbar: float, dbar: float) -> float:
    """``(dbar - vbar) / dbar``; slightly negative values are Monte-Carlo noise and are kept."""
    if not dbar > 0.0:
        raise ValueError("normalised dual bound must be positive")
    return (dbar - vbar) / dbar
