"""Two-type instance grid, the study runner and its summary tables.

A study writes one CSV row per instance, in instance-id order, with every
float printed to 12 significant digits.  Wall-clock timings go to the JSON
sidecar so that the CSV depends only on the inputs and the seed.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from .core import PatientParams
from .dual import dual_bound
from .simulate import DEFAULT_POLICIES, SimConfig, relative_gap, simulate

GRID_VALUES = (0.01, 0.05, 0.10, 0.20, 0.30, 0.35)
PROP_A_VALUES = (0.1, 0.3, 0.5, 0.7, 0.9)
CAPACITY_RATIOS = (0.05, 0.1, 0.2, 0.3, 0.4, 0.5)
RHO_MARGIN = 0.05  # both types need p + q <= 1 - RHO_MARGIN

# (pA, qA, pB, qB, propA, M/N): instances with the largest myopic-to-Whittle gap ratio
WORST_MYOPIC_ROWS = (
    (0.10, 0.05, 0.35, 0.01, 0.70, 0.10),
    (0.05, 0.05, 0.35, 0.01, 0.70, 0.10),
    (0.05, 0.05, 0.35, 0.01, 0.90, 0.05),
    (0.05, 0.05, 0.30, 0.01, 0.70, 0.10),
    (0.10, 0.05, 0.35, 0.01, 0.70, 0.05),
    (0.05, 0.05, 0.30, 0.01, 0.90, 0.05),
    (0.05, 0.05, 0.35, 0.01, 0.50, 0.20),
    (0.05, 0.05, 0.30, 0.01, 0.50, 0.20),
    (0.10, 0.05, 0.35, 0.01, 0.50, 0.10),
    (0.05, 0.10, 0.35, 0.05, 0.70, 0.30),
)

SIG_DIGITS = 12
QUANTILE_METHOD = "linear"


class ConfigError(ValueError):
    """Invalid study or grid configuration (CLI exit code 2)."""


@dataclass(frozen=True)
class InstanceSpec:
    instance_id: int
    p_a: float
    q_a: float
    p_b: float
    q_b: float
    prop_a: float
    capacity_ratio: float
    n: int = 200
    r: float = 1.0
    beta: float = 0.99
    seed: int = 0

    @property
    def n_a(self) -> int:
        # half-up rounding, then keep one patient of each type
        return min(max(math.floor(self.prop_a * self.n + 0.5), 1), self.n - 1)

    @property
    def capacity(self) -> int:
        return min(max(math.floor(self.capacity_ratio * self.n + 0.5), 0), self.n)

    def patients(self) -> list[PatientParams]:
        a = PatientParams(self.p_a, self.q_a, self.r, self.beta)
        b = PatientParams(self.p_b, self.q_b, self.r, self.beta)
        return [a] * self.n_a + [b] * (self.n - self.n_a)

    def sim_seed(self) -> int:
        """Per-instance seed derived from the study seed and the instance id."""
        ss = np.random.SeedSequence([self.seed, self.instance_id])
        return int(ss.generate_state(1, np.uint64)[0])


@dataclass
class GridConfig:
    p_grid: Sequence[float] = GRID_VALUES
    q_grid: Sequence[float] = GRID_VALUES
    prop_a: Sequence[float] = PROP_A_VALUES
    capacity_ratios: Sequence[float] = CAPACITY_RATIOS
    n: int = 1000
    r: float = 1.0
    beta: float = 0.99
    seed: int = 0

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> "GridConfig":
        data = json.loads(Path(path).read_text())
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown grid keys: {sorted(unknown)}")
        return cls(**data)


def feasible_types(cfg: GridConfig) -> list[tuple[float, float]]:
    return [(p, q) for p in cfg.p_grid for q in cfg.q_grid if p + q <= 1.0 - RHO_MARGIN + 1e-12]


def build_instance_grid(cfg: GridConfig | None = None) -> list[InstanceSpec]:
    """All ordered two-type instances with ``pA < pB`` and ``qA > qB``.

    Infeasible ``(p, q)`` combinations are filtered individually; a grid
    with no feasible combination at all is rejected.
    """
    cfg = cfg or GridConfig()
    for v in itertools.chain(cfg.p_grid, cfg.q_grid):
        if not 0.0 < v < 1.0:
            raise ConfigError(f"grid value {v} outside (0, 1)")
    if any(not 0.0 < a < 1.0 for a in cfg.prop_a):
        raise ConfigError("type-A shares must lie in (0, 1)")
    if any(not 0.0 <= c <= 1.0 for c in cfg.capacity_ratios):
        raise ConfigError("capacity ratios must lie in [0, 1]")
    if cfg.n < 2:
        raise ConfigError("need at least two patients")
    types = feasible_types(cfg)
    if not types:
        raise ConfigError(f"no (p, q) pair satisfies p + q <= {1.0 - RHO_MARGIN}")
    pairs = [(a, b) for a in types for b in types if a[0] < b[0] and a[1] > b[1]]
    out = []
    for (pa, qa), (pb, qb) in pairs:
        for prop in cfg.prop_a:
            for ratio in cfg.capacity_ratios:
                out.append(InstanceSpec(len(out), pa, qa, pb, qb, prop, ratio, cfg.n, cfg.r, cfg.beta, cfg.seed))
    return out


def _match(spec: InstanceSpec, row) -> bool:
    key = (spec.p_a, spec.q_a, spec.p_b, spec.q_b, spec.prop_a, spec.capacity_ratio)
    return all(math.isclose(a, b) for a, b in zip(key, row))


@dataclass
class Profile:
    name: str
    instances: list[InstanceSpec]
    runs: int
    horizon: int
    eps: float = 1e-6
    policies: tuple[str, ...] = DEFAULT_POLICIES
    extra: dict = field(default_factory=dict)


def desk_profile(seed: int = 0, n: int = 200, runs: int = 200, horizon: int = 300, n_random: int = 20) -> Profile:
    """Worst-myopic rows plus ``n_random`` seeded draws from the full grid, scaled to ``n`` patients."""
    grid = build_instance_grid(GridConfig(n=n, seed=seed))
    chosen = []
    for row in WORST_MYOPIC_ROWS:
        chosen.append(next(s for s in grid if _match(s, row)))
    taken = {s.instance_id for s in chosen}
    rng = np.random.default_rng(seed)
    pool = [s for s in grid if s.instance_id not in taken]
    for i in sorted(rng.choice(len(pool), size=n_random, replace=False)):
        chosen.append(pool[i])
    chosen.sort(key=lambda s: s.instance_id)
    return Profile("desk", chosen, runs, horizon, extra={"n_random": n_random})


def full_profile(seed: int = 0) -> Profile:
    return Profile("full", build_instance_grid(GridConfig(seed=seed)), runs=1000, horizon=300)


# ---------------------------------------------------------------- study


def fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return f"{float(v):.{SIG_DIGITS}g}"


def _rounded(v: float) -> float:
    return float(fmt(v))


SPEC_COLUMNS = ("instance_id", "p_a", "q_a", "p_b", "q_b", "prop_a", "capacity_ratio", "n", "n_a", "capacity", "r",
                "beta", "seed")


def study_columns(policies: Sequence[str]) -> list[str]:
    cols = list(SPEC_COLUMNS) + ["dbar", "lambda_star", "dual_mode", "dual_iterations", "truncation_bias"]
    for pol in policies:
        cols += [f"vbar_{pol}", f"stderr_{pol}", f"gamma_{pol}", f"gamma_adj_{pol}"]
    cols.append("error")
    return cols


def run_instance(spec: InstanceSpec, runs: int, horizon: int, eps: float, policies: Sequence[str]) -> tuple[dict, float]:
    """One study row and its wall-clock time.

    The normalised bound ``dbar`` and every ``vbar`` are rounded to the CSV
    precision before the gaps are formed, so the gap columns recompute exactly
    from the printed values.
    """
    start = time.perf_counter()
    row = {c: getattr(spec, c) for c in SPEC_COLUMNS}
    row["error"] = ""
    try:
        cohort = spec.patients()
        dual = dual_bound(cohort, spec.capacity, eps=eps)
        dbar = _rounded(dual.normalized(spec.n, spec.beta))
        row.update(dbar=dbar, lambda_star=dual.lambda_star, dual_mode=dual.mode, dual_iterations=dual.iterations)
        seed = spec.sim_seed()
        for pol in policies:
            res = simulate(SimConfig(horizon, runs, spec.capacity, seed, pol), cohort)
            vbar = _rounded(res.vbar_mean)
            row[f"vbar_{pol}"] = vbar
            row[f"stderr_{pol}"] = res.vbar_stderr
            row[f"gamma_{pol}"] = relative_gap(vbar, dbar)
            row[f"gamma_adj_{pol}"] = relative_gap(vbar / (1.0 - res.truncation_bias_factor), dbar)
            row["truncation_bias"] = res.truncation_bias
    except Exception as exc:  # recorded per instance, never aborts the batch
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row, time.perf_counter() - start


def _format_row(row: dict, columns: Sequence[str]) -> list[str]:
    return [fmt(row.get(c)) for c in columns]


def _read_existing(path: Path, columns: list[str]) -> dict[int, list[str]]:
    if not path.exists():
        return {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != columns:
            raise ConfigError(f"{path} has a different column layout; use a fresh output directory")
        done = {}
        for rec in reader:
            if len(rec) == len(columns) and rec[-1] == "":
                done[int(rec[0])] = rec
    return done


@dataclass
class StudyOutcome:
    csv_path: Path
    rows: list[dict]
    computed: int
    errors: int


def run_study(instances: Sequence[InstanceSpec], out_dir: str | os.PathLike, runs: int = 200, horizon: int = 300,
              eps: float = 1e-6, policies: Sequence[str] = DEFAULT_POLICIES, threads: int = 1,
              metadata: dict | None = None, progress=None) -> StudyOutcome:
    """Dual bound plus policy simulations for every instance, streamed to ``out_dir/study.csv``.

    Rows already present without an error are kept; only the remaining ids are
    computed.  The final CSV is rewritten in instance-id order.
    """
    if not instances:
        raise ConfigError("no instances to run")
    ids = [s.instance_id for s in instances]
    if len(set(ids)) != len(ids):
        raise ConfigError("duplicate instance ids")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "study.csv"
    columns = study_columns(policies)
    done = _read_existing(path, columns)
    todo = [s for s in sorted(instances, key=lambda s: s.instance_id) if s.instance_id not in done]

    # stream finished rows (in id order) so an interrupted run can resume
    mode = "a" if path.exists() else "w"
    timings = {}
    with path.open(mode, newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if mode == "w":
            writer.writerow(columns)
        with ThreadPoolExecutor(max(1, threads)) as pool:
            results = pool.map(lambda s: run_instance(s, runs, horizon, eps, policies), todo)
            for spec, (row, elapsed) in zip(todo, results):
                done[spec.instance_id] = _format_row(row, columns)
                writer.writerow(done[spec.instance_id])
                fh.flush()
                timings[spec.instance_id] = elapsed
                if progress:
                    progress(spec, row, elapsed)

    wanted = set(ids)
    final = [done[i] for i in sorted(done) if i in wanted]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    writer.writerows(final)
    path.write_text(buf.getvalue(), encoding="utf-8")

    meta = {
        "version": __version__,
        "runs": runs,
        "horizon": horizon,
        "eps": eps,
        "policies": list(policies),
        "threads": threads,
        "float_format": f"{SIG_DIGITS} significant digits",
        "quantiles": QUANTILE_METHOD,
        "gamma": "(dbar - vbar) / dbar with vbar over T periods; gamma_adj divides vbar by 1 - beta**T",
        "instances": [asdict(s) for s in sorted(instances, key=lambda s: s.instance_id)],
        "seconds_per_instance": {str(k): v for k, v in sorted(timings.items())},
    }
    meta.update(metadata or {})
    (out / "study.json").write_text(json.dumps(meta, indent=2, sort_keys=True), encoding="utf-8")

    rows = load_records(path)
    return StudyOutcome(path, rows, len(todo), sum(1 for r in rows if r["error"]))


def load_records(path: str | os.PathLike) -> list[dict]:
    """Read a study CSV, converting numeric fields back to numbers."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for rec in rows:
        conv = {}
        for k, v in rec.items():
            if k in ("dual_mode", "error"):
                conv[k] = v
            elif k in ("instance_id", "n", "n_a", "capacity", "seed", "dual_iterations"):
                conv[k] = int(v) if v else None
            else:
                conv[k] = float(v) if v else math.nan
        out.append(conv)
    return out


# ---------------------------------------------------------------- summaries

STAT_NAMES = ("mean", "std", "min", "q25", "median", "q75", "max")


def describe(values: Iterable[float]) -> dict:
    """Order-invariant summary; quantiles interpolate linearly, std uses ``ddof=1``."""
    v = np.sort(np.asarray(list(values), dtype=float))
    if v.size == 0:
        raise ValueError("no values to summarise")
    q = np.quantile(v, [0.25, 0.5, 0.75], method=QUANTILE_METHOD)
    return {
        "mean": float(v.mean()),
        "std": float(v.std(ddof=1)) if v.size > 1 else 0.0,
        "min": float(v[0]),
        "q25": float(q[0]),
        "median": float(q[1]),
        "q75": float(q[2]),
        "max": float(v[-1]),
    }


def _policies_in(records) -> list[str]:
    return [k[len("gamma_"):] for k in records[0] if k.startswith("gamma_") and not k.startswith("gamma_adj_")]


def summarize(records: Sequence[dict], kind: str = "gaps", top: int = 10, adjusted: bool = False) -> list[dict]:
    """Summary rows for ``kind`` in {"gaps", "ratios", "worst-myopic"}; gaps are in percent."""
    ok = [r for r in records if not r.get("error")]
    if not ok:
        raise ValueError("no successful records to summarise")
    if kind == "gaps":
        prefix = "gamma_adj_" if adjusted else "gamma_"
        return [{"policy": pol, **describe(100.0 * r[prefix + pol] for r in ok)} for pol in _policies_in(ok)]
    if kind == "ratios":
        return [{"ratio": "whittle/myopic", **describe(r["vbar_whittle"] / r["vbar_myopic"] for r in ok)}]
    if kind == "worst-myopic":
        keyed = sorted(ok, key=lambda r: (-r["gamma_myopic"] / r["gamma_whittle"], r["instance_id"]))
        out = []
        for r in keyed[:top]:
            row = {k: r[k] for k in ("instance_id", "p_a", "q_a", "p_b", "q_b", "prop_a", "capacity_ratio")}
            for pol in ("whittle", "myopic", "random", "round_robin"):
                if f"gamma_{pol}" in r:
                    row[f"gamma_{pol}"] = 100.0 * r[f"gamma_{pol}"]
            row["myopic_over_whittle"] = r["gamma_myopic"] / r["gamma_whittle"]
            out.append(row)
        return out
    raise ValueError(f"unknown summary kind {kind!r}")


def write_table(rows: Sequence[dict], fh) -> None:
    if not rows:
        return
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(list(rows[0]))
    for r in rows:
        writer.writerow([fmt(v) for v in r.values()])
