"""``adherence-rmab`` command line.

Exit codes: 0 success, 1 when any study instance failed, 2 on bad configuration.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .average import avg_metrics, avg_mp_index, verify_apcli
from .core import PatientParams
from .dual import dual_bound, uniform_metrics
from .experiments import (
    ConfigError,
    GridConfig,
    InstanceSpec,
    Profile,
    build_instance_grid,
    desk_profile,
    load_records,
    full_profile,
    run_study,
    summarize,
    write_table,
)
from .index import (
    default_grid,
    index_table,
    mp_index,
    optimal_threshold,
    q_branch,
    sensitivity_p,
    sensitivity_q,
    verify_pcl,
)
from .metrics import marginal_metrics, threshold_metrics
from .simulate import DEFAULT_POLICIES, POLICIES, SimConfig, simulate

DEFAULT_PARAMS = "0.3,0.2,1,0.95"


def _params(text: str) -> PatientParams:
    try:
        return PatientParams.parse(text)
    except ValueError as exc:
        raise ConfigError(f"--params: {exc}") from None


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from None


def _policies(text: str) -> tuple[str, ...]:
    pols = tuple(p.strip() for p in text.split(",") if p.strip())
    bad = [p for p in pols if p not in POLICIES or p == "threshold"]
    if bad or not pols:
        raise ConfigError(f"unknown policies {bad}; choose from {[p for p in POLICIES if p != 'threshold']}")
    return pols


def _instance(args) -> InstanceSpec:
    vals = _floats(args.instance)
    if len(vals) != 6:
        raise ConfigError("--instance needs pA,qA,pB,qB,propA,M/N")
    pa, qa, pb, qb, prop, ratio = vals
    return InstanceSpec(0, pa, qa, pb, qb, prop, ratio, args.n, 1.0, args.beta, args.seed)


def _cohort(args):
    """Cohort and capacity from either ``--instance`` or ``--params`` with ``--n`` and ``--capacity``."""
    if args.instance:
        spec = _instance(args)
        return spec.patients(), spec.capacity
    pp = _params(args.params)
    if not 0 <= args.capacity <= args.n:
        raise ConfigError("--capacity must lie in [0, n]")
    return [pp] * args.n, args.capacity


def _emit(rows, out_dir, name):
    if out_dir:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        path = Path(out_dir) / f"{name}.csv"
        with path.open("w", newline="", encoding="utf-8") as fh:
            write_table(rows, fh)
        print(path)
    else:
        write_table(rows, sys.stdout)


# ---------------------------------------------------------------- commands


def cmd_index(args):
    pp = _params(args.params)
    xs = np.linspace(0.0, 1.0, args.points)
    rows = [{"x": x, "index": m, "index_avg": a} for x, m, a in zip(xs, mp_index(pp, xs), avg_mp_index(pp, xs))]
    _emit(rows, args.out_dir, "index")


def cmd_threshold_map(args):
    pp = _params(args.params)
    top = 1.1 * index_table(pp).lambda_max
    rows = [{"price": lam, "threshold": optimal_threshold(pp, lam)} for lam in np.linspace(0.0, top, args.points)]
    _emit(rows, args.out_dir, "threshold_map")


def cmd_metrics(args):
    pp = _params(args.params)
    rows = []
    for x in _floats(args.x):
        for z in _floats(args.z):
            big = threshold_metrics(pp, x, z)
            marg = marginal_metrics(pp, x, z)
            rows.append({"x": x, "z": z, "F": big.reward, "G": big.work, "f": marg.reward, "g": marg.work})
    _emit(rows, args.out_dir, "metrics")


def cmd_dual_bound(args):
    cohort, capacity = _cohort(args)
    res = dual_bound(cohort, capacity, eps=args.eps)
    beta = cohort[0].beta
    out = {
        "lambda_star": res.lambda_star,
        "bound": res.bound,
        "dbar": res.normalized(len(cohort), beta),
        "mode": res.mode,
        "iterations": res.iterations,
        "bracket_width": res.bracket_width,
        "derivative_at_star": res.derivative_at_star,
        "lambda_max": res.lambda_max,
        "bound_at_upper": res.bound_at_upper,
    }
    print(json.dumps(out, indent=2))


def cmd_simulate(args):
    cohort, capacity = _cohort(args)
    rows = []
    for pol in _policies(args.policies):
        cfg = SimConfig(args.horizon, args.runs, capacity, args.seed, pol, threads=args.threads)
        res = simulate(cfg, cohort)
        rows.append({"policy": pol, "vbar": res.vbar_mean, "stderr": res.vbar_stderr,
                     "truncation_bias": res.truncation_bias, "actions_per_run": res.actions_per_run,
                     "seconds": res.elapsed})
    _emit(rows, args.out_dir, "simulate")


def _profile(args) -> Profile:
    if args.grid_file:
        cfg = GridConfig.from_file(args.grid_file)
        cfg.seed = args.seed
        prof = Profile("grid-file", build_instance_grid(cfg), runs=1000, horizon=300)
    elif args.profile == "full":
        prof = full_profile(args.seed)
    else:
        prof = desk_profile(args.seed, n=args.n or 200)
    if args.n and prof.name != "desk":
        prof.instances = [InstanceSpec(**{**s.__dict__, "n": args.n}) for s in prof.instances]
    if args.runs:
        prof.runs = args.runs
    if args.horizon:
        prof.horizon = args.horizon
    if args.limit:
        prof.instances = prof.instances[: args.limit]
    return prof


def cmd_study(args):
    prof = _profile(args)
    policies = _policies(args.policies)

    def progress(spec, row, elapsed):
        status = row["error"] or "ok"
        print(f"instance {spec.instance_id}: {status} ({elapsed:.1f}s)", file=sys.stderr)

    outcome = run_study(prof.instances, args.out_dir, runs=prof.runs, horizon=prof.horizon, eps=args.eps,
                        policies=policies, threads=args.threads,
                        metadata={"profile": prof.name, "seed": args.seed, **prof.extra},
                        progress=None if args.quiet else progress)
    print(outcome.csv_path)
    return 1 if outcome.errors else 0


def cmd_summarize(args):
    records = load_records(args.input)
    rows = summarize(records, args.kind, top=args.top, adjusted=args.adjusted)
    _emit(rows, args.out_dir, f"summary_{args.kind}")


def cmd_verify(args):
    pp = _params(args.params)
    grid = default_grid(args.points, seed=args.seed)
    out = {}
    for name, rep in (("pcl", verify_pcl(pp, grid)), ("apcli", verify_apcli(pp, grid))):
        out[name] = {
            "passed": rep.passed,
            "positive_work": rep.positive_work,
            "monotone_index": rep.monotone_index,
            "stieltjes": rep.stieltjes,
            "min_work": rep.min_work,
            "continuity_gap": rep.continuity_gap,
            "stieltjes_residual": rep.stieltjes_residual,
            **rep.extra,
        }
    print(json.dumps(out, indent=2, default=float))
    return 0


def _staircase(pp, points):
    rows = []
    for z in np.linspace(0.0, 1.0, points):
        f, g = uniform_metrics(pp, float(z))
        fa, ga = avg_metrics(pp, float(z))
        row = {"z": z, "F_uniform": f, "G_uniform": g, "F_avg": fa, "G_avg": ga}
        if pp.p <= z:
            row["F_from_p"], row["G_from_p"] = threshold_metrics(pp, pp.p, float(z))
        else:
            row["F_from_p"] = row["G_from_p"] = math.nan
        rows.append(row)
    return rows


def _sensitivity(pp, points):
    rows = []
    grid = np.linspace(0.01, 0.99, points)
    for x in (0.2, 0.5, 0.8):
        ps = grid[grid + pp.q < 1.0]
        rep = sensitivity_p(pp, x, ps)
        rows += [{"x": x, "param": "p", "value": v, "index": m, "branch": t} for v, m, t in zip(ps, rep.values, rep.tags)]
        qs = grid[grid + pp.p < 1.0]
        rep = sensitivity_q(pp, x, qs)
        rows += [{"x": x, "param": "q", "value": v, "index": m, "branch": q_branch(pp.with_changes(q=float(v)), x)}
                 for v, m in zip(qs, rep.values)]
    return rows


def cmd_curves(args):
    pp = _params(args.params)
    out_dir = args.out_dir or "curves"
    kinds = ["staircase", "index", "threshold-map", "sensitivity"] if args.kind == "all" else [args.kind]
    for kind in kinds:
        if kind == "staircase":
            _emit(_staircase(pp, args.points), out_dir, "staircase")
        elif kind == "index":
            args.out_dir = out_dir
            cmd_index(args)
        elif kind == "threshold-map":
            args.out_dir = out_dir
            cmd_threshold_map(args)
        else:
            _emit(_sensitivity(pp, args.points), out_dir, "sensitivity")


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="adherence-rmab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    def params(p):
        p.add_argument("--params", default=DEFAULT_PARAMS, help="p,q,r,beta[,cost] (default %(default)s)")

    def out(p):
        p.add_argument("--out-dir", help="write CSV files here instead of stdout")

    def cohort(p):
        params(p)
        p.add_argument("--instance", help="two-type instance pA,qA,pB,qB,propA,M/N (overrides --params)")
        p.add_argument("--n", type=int, default=200, help="cohort size")
        p.add_argument("--capacity", type=int, default=1, help="capacity M for a --params cohort")
        p.add_argument("--beta", type=float, default=0.99, help="discount factor for --instance")
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("index", help="index table m(x) on a uniform grid")
    params(p), out(p)
    p.add_argument("--points", type=int, default=101)
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("threshold-map", help="optimal threshold as a function of the price")
    params(p), out(p)
    p.add_argument("--points", type=int, default=101)
    p.set_defaults(func=cmd_threshold_map)

    p = sub.add_parser("metrics", help="reward/work metrics and their marginals")
    params(p), out(p)
    p.add_argument("--x", default="0.5", help="comma-separated beliefs")
    p.add_argument("--z", default="0.5", help="comma-separated thresholds")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("dual-bound", help="Lagrangian upper bound for a cohort with uniform initial beliefs")
    cohort(p)
    p.add_argument("--eps", type=float, default=1e-6)
    p.set_defaults(func=cmd_dual_bound)

    p = sub.add_parser("simulate", help="Monte-Carlo value of priority policies")
    cohort(p), out(p)
    p.add_argument("--policies", default=",".join(DEFAULT_POLICIES))
    p.add_argument("--runs", type=int, default=200)
    p.add_argument("--horizon", type=int, default=300)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("study", help="dual bounds and simulations over an instance grid")
    p.add_argument("--profile", choices=("desk", "full"), default="desk")
    p.add_argument("--grid-file", help="JSON overrides: p_grid, q_grid, prop_a, capacity_ratios, n, r, beta")
    p.add_argument("--out-dir", default="study")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps", type=float, default=1e-6)
    p.add_argument("--policies", default=",".join(DEFAULT_POLICIES))
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--n", type=int, help="override cohort size")
    p.add_argument("--runs", type=int, help="override Monte-Carlo runs")
    p.add_argument("--horizon", type=int, help="override horizon")
    p.add_argument("--limit", type=int, help="only the first LIMIT instances")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_study)

    p = sub.add_parser("summarize", help="gap, ratio or worst-myopic tables from a study CSV")
    p.add_argument("input", help="study.csv")
    p.add_argument("--kind", choices=("gaps", "ratios", "worst-myopic"), default="gaps")
    p.add_argument("--top", type=int, default=10)
    p.add_argument("--adjusted", action="store_true", help="use truncation-adjusted gaps")
    out(p)
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("verify", help="run the discounted and average-criterion index checks")
    params(p)
    p.add_argument("--points", type=int, default=101)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("curves", help="columnar data for staircase, index, threshold-map and sensitivity plots")
    params(p), out(p)
    p.add_argument("--kind", choices=("all", "staircase", "index", "threshold-map", "sensitivity"), default="all")
    p.add_argument("--points", type=int, default=101)
    p.set_defaults(func=cmd_curves)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        code = args.func(args)
    except ValueError as exc:  # includes ConfigError
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return code or 0


if __name__ == "__main__":
    sys.exit(main())
