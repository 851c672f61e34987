import csv
import json

import pytest

from adherence_rmab import experiments
from adherence_rmab.experiments import (
    WORST_MYOPIC_ROWS,
    ConfigError,
    GridConfig,
    InstanceSpec,
    build_instance_grid,
    describe,
    desk_profile,
    fmt,
    load_records,
    run_study,
    summarize,
)


def tiny_instances(n=20):
    return [
        InstanceSpec(0, 0.1, 0.3, 0.3, 0.05, 0.5, 0.2, n=n, beta=0.95),
        InstanceSpec(1, 0.05, 0.35, 0.35, 0.01, 0.3, 0.1, n=n, beta=0.95),
    ]


class TestGrid:
    def test_default_count(self):
        assert len(build_instance_grid()) == 6750

    def test_count_matches_brute_force(self):
        vals = (0.01, 0.05, 0.10, 0.20, 0.30, 0.35)
        count = 0
        for pa in vals:
            for qa in vals:
                for pb in vals:
                    for qb in vals:
                        ok = pa + qa <= 0.95 + 1e-12 and pb + qb <= 0.95 + 1e-12
                        count += ok and pa < pb and qa > qb
        assert count * 5 * 6 == 6750

    def test_ordering_and_feasibility(self):
        for s in build_instance_grid(GridConfig(n=50)):
            assert s.p_a < s.p_b and s.q_a > s.q_b
            assert s.p_a + s.q_a <= 0.95 + 1e-12 and s.p_b + s.q_b <= 0.95 + 1e-12

    def test_single_type_grid_is_empty(self):
        assert build_instance_grid(GridConfig(p_grid=[0.1], q_grid=[0.2])) == []

    @pytest.mark.parametrize(
        "cfg",
        [GridConfig(p_grid=[0.6, 0.7], q_grid=[0.5]), GridConfig(p_grid=[1.2]), GridConfig(n=1),
         GridConfig(prop_a=[1.0]), GridConfig(capacity_ratios=[1.5])],
    )
    def test_invalid_grids(self, cfg):
        with pytest.raises(ConfigError):
            build_instance_grid(cfg)

    def test_grid_file(self, tmp_path):
        path = tmp_path / "grid.json"
        path.write_text(json.dumps({"p_grid": [0.1, 0.2], "q_grid": [0.3, 0.1], "n": 40}))
        cfg = GridConfig.from_file(path)
        assert len(build_instance_grid(cfg)) == 1 * 5 * 6
        path.write_text(json.dumps({"bogus": 1}))
        with pytest.raises(ConfigError):
            GridConfig.from_file(path)


class TestInstanceSpec:
    def test_counts_round_half_up(self):
        s = InstanceSpec(0, 0.1, 0.3, 0.3, 0.05, 0.5, 0.05, n=50)
        assert s.n_a == 25 and s.capacity == 3
        assert InstanceSpec(0, 0.1, 0.3, 0.3, 0.05, 0.01, 0.1, n=20).n_a == 1
        assert InstanceSpec(0, 0.1, 0.3, 0.3, 0.05, 0.99, 0.1, n=20).n_a == 19

    def test_patients(self):
        s = InstanceSpec(0, 0.1, 0.3, 0.3, 0.05, 0.3, 0.1, n=10)
        pats = s.patients()
        assert len(pats) == 10 and sum(p.p == 0.1 for p in pats) == 3

    def test_seed_depends_on_id(self):
        a, b = tiny_instances()
        assert a.sim_seed() != b.sim_seed()
        assert a.sim_seed() == tiny_instances()[0].sim_seed()


def test_desk_profile():
    prof = desk_profile(seed=0, n=200)
    assert len(prof.instances) == 30
    keys = {(s.p_a, s.q_a, s.p_b, s.q_b, s.prop_a, s.capacity_ratio) for s in prof.instances}
    assert all(tuple(row) in keys for row in WORST_MYOPIC_ROWS)
    assert [s.instance_id for s in prof.instances] == sorted(s.instance_id for s in prof.instances)


class TestStudy:
    def test_full_capacity_has_zero_gap(self, tmp_path):
        spec = InstanceSpec(0, 0.1, 0.3, 0.3, 0.05, 0.5, 1.0, n=6, beta=0.95)
        out = run_study([spec], tmp_path, runs=3, horizon=400)
        row = out.rows[0]
        assert row["dual_mode"] == "at_zero"
        # the dual bound counts an infinite horizon; only the truncation remains
        for pol in ("whittle", "myopic", "round_robin", "random"):
            assert row[f"gamma_adj_{pol}"] == pytest.approx(0.0, abs=1e-10)
            assert row[f"gamma_{pol}"] == pytest.approx(0.95**400, abs=1e-10)

    def test_gamma_recomputes_from_csv(self, tmp_path):
        out = run_study(tiny_instances(), tmp_path, runs=4, horizon=50)
        with out.csv_path.open() as fh:
            for rec in csv.DictReader(fh):
                dbar = float(rec["dbar"])
                for pol in ("whittle", "myopic"):
                    assert float(rec[f"gamma_{pol}"]) == float(fmt((dbar - float(rec[f"vbar_{pol}"])) / dbar))
        meta = json.loads((tmp_path / "study.json").read_text())
        assert meta["runs"] == 4 and len(meta["instances"]) == 2

    def test_resume_is_identical(self, tmp_path):
        full = run_study(tiny_instances(), tmp_path / "a", runs=3, horizon=40)
        part = run_study(tiny_instances()[:1], tmp_path / "b", runs=3, horizon=40)
        assert part.computed == 1
        again = run_study(tiny_instances(), tmp_path / "b", runs=3, horizon=40)
        assert again.computed == 1
        assert full.csv_path.read_text() == again.csv_path.read_text()

    def test_thread_count_does_not_change_output(self, tmp_path):
        a = run_study(tiny_instances(), tmp_path / "a", runs=3, horizon=40, threads=1)
        b = run_study(tiny_instances(), tmp_path / "b", runs=3, horizon=40, threads=2)
        assert a.csv_path.read_text() == b.csv_path.read_text()

    def test_error_rows_are_recorded_and_retried(self, tmp_path, monkeypatch):
        real = experiments.dual_bound

        def flaky(cohort, capacity, **kw):
            if len(cohort) == 20 and capacity == 2:
                raise RuntimeError("boom")
            return real(cohort, capacity, **kw)

        monkeypatch.setattr(experiments, "dual_bound", flaky)
        out = run_study(tiny_instances(), tmp_path, runs=2, horizon=20)
        assert out.errors == 1
        assert out.rows[0]["error"] == "" and "boom" in out.rows[1]["error"]
        monkeypatch.setattr(experiments, "dual_bound", real)
        out = run_study(tiny_instances(), tmp_path, runs=2, horizon=20)
        assert out.errors == 0 and out.computed == 1

    def test_rejects_bad_study_input(self, tmp_path):
        with pytest.raises(ConfigError):
            run_study([], tmp_path)
        with pytest.raises(ConfigError):
            run_study(tiny_instances()[:1] * 2, tmp_path)
        run_study(tiny_instances()[:1], tmp_path / "c", runs=2, horizon=10)
        with pytest.raises(ConfigError):
            run_study(tiny_instances()[:1], tmp_path / "c", runs=2, horizon=10, policies=("whittle",))


@pytest.fixture(scope="module")
def records(tmp_path_factory):
    out = run_study(tiny_instances(), tmp_path_factory.mktemp("s"), runs=3, horizon=40)
    return load_records(out.csv_path)


class TestSummaries:
    def test_describe(self):
        d = describe([3.0, 1.0, 2.0, 4.0])
        assert d["mean"] == 2.5 and d["median"] == 2.5 and d["q25"] == 1.75 and d["min"] == 1.0
        assert describe([5.0]) == {"mean": 5.0, "std": 0.0, "min": 5.0, "q25": 5.0, "median": 5.0, "q75": 5.0, "max": 5.0}
        with pytest.raises(ValueError):
            describe([])

    def test_order_invariant(self, records):
        for kind in ("gaps", "ratios", "worst-myopic"):
            assert summarize(records, kind) == summarize(records[::-1], kind)

    def test_single_record(self, records):
        rows = summarize(records[:1], "gaps")
        assert {r["policy"] for r in rows} == {"whittle", "myopic", "round_robin", "random"}
        assert all(r["std"] == 0.0 and r["min"] == r["max"] for r in rows)
        assert rows[0]["mean"] == pytest.approx(100 * records[0]["gamma_whittle"])

    def test_worst_myopic_sorted(self, records):
        rows = summarize(records, "worst-myopic", top=5)
        ratios = [r["myopic_over_whittle"] for r in rows]
        assert ratios == sorted(ratios, reverse=True)

    def test_errors_excluded(self, records):
        bad = dict(records[0], error="RuntimeError: x")
        assert summarize([bad, records[1]], "gaps") == summarize([records[1]], "gaps")
        with pytest.raises(ValueError):
            summarize([bad], "gaps")
        with pytest.raises(ValueError):
            summarize(records, "bogus")
