import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adherence_rmab.core import ALWAYS_ACTIVE, ALWAYS_PASSIVE, PatientParams
from adherence_rmab.index import (
    build_index_table,
    default_grid,
    index_table,
    mp_index,
    optimal_threshold,
    optimal_threshold_array,
    q_branch,
    reachable_set,
    sensitivity_p,
    sensitivity_q,
    stieltjes_residual,
    verify_pcl,
)
from adherence_rmab.metrics import mp_metric, threshold_metrics

from conftest import params_strategy


class TestIndex:
    @pytest.mark.parametrize("x, expected", [(0.0, 0.0), (0.2, 0.2), (0.5, 0.735125), (1.0, 1 / 0.525)])
    def test_values(self, base, x, expected):
        assert mp_index(base, x) == pytest.approx(expected, abs=1e-12)

    def test_matches_diagonal_metric(self, base):
        xs = np.linspace(0, 1, 301)
        direct = np.array([mp_metric(base, x, x) for x in xs])
        assert np.allclose(mp_index(base, xs), direct, atol=1e-10)

    @settings(max_examples=60, deadline=None)
    @given(params_strategy(st))
    def test_increasing_and_nonnegative(self, pp):
        m = mp_index(pp, np.linspace(0, 1, 500))
        assert m[0] == 0.0
        assert np.all(np.diff(m) > 0)

    def test_cost_offset(self, base):
        costly = base.with_changes(cost=0.25)
        xs = np.linspace(0, 1, 11)
        assert np.allclose(mp_index(costly, xs), mp_index(base, xs) - 0.25)


class TestIndexTable:
    def test_price_breakpoints(self, base):
        table = index_table(base)
        assert table.price_breakpoints[0] == pytest.approx(0.3)
        assert table.price_breakpoints[1] == pytest.approx(0.5925)
        assert table.lambda_max == pytest.approx(1 / 0.525)

    def test_lookup_matches_direct(self, params):
        table = build_index_table(params)
        xs = np.linspace(0, 1, 1001)
        assert np.allclose(table.index(xs), mp_index(params, xs), atol=1e-10)
        prices = np.linspace(0, table.lambda_max, 501)
        assert np.allclose(table.threshold(prices), optimal_threshold_array(params, prices), atol=1e-12)

    def test_rejects_bad_size(self, base):
        with pytest.raises(ValueError):
            build_index_table(base, t_max=0)


class TestOptimalThreshold:
    @pytest.mark.parametrize("price, z", [(0.15, 0.15), (0.5, 0.402564), (1.5, 0.7875)])
    def test_values(self, base, price, z):
        assert optimal_threshold(base, price) == pytest.approx(z, abs=1e-6)

    def test_inverts_index(self, base):
        assert mp_index(base, optimal_threshold(base, 0.5)) == pytest.approx(0.5, abs=1e-12)

    def test_sentinels(self, base):
        assert optimal_threshold(base, -0.1) == ALWAYS_ACTIVE
        assert optimal_threshold(base, 2.0) == ALWAYS_PASSIVE

    def test_cost_shifts_price(self, base):
        costly = base.with_changes(cost=0.2)
        assert optimal_threshold(costly, 0.3) == pytest.approx(optimal_threshold(base, 0.5))
        assert optimal_threshold(costly, -0.1) == pytest.approx(optimal_threshold(base, 0.1))

    @settings(max_examples=100, deadline=None)
    @given(params_strategy(st), st.floats(0, 1))
    def test_round_trip(self, pp, x):
        assert optimal_threshold(pp, mp_index(pp, x)) == pytest.approx(x, abs=1e-9)

    def test_threshold_is_price_optimal(self, base):
        # z*(price) beats every other threshold on F - price * G from a fixed start
        zs = np.linspace(0, 1, 401)
        for price in (0.1, 0.45, 0.8, 1.3):
            best = threshold_metrics(base, 0.35, optimal_threshold(base, price))
            value = best.reward - price * best.work
            others = [threshold_metrics(base, 0.35, float(z)) for z in zs]
            assert all(o.reward - price * o.work <= value + 1e-9 for o in others)


class TestReachableSet:
    def test_contains_landmarks(self, base):
        pts = reachable_set(base, 0.0, tol=1e-6).points
        for v in (0.0, 0.3, 0.45, 0.525, base.z_inf, 1.0):
            assert np.any(np.isclose(pts, v, atol=1e-15))
        assert np.all(np.diff(pts) > 0)

    def test_fixed_point_collapses(self, base):
        # the orbit of z_inf is a single point; the reset orbit only approaches it
        pts = reachable_set(base, base.z_inf).points
        assert np.sum(pts == base.z_inf) == 1

    def test_rejects_bad_tol(self, base):
        with pytest.raises(ValueError):
            reachable_set(base, 0.2, tol=0.0)


class TestPcl:
    def test_base_passes(self, base):
        rep = verify_pcl(base, default_grid(51, n_triples=60))
        assert rep.passed, rep
        assert rep.stieltjes_residual <= 1e-6

    def test_trivial_intervals(self, base):
        assert stieltjes_residual(base, 0.3, 0.5, 0.5, mp_index, threshold_metrics) == 0.0
        # no reachable point between the two thresholds: F is flat and no jumps are summed
        assert stieltjes_residual(base, 0.3, 0.61, 0.9, mp_index, threshold_metrics) == pytest.approx(0.0, abs=1e-12)


class TestSensitivity:
    def test_p_examples(self):
        pp = PatientParams(0.05, 0.2, 1.0, 0.95)
        rep = sensitivity_p(pp, 0.5, [0.05, 0.1, 0.2, 0.3, 0.4])
        assert rep.ok and np.all(rep.diffs < 0)
        flat = sensitivity_p(pp, 0.5, np.linspace(0.5, 0.79, 10))
        assert flat.ok and np.allclose(flat.diffs, 0.0, atol=1e-12)
        origin = sensitivity_p(pp, 0.0, np.linspace(0.01, 0.7, 10))
        assert origin.ok and np.all(origin.values == 0)

    def test_q_examples(self):
        pp = PatientParams(0.1, 0.2, 1.0, 0.95)
        below = sensitivity_q(pp, 0.05, np.linspace(0.01, 0.85, 30))
        assert below.ok and np.all(below.diffs == 0)
        last = sensitivity_q(pp, 0.5, np.linspace(0.1, 0.85, 30))
        assert last.ok and set(last.tags) == {"last"} and np.all(last.diffs < 0)

    def test_q_branch_labels(self):
        pp = PatientParams(0.1, 0.05, 1.0, 0.95)
        assert q_branch(pp, 0.05) == "first"
        assert q_branch(pp, 0.12) == "middle-1"
        assert q_branch(pp, 0.9) == "last"
