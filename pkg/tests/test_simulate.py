import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adherence_rmab.core import PatientParams
from adherence_rmab.dual import dual_bound
from adherence_rmab.metrics import threshold_metrics
from adherence_rmab.simulate import SimConfig, relative_gap, run_rng, select_actions, simulate

from conftest import PARAM_SETS, make


def cohort(n=10):
    return [PatientParams(0.3, 0.2, 1.0, 0.95)] * n


class TestBoundaryCapacities:
    @pytest.mark.parametrize("policy", ["whittle", "myopic", "round_robin", "random"])
    def test_full_capacity(self, policy):
        res = simulate(SimConfig(horizon=100, runs=5, capacity=10, policy=policy), cohort())
        assert res.vbar_mean == pytest.approx(1 - 0.95**100, abs=1e-12)
        assert res.vbar_stderr == pytest.approx(0.0, abs=1e-12)
        assert res.vbar_adjusted == pytest.approx(1.0)

    @pytest.mark.parametrize("policy", ["whittle", "myopic", "random"])
    def test_zero_capacity(self, policy):
        res = simulate(SimConfig(horizon=400, runs=400, capacity=0, policy=policy), cohort())
        assert res.actions_per_run == 0
        assert res.vbar_mean == pytest.approx(0.05 * 8.190476190, abs=4 * res.vbar_stderr)


class TestSelectActions:
    def test_capacity_respected(self):
        rng = np.random.default_rng(3)
        for policy in ("whittle", "myopic", "round_robin", "random"):
            for _ in range(20):
                acts = select_actions(policy, cohort(), rng.random(10), 3, period=int(rng.integers(50)), rng=rng)
                assert acts.sum() == 3

    def test_myopic_picks_largest(self):
        acts = select_actions("myopic", cohort(5), [0.1, 0.9, 0.4, 0.8, 0.2], 2)
        assert acts.tolist() == [False, True, False, True, False]

    def test_ties_go_to_lower_id(self):
        acts = select_actions("whittle", cohort(5), [0.5] * 5, 2)
        assert acts.tolist() == [True, True, False, False, False]

    def test_round_robin_blocks(self):
        seen = [np.flatnonzero(select_actions("round_robin", cohort(5), np.zeros(5), 2, period=t)).tolist()
                for t in range(4)]
        assert seen == [[0, 1], [2, 3], [0, 4], [1, 2]]

    def test_whittle_skips_negative_index(self):
        costly = [PatientParams(0.3, 0.2, 1.0, 0.95, cost=0.5)] * 3
        acts = select_actions("whittle", costly, [0.1, 0.9, 0.2], 3)
        assert acts.tolist() == [False, True, False]

    def test_whittle_prefers_higher_index_across_types(self):
        slow = PatientParams(0.05, 0.3, 1.0, 0.95)
        fast = PatientParams(0.3, 0.2, 1.0, 0.95)
        # equal beliefs, different dynamics: the priority order follows the index
        from adherence_rmab.index import mp_index

        acts = select_actions("whittle", [slow, fast], [0.5, 0.5], 1)
        assert acts[int(np.argmax([mp_index(slow, 0.5), mp_index(fast, 0.5)]))]

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(0, 1), min_size=4, max_size=4), st.integers(0, 4))
    def test_random_picks_distinct(self, beliefs, m):
        acts = select_actions("random", cohort(4), beliefs, m, rng=np.random.default_rng(0))
        assert acts.sum() == m


class TestSimulate:
    def test_deterministic_and_thread_invariant(self):
        pats = [make(*PARAM_SETS[0])] * 5 + [make(0.05, 0.3, 1, 0.95)] * 5
        for policy in ("whittle", "random", "myopic"):
            a = simulate(SimConfig(horizon=60, runs=12, capacity=2, seed=9, policy=policy), pats)
            b = simulate(SimConfig(horizon=60, runs=12, capacity=2, seed=9, policy=policy, threads=3), pats)
            assert np.array_equal(a.per_run, b.per_run)

    def test_common_random_numbers(self):
        # the initial-belief stream does not depend on the policy
        a = run_rng(4, 7, 0).random(3)
        b = run_rng(4, 7, 0).random(3)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, run_rng(4, 7, 1).random(3))

    def test_threshold_policy_matches_closed_form(self):
        pp = make(*PARAM_SETS[0])
        for z, x0 in ((0.5, 0.3), (0.2, 0.0), (0.7, 0.8)):
            res = simulate(SimConfig(horizon=800, runs=1, capacity=1, policy="threshold", initial=[x0], thresholds=[z]), [pp])
            f = threshold_metrics(pp, x0, z).reward
            assert res.vbar_mean == pytest.approx((1 - pp.beta) * f, abs=1e-12)

    def test_policies_respect_dual_bound(self):
        pats = cohort(10)
        dbar = dual_bound(pats, 3).normalized(10, 0.95)
        for policy in ("whittle", "myopic", "round_robin", "random"):
            res = simulate(SimConfig(horizon=300, runs=100, capacity=3, policy=policy), pats)
            assert res.vbar_mean <= dbar + 4 * res.vbar_stderr

    @pytest.mark.parametrize(
        "kwargs",
        [dict(horizon=0), dict(runs=0), dict(policy="nope")],
    )
    def test_config_validation(self, kwargs):
        with pytest.raises(ValueError):
            SimConfig(**kwargs)

    def test_runtime_validation(self):
        with pytest.raises(ValueError):
            simulate(SimConfig(capacity=11), cohort())
        with pytest.raises(ValueError):
            simulate(SimConfig(policy="threshold", runs=1, horizon=5), cohort())
        with pytest.raises(ValueError):
            simulate(SimConfig(initial=[0.1, 0.2], runs=1, horizon=5), cohort())


def test_relative_gap():
    assert relative_gap(0.45, 0.5) == pytest.approx(0.1)
    assert relative_gap(0.5005, 0.5) < 0
    with pytest.raises(ValueError):
        relative_gap(0.1, 0.0)
