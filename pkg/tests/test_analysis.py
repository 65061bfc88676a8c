from __future__ import annotations

import dataclasses
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from xchain import analysis
from xchain.analysis import (
    EmptyList,
    FeeSchedule,
    InvalidParams,
    SecurityParams,
    UnboundedDiameter,
    fee_overhead,
    latency_ac3wn,
    latency_baseline,
    measured_vs_predicted,
    min_confirmation_depth,
    min_throughput,
    total_fee,
)
from xchain.protocols import simulate
from xchain.swap_graph import UNBOUNDED

from conftest import fig4_scenario


def brute_depth(V_a, C_h, d_h):
    """Oracle: scan upward for the first d whose attack cost beats the asset value."""
    d = 1
    while not Fraction(d) * C_h / d_h > V_a:
        d += 1
    return d


class TestLatency:
    @pytest.mark.parametrize("diam", range(2, 11))
    def test_closed_forms(self, diam):
        assert latency_baseline(diam) == 2 * diam
        assert latency_ac3wn(diam) == 4

    @given(st.integers(min_value=2, max_value=500), st.integers(min_value=1, max_value=50))
    def test_ac3wn_never_slower(self, diam, delta):
        b, a = latency_baseline(diam, delta), latency_ac3wn(diam, delta)
        assert a <= b
        assert (a == b) == (diam == 2)

    def test_unbounded(self):
        with pytest.raises(UnboundedDiameter):
            latency_baseline(UNBOUNDED)

    def test_csv(self):
        lines = analysis.latency_csv([2, 3]).splitlines()
        assert lines == ["diam,baseline_latency,ac3wn_latency", "2,4,4", "3,6,4"]


class TestFees:
    @pytest.mark.parametrize("n,expected", [(1, 1), (2, Fraction(1, 2)), (5, Fraction(1, 5)), (10, Fraction(1, 10))])
    def test_overhead_examples(self, n, expected):
        assert fee_overhead(n) == expected

    @given(st.integers(min_value=1, max_value=10_000),
           st.fractions(min_value=Fraction(1, 100), max_value=100),
           st.fractions(min_value=0, max_value=100))
    def test_overhead_times_n_is_one(self, n, fd, ffc):
        assert fee_overhead(n, FeeSchedule(fd, ffc)) * n == 1

    def test_totals(self):
        fees = FeeSchedule(Fraction(3), Fraction(2))
        assert total_fee("Baseline", 4, fees) == 20
        assert total_fee("AC3WN", 4, fees) == 25

    def test_bad_inputs(self):
        with pytest.raises(InvalidParams):
            total_fee("Baseline", 0, FeeSchedule())
        with pytest.raises(InvalidParams):
            total_fee("AC3TW", 2, FeeSchedule())


class TestThroughput:
    def test_witness_choice(self):
        t = analysis.REFERENCE_TPS
        assert min_throughput([t["btc"], t["eth"]]) == 7
        assert min_throughput([t["eth"], t["eth"]]) == 25

    def test_empty(self):
        with pytest.raises(EmptyList):
            min_throughput([])


class TestDepth:
    def test_worked_example(self):
        assert min_confirmation_depth(SecurityParams(1_000_000, 300_000, 6)) == 21

    @given(st.fractions(min_value=0, max_value=10_000),
           st.fractions(min_value=Fraction(1, 10), max_value=10_000),
           st.fractions(min_value=Fraction(1, 10), max_value=100))
    def test_matches_scan(self, V_a, C_h, d_h):
        assert min_confirmation_depth(SecurityParams(V_a, C_h, d_h)) == brute_depth(V_a, C_h, d_h)

    def test_exact_threshold_is_not_enough(self):
        # threshold exactly 4: d must strictly exceed it
        assert min_confirmation_depth(SecurityParams(2, 3, 6)) == 5

    @pytest.mark.parametrize("bad", [(1, 0, 1), (1, 1, 0), (-1, 1, 1)])
    def test_invalid(self, bad):
        with pytest.raises(InvalidParams):
            min_confirmation_depth(SecurityParams(*bad))


@pytest.fixture(scope="module")
def fig4_runs():
    return {p: simulate(fig4_scenario(p)) for p in ("AC3WN", "Baseline")}


class TestMeasuredVsPredicted:
    def test_fig4_matches(self, fig4_runs):
        for out in fig4_runs.values():
            report = measured_vs_predicted(out)
            assert report.mismatches == [], out.protocol
            assert report.measured_latency == 4

    def test_perturbed_latency_is_reported(self, fig4_runs):
        out = fig4_runs["AC3WN"]
        late = dataclasses.replace(out, t_c=out.t_c + out.delta)
        report = measured_vs_predicted(late)
        assert report.deviation == 1
        assert report.mismatches == ["latency deviates by 1 Δ"]

    def test_perturbed_fee_count_is_reported(self, fig4_runs):
        out = fig4_runs["Baseline"]
        fees = {k: dict(v) for k, v in out.fees.items()}
        next(iter(fees.values()))["deploys"] += 1
        report = measured_vs_predicted(dataclasses.replace(out, fees=fees))
        assert report.mismatches == ["deploys 3 != 2"]

    def test_json(self, fig4_runs):
        js = measured_vs_predicted(fig4_runs["AC3WN"]).to_json()
        assert js["predicted_latency"] == 4 and js["predicted_deploys"] == 3
