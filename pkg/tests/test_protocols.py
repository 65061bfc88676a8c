from __future__ import annotations

import dataclasses

import pytest
from hypothesis import given, settings, strategies as st

from xchain.contracts import ContractState
from xchain.harness import load_scenario
from xchain.protocols import (
    AdversaryPlan,
    BaselineInapplicable,
    ScenarioInvalid,
    TrentStore,
    Verdict,
    execute,
    run_ac3tw,
    run_ac3wn,
    run_baseline,
    simulate,
    verdict,
)
from xchain.swap_graph import Behavior, multisign

from conftest import fig4_scenario

SWAPPED = {"bitcoin": {"Alice": 0, "Bob": 5}, "ethereum": {"Alice": 7, "Bob": 0}}
UNTOUCHED = {"bitcoin": {"Alice": 5, "Bob": 0}, "ethereum": {"Alice": 0, "Bob": 7}}


def asset_balances(out):
    return {c: b for c, b in out.balances.items() if c in SWAPPED}


class TestVerdict:
    P, RD, RF = ContractState.P, ContractState.RD, ContractState.RF

    def test_examples(self):
        assert verdict({"x": self.RD, "y": self.RD}) == Verdict("AllRedeemed")
        assert verdict({"x": self.RF, "y": None}).kind == "AllRefunded"
        assert verdict({"x": self.RD, "y": self.RF}).kind == "AtomicityViolated"
        assert verdict({"x": self.RD, "y": self.P}).kind == "Stuck"
        assert verdict({"x": None, "y": None}).kind == "AllRefunded"

    @given(st.lists(st.sampled_from([None, ContractState.P, ContractState.RD, ContractState.RF]),
                    min_size=1, max_size=6))
    def test_violation_iff_mixed_terminal(self, states):
        v = verdict({f"e{i}": s for i, s in enumerate(states)})
        mixed = ContractState.RD in states and ContractState.RF in states
        assert (v.kind == "AtomicityViolated") == mixed


class TestFig4:
    @pytest.mark.parametrize("protocol,runner,latency", [
        ("AC3WN", run_ac3wn, 4), ("AC3TW", run_ac3tw, 2), ("Baseline", run_baseline, 4),
    ])
    def test_honest_swap(self, protocol, runner, latency):
        out = runner(fig4_scenario(protocol))
        assert out.verdict.kind == "AllRedeemed"
        assert out.latency == latency
        assert asset_balances(out) == SWAPPED

    def test_ac3wn_fee_counts_and_phases(self):
        out = simulate(fig4_scenario("AC3WN"))
        assert out.witness_state == "RD_auth"
        assert sum(f["deploys"] for f in out.fees.values()) == 3
        assert list(out.phases.values()) == [1, 2, 3, 4]

    def test_runner_checks_protocol(self):
        with pytest.raises(ScenarioInvalid):
            run_baseline(fig4_scenario("AC3WN"))

    @pytest.mark.parametrize("protocol", ["AC3WN", "AC3TW", "Baseline"])
    def test_decline_refunds_everyone(self, protocol):
        out = simulate(fig4_scenario(protocol, faults={"Bob": Behavior("decline_publish")}))
        assert out.verdict.kind == "AllRefunded"
        assert asset_balances(out) == UNTOUCHED

    def test_ac3wn_late_redeem_still_completes(self):
        out = simulate(fig4_scenario("AC3WN", faults={"Bob": Behavior("crash_at", "redeem", recover_after=3)}))
        assert out.verdict.kind == "AllRedeemed"
        assert out.latency == 7

    def test_baseline_crash_loses_atomicity(self):
        out = simulate(fig4_scenario("Baseline", faults={"Bob": Behavior("crash_at", "redeem")}))
        assert out.verdict.kind == "AtomicityViolated"
        assert out.balances["bitcoin"]["Alice"] == 5 and out.balances["ethereum"]["Alice"] == 7

    def test_ac3wn_crash_cannot_break_atomicity(self):
        out = simulate(fig4_scenario("AC3WN", faults={"Bob": Behavior("crash_at", "redeem")}))
        # Bob's edge stays redeemable under RD_auth; nothing is refunded
        assert out.verdict == Verdict("Stuck", ("P Alice->Bob@bitcoin",))
        assert out.witness_state == "RD_auth"

    def test_short_horizon_is_stuck(self):
        out = simulate(fig4_scenario("AC3WN", horizon=10))
        assert out.verdict.kind == "Stuck" and out.latency is None

    def test_execute_exposes_world(self):
        world, out = execute(fig4_scenario("AC3WN"))
        assert set(world.chains) == {"bitcoin", "ethereum", "witness"}
        assert out.t_c == world.now


class TestScenarioValidation:
    def test_delta_too_small(self):
        with pytest.raises(ScenarioInvalid):
            fig4_scenario("AC3WN", d=6, delta=6)

    def test_witness_required(self):
        sc = fig4_scenario("AC3TW")
        with pytest.raises(ScenarioInvalid):
            dataclasses.replace(sc, protocol="AC3WN")

    def test_unknown_fault_participant(self):
        with pytest.raises(ScenarioInvalid):
            fig4_scenario("AC3WN", faults={"Mallory": Behavior("decline_publish")})

    def test_adversary_only_on_witness(self):
        with pytest.raises(ScenarioInvalid):
            fig4_scenario("AC3WN", adversary=AdversaryPlan("bitcoin", 1, 1))

    def test_adversary_sample_is_seeded(self):
        plan = AdversaryPlan("witness", (0, 5), (1, 5))
        assert plan.sample(7) == plan.sample(7)
        k, n = plan.sample(7)
        assert 0 <= k <= 5 and 1 <= n <= 5

    def test_baseline_rejects_cyclic(self):
        with pytest.raises(BaselineInapplicable):
            simulate(load_scenario("cyclic_baseline").scenario)


class TestTrentStore:
    @pytest.fixture
    def ms(self, graph, alice, bob):
        return multisign(graph, [alice, bob])

    def test_one_decision_only(self, ms):
        trent = TrentStore()
        trent.register(ms)
        assert trent.request_redeem(ms, lambda: False) is None
        rf = trent.request_refund(ms)
        assert rf is not None
        assert trent.request_redeem(ms, lambda: True) is None
        assert trent.request_refund(ms) == rf
        assert trent.issued == [(ms.graph_digest, ContractState.RF)]

    def test_redeem_excludes_refund(self, ms):
        trent = TrentStore()
        trent.register(ms)
        rd = trent.request_redeem(ms, lambda: True)
        assert trent.request_redeem(ms, lambda: True) == rd
        assert trent.request_refund(ms) is None
        assert trent.decision(ms)[0] is ContractState.RD

    def test_registration(self, ms):
        trent = TrentStore()
        with pytest.raises(ScenarioInvalid):
            trent.request_refund(ms)
        trent.register(ms)
        with pytest.raises(ScenarioInvalid):
            trent.register(ms)


CONSISTENT = {("AllRedeemed", "RD_auth"), ("AllRefunded", "RF_auth")}


class TestForks:
    def test_d1_attack_breaks_atomicity(self):
        out = simulate(load_scenario("fork_attack_d1").scenario)
        assert out.verdict.kind == "AtomicityViolated"
        forks = [e for e in out.trace if e["action"] == "inject_fork"]
        assert forks and forks[0]["won"]

    @settings(max_examples=40)
    @given(st.integers(min_value=0, max_value=10**6))
    def test_short_forks_never_break_ac3wn(self, seed):
        sc = load_scenario("fork_safety_eps010").scenario
        out = simulate(sc, seed)
        assert (out.verdict.kind, out.witness_state) in CONSISTENT

    @pytest.mark.parametrize("branch_len", [1, 3, 8])
    def test_fork_just_below_depth_converges(self, branch_len):
        d = 3
        sc = fig4_scenario("AC3WN", d=d, difficulty=0,
                           adversary=AdversaryPlan("witness", d - 1, branch_len))
        out = simulate(sc)
        assert (out.verdict.kind, out.witness_state) in CONSISTENT

    @settings(max_examples=25)
    @given(st.integers(min_value=0, max_value=10**6))
    def test_baseline_honest_with_natural_forks(self, seed):
        # a reorg can push a deploy past its window, which ends in refunds
        out = simulate(fig4_scenario("Baseline", difficulty=0, eps=0.3, seeds=(seed,)))
        assert out.verdict.kind in ("AllRedeemed", "AllRefunded")

    def test_same_seed_same_trace(self):
        sc = load_scenario("fork_safety_eps030").scenario
        assert simulate(sc, 11).to_json() == simulate(sc, 11).to_json()
