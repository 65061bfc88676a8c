from __future__ import annotations

import math
from collections import Counter

import pytest
from hypothesis import given, settings, strategies as st

from xchain.harness import load_scenario
from xchain.interleave import Model, Snap, TooManySchedules, explore, model_for, replay_schedule, schedules
from xchain.protocols import Verdict


class FreeModel(Model):
    """Every event enabled until it has happened: n! maximal schedules."""

    protocol = "free"

    def __init__(self, n):
        self.events = [f"e{i}" for i in range(n)]

    def universe(self):
        return self.events

    def initial(self):
        return Snap({})

    def enabled(self, snap):
        return [e for e in self.events if e not in snap.done]

    def apply(self, snap, event):
        pass

    def verdict(self, snap):
        return Verdict("AllRedeemed")


def abstract_ac3wn(n_edges):
    """Oracle: the witness protocol as a pure state machine, counted by brute force.

    Deploys and both authorize calls are always submittable; authorize_redeem
    only takes effect once every edge is deployed, either decision only while
    undecided. Settling an edge needs its contract plus the matching decision.
    """
    edges = range(n_edges)
    verdicts = Counter()

    def walk(deployed, ws, done, settled):
        moves = [("deploy", e) for e in edges if ("deploy", e) not in done]
        moves += [(a, None) for a in ("authorize_redeem", "authorize_refund") if (a, None) not in done]
        kind = {"RD": "redeem", "RF": "refund"}.get(ws)
        if kind:
            moves += [(kind, e) for e in edges if e in deployed and (kind, e) not in done]
        if not moves:
            states = [settled.get(e) for e in edges]
            if "RD" in states and "RF" in states:
                verdicts["AtomicityViolated"] += 1
            elif all(s == "RD" for s in states):
                verdicts["AllRedeemed"] += 1
            else:
                verdicts["AllRefunded"] += 1
            return
        for mv in moves:
            act, e = mv
            d2, ws2, s2 = set(deployed), ws, dict(settled)
            if act == "deploy":
                d2.add(e)
            elif act == "authorize_redeem" and ws == "P" and len(deployed) == n_edges:
                ws2 = "RD"
            elif act == "authorize_refund" and ws == "P":
                ws2 = "RF"
            elif act in ("redeem", "refund"):
                s2[e] = ws
            walk(d2, ws2, done | {mv}, s2)

    walk(set(), "P", frozenset(), {})
    return verdicts


class TestEnumeration:
    @pytest.mark.parametrize("n", range(1, 6))
    def test_free_model_is_factorial(self, n):
        report = explore(FreeModel(n))
        assert report.schedules == math.factorial(n)

    @settings(max_examples=10)
    @given(st.integers(min_value=1, max_value=5))
    def test_schedules_are_distinct_permutations(self, n):
        seen = {snap.done for snap in schedules(FreeModel(n))}
        assert len(seen) == math.factorial(n)
        assert all(sorted(s) == sorted(FreeModel(n).events) for s in seen)

    def test_schedule_cap(self):
        with pytest.raises(TooManySchedules):
            explore(FreeModel(5), max_schedules=100)

    def test_event_cap(self):
        with pytest.raises(TooManySchedules):
            explore(FreeModel(5), max_events=4)

    def test_replay_rejects_disabled_event(self):
        with pytest.raises(ValueError):
            replay_schedule(FreeModel(2), ["e0", "e0"])


class TestAbstractOracle:
    def test_counts(self):
        assert sum(abstract_ac3wn(2).values()) == 104
        assert sum(abstract_ac3wn(3).values()) == 2412

    def test_never_violates(self):
        for n in (1, 2, 3):
            assert abstract_ac3wn(n)["AtomicityViolated"] == 0


@pytest.fixture(scope="module")
def reports():
    out = {}
    for name in ("interleave_2edge_ac3wn", "interleave_2edge_ac3tw", "interleave_2edge_baseline"):
        out[name] = explore(model_for(load_scenario(name).scenario))
    return out


class TestChainModels:
    def test_ac3wn_matches_oracle(self, reports):
        r = reports["interleave_2edge_ac3wn"]
        assert r.ok
        assert r.verdicts == abstract_ac3wn(2)
        assert dict(r.verdicts) == {"AllRedeemed": 12, "AllRefunded": 92}

    def test_ac3tw(self, reports):
        r = reports["interleave_2edge_ac3tw"]
        assert r.ok and r.schedules == 104

    def test_baseline_has_a_violating_order(self, reports):
        r = reports["interleave_2edge_baseline"]
        assert r.schedules == 12
        assert r.violation_count == 1 and not r.invariant_failures

    def test_violation_replays(self, reports):
        r = reports["interleave_2edge_baseline"]
        model = model_for(load_scenario("interleave_2edge_baseline").scenario)
        trace = r.violations[0]
        snap = replay_schedule(model, trace)
        assert model.verdict(snap).kind == "AtomicityViolated"
        assert not model.enabled(snap)

    def test_report_json(self, reports):
        js = reports["interleave_2edge_ac3wn"].to_json()
        assert js["schedules"] == 104 and js["violations"] == 0
        assert js["events"] == 8
