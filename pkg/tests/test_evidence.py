from __future__ import annotations

import dataclasses
import random

import pytest
from hypothesis import given, strategies as st

from xchain.acceptance import honest_evidence_cases, mutate_evidence
from xchain.chain_sim import ChainParams, ChainTx, SimChain
from xchain.evidence import (
    BelowAnchor,
    ChainTooShort,
    EvidenceBundle,
    NotCanonical,
    NotStableYet,
    anchor_at,
    build_evidence,
    record_anchor,
    validate_evidence,
    verify_contracts,
)
from xchain.harness import load_scenario
from xchain.interleave import model_for, replay_schedule


@pytest.fixture(scope="module")
def cases():
    return honest_evidence_cases()


def grown(n=6):
    c = SimChain(ChainParams("c", pow_difficulty=0), {"a": 100})
    r = random.Random(5)
    for _ in range(n):
        c.mine_block(r)
    return c, r


class TestHonest:
    def test_all_accepted(self, cases):
        assert len(cases) == 3
        for case in cases:
            assert validate_evidence(case.anchor, case.evidence, case.d, case.expected), case.name

    def test_exactly_d_confirmations(self, cases):
        for case in cases:
            ev = case.evidence
            assert len(ev.headers) - 1 - ev.target_index == case.d

    def test_demanding_more_depth_rejects(self, cases):
        for case in cases:
            assert not validate_evidence(case.anchor, case.evidence, case.d + 1, case.expected)

    def test_wrong_expected_effect_rejects(self, cases):
        deploy, _, decision = cases
        assert not validate_evidence(deploy.anchor, deploy.evidence, deploy.d, decision.expected)
        other = dataclasses.replace(deploy.expected, value=deploy.expected.value + 1)
        assert not validate_evidence(deploy.anchor, deploy.evidence, deploy.d, other)


class TestFuzz:
    @given(st.integers(min_value=0, max_value=2**32), st.integers(min_value=0, max_value=2))
    def test_single_mutations_are_rejected(self, cases, seed, which):
        case = cases[which]
        desc, mutant = mutate_evidence(case.evidence, random.Random(seed))
        assert mutant != case.evidence
        assert not validate_evidence(case.anchor, mutant, case.d, case.expected), desc

    def test_garbage_does_not_raise(self, cases):
        case = cases[0]
        broken = dataclasses.replace(case.evidence, headers=(None,), txs=("junk",))
        assert validate_evidence(case.anchor, broken, case.d, case.expected) is False


class TestBuild:
    def test_chain_too_short(self):
        c, _ = grown(2)
        with pytest.raises(ChainTooShort):
            record_anchor(c, 3)

    def test_not_stable_yet(self):
        c, r = grown(2)
        anchor = record_anchor(c, 1)
        tx = ChainTx.transfer("a", "b", 1)
        c.submit_tx(tx)
        c.mine_block(r)
        with pytest.raises(NotStableYet):
            build_evidence(c, anchor, tx.tx_id, 3)
        ev = build_evidence(c, anchor, tx.tx_id, 3, allow_unstable=True)
        assert ev.target_index == len(ev.headers) - 1

    def test_below_anchor(self):
        c, r = grown(1)
        tx = ChainTx.transfer("a", "b", 1)
        c.submit_tx(tx)
        for _ in range(5):
            c.mine_block(r)
        with pytest.raises(BelowAnchor):
            build_evidence(c, record_anchor(c, 1), tx.tx_id, 1)

    def test_not_included(self):
        c, _ = grown(3)
        with pytest.raises(NotCanonical):
            build_evidence(c, record_anchor(c, 1), "ab" * 32, 1)

    def test_anchor_on_orphaned_branch(self):
        c, r = grown(3)
        stale = anchor_at(c, c.tip)
        c.inject_fork(c.canonical_block_at(1).digest, 4)
        tx = ChainTx.transfer("a", "b", 1)
        c.submit_tx(tx)
        for _ in range(3):
            c.mine_block(r)
        with pytest.raises(NotCanonical):
            build_evidence(c, stale, tx.tx_id, 1)

    def test_transfer_carries_no_effect(self):
        c, r = grown(2)
        anchor = record_anchor(c, 0)
        tx = ChainTx.transfer("a", "b", 1)
        c.submit_tx(tx)
        for _ in range(3):
            c.mine_block(r)
        ev = build_evidence(c, anchor, tx.tx_id, 2)
        assert ev.effect is None
        assert not validate_evidence(anchor, ev, 2, None)


@pytest.fixture(scope="module")
def registered():
    sc = load_scenario("interleave_2edge_ac3wn").scenario
    model = model_for(sc)
    edges = list(sc.graph.edges)
    snap = replay_schedule(model, [f"deploy:{e.label()}" for e in edges])
    wc = sc.witness_chain.chain_id
    sc_w_id = snap.data["sc_w"]
    sc_w = snap.chains[wc].state.contracts[sc_w_id]
    pairs = [(e, build_evidence(snap.chains[e.chain_id], sc_w.anchor_for(e.chain_id),
                                snap.data[("deploy", e)].tx_id, sc.d)) for e in edges]
    return sc_w, sc_w_id, wc, pairs


class TestVerifyContracts:
    def test_full_bundle(self, registered):
        sc_w, sc_w_id, wc, pairs = registered
        assert verify_contracts(sc_w, EvidenceBundle.of(pairs), sc_w_id, wc)
        assert verify_contracts(sc_w, EvidenceBundle.of(reversed(pairs)), sc_w_id, wc)

    def test_missing_edge(self, registered):
        sc_w, sc_w_id, wc, pairs = registered
        assert not verify_contracts(sc_w, EvidenceBundle.of(pairs[:1]), sc_w_id, wc)

    def test_evidence_swapped_between_edges(self, registered):
        sc_w, sc_w_id, wc, pairs = registered
        (e1, v1), (e2, v2) = pairs
        assert not verify_contracts(sc_w, EvidenceBundle.of([(e1, v2), (e2, v1)]), sc_w_id, wc)

    def test_other_witness_contract_id(self, registered):
        sc_w, sc_w_id, wc, pairs = registered
        assert not verify_contracts(sc_w, EvidenceBundle.of(pairs), "00" * 32, wc)

    def test_not_a_bundle(self, registered):
        sc_w, sc_w_id, wc, _ = registered
        assert not verify_contracts(sc_w, object(), sc_w_id, wc)
