"""Header-chain evidence that a transaction is buried deep enough on a foreign chain.

A validator keeps only a stable *anchor* header of the foreign chain. An
:class:`Evidence` carries every header after the anchor up to the foreign
tip plus the full transaction list of the target block, so the validator
can recheck links, proof of work, payload inclusion and burial depth
without any other access to that chain.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Iterable

from .chain_sim import (
    CALL,
    DEPLOY,
    BlockHeader,
    ChainTx,
    SimChain,
    payload_digest,
    pow_valid,
)
from .contracts import PermissionlessSC, WitnessContract, WitnessRef, WitnessState
from .encoding import digest
from .swap_graph import SwapEdge


class EvidenceError(Exception):
    pass


class ChainTooShort(EvidenceError):
    pass


class NotStableYet(EvidenceError):
    pass


class NotCanonical(EvidenceError):
    pass


class BelowAnchor(EvidenceError):
    pass


@dataclass(frozen=True)
class AnchorHeader:
    chain_id: str
    header: BlockHeader
    pow_difficulty: int

    @property
    def height(self) -> int:
        return self.header.height


@dataclass(frozen=True)
class DeployEffect:
    code: str
    sender: str
    recipient: str
    value: int
    rd: Any
    rf: Any


@dataclass(frozen=True)
class WitnessStateEffect:
    contract_id: str
    state: WitnessState


@dataclass(frozen=True)
class Evidence:
    chain_id: str
    headers: tuple[BlockHeader, ...]
    target_index: int
    tx_id: str
    txs: tuple[ChainTx, ...]
    effect: Any


@dataclass(frozen=True)
class EvidenceBundle:
    entries: tuple[tuple[SwapEdge, Evidence], ...]

    @classmethod
    def of(cls, pairs: Iterable[tuple[SwapEdge, Evidence]]) -> "EvidenceBundle":
        return cls(tuple(sorted(pairs, key=lambda p: p[0].sort_key)))


_FUNCTION_STATES = {
    "authorize_redeem": WitnessState.RD_AUTH,
    "authorize_refund": WitnessState.RF_AUTH,
}


def derive_effect(tx: ChainTx):
    """What an included (hence successful) transaction did, as a comparable record."""
    p = tx.payload
    if tx.kind == DEPLOY:
        return DeployEffect(p.code, p.msg.sender, p.args.get("r"), p.msg.value,
                            p.args.get("rd"), p.args.get("rf"))
    if tx.kind == CALL and p.function in _FUNCTION_STATES:
        return WitnessStateEffect(p.contract_id, _FUNCTION_STATES[p.function])
    return None


def record_anchor(chain: SimChain, d: int) -> AnchorHeader:
    """Header of the canonical block exactly ``d`` below the tip."""
    if chain.height < d:
        raise ChainTooShort(f"{chain.chain_id} height {chain.height} < {d}")
    blk = chain.canonical_block_at(chain.height - d)
    return AnchorHeader(chain.chain_id, blk.header, chain.params.pow_difficulty)


def anchor_at(chain: SimChain, block_id: str) -> AnchorHeader:
    """Anchor on a specific block (e.g. the one that deployed a witness contract)."""
    return AnchorHeader(chain.chain_id, chain.block(block_id).header, chain.params.pow_difficulty)


def build_evidence(chain: SimChain, anchor: AnchorHeader, tx_id: str, d: int,
                   allow_unstable: bool = False) -> Evidence:
    """Minimal evidence for a canonical tx: headers anchor+1 .. tip."""
    blk = chain.canonical_tx_block(tx_id)
    if blk is None:
        raise NotCanonical(tx_id)
    if not chain.is_canonical(anchor.header.digest):
        raise NotCanonical(f"anchor {anchor.header.digest[:12]} is off the canonical chain")
    if blk.height <= anchor.height:
        raise BelowAnchor(f"tx at height {blk.height} is not above anchor {anchor.height}")
    if chain.height - blk.height < d and not allow_unstable:
        raise NotStableYet(f"{chain.height - blk.height} < {d} confirmations")
    headers = tuple(chain.canonical_block_at(h).header for h in range(anchor.height + 1, chain.height + 1))
    tx = next(t for t in blk.txs if t.tx_id == tx_id)
    return Evidence(chain.chain_id, headers, blk.height - anchor.height - 1, tx_id, blk.txs,
                    derive_effect(tx))


def validate_evidence(anchor: AnchorHeader, e: Evidence, d: int, expected_effect: Any) -> bool:
    try:
        return _validate(anchor, e, d, expected_effect)
    except Exception:  # adversarial input: any malformation is a rejection
        return False


def _validate(anchor: AnchorHeader, e: Evidence, d: int, expected_effect: Any) -> bool:
    if e.chain_id != anchor.chain_id or not e.headers:
        return False
    prev = digest(anchor.header)
    for i, h in enumerate(e.headers):
        if h.prev_digest != prev or h.height != anchor.header.height + 1 + i:
            return False
        if not pow_valid(h, anchor.pow_difficulty):
            return False
        prev = digest(h)
    if not 0 <= e.target_index < len(e.headers):
        return False
    if payload_digest(e.txs) != e.headers[e.target_index].payload_digest:
        return False
    matches = [tx for tx in e.txs if digest(tx) == e.tx_id]
    if len(matches) != 1:
        return False
    if len(e.headers) - 1 - e.target_index < d:
        return False
    effect = derive_effect(matches[0])
    return effect is not None and effect == e.effect == expected_effect


def expected_deploy_effect(sc_w: WitnessContract, edge: SwapEdge, sc_w_id: str,
                           witness_chain_id: str) -> DeployEffect:
    ref = WitnessRef(witness_chain_id, sc_w_id, sc_w.d)
    return DeployEffect(PermissionlessSC.code, sc_w.pk_of(edge.source), sc_w.pk_of(edge.recipient),
                        edge.amount, ref, ref)


def verify_contracts(sc_w: WitnessContract, bundle: EvidenceBundle, sc_w_id: str,
                     witness_chain_id: str) -> bool:
    """Every edge of the registered graph is proven by a distinct, matching deployment."""
    try:
        entries = list(bundle.entries)
    except AttributeError:
        return False
    by_edge: dict[SwapEdge, Evidence] = {}
    for edge, ev in entries:
        if edge in by_edge:
            return False
        by_edge[edge] = ev
    if set(by_edge) != set(sc_w.graph.edges):
        return False
    seen_tx: set[str] = set()
    for edge in sc_w.graph.edges:
        ev = by_edge[edge]
        if ev.chain_id != edge.chain_id or ev.tx_id in seen_tx:
            return False
        seen_tx.add(ev.tx_id)
        anchor = sc_w.anchor_for(edge.chain_id)
        if anchor is None:
            return False
        expected = expected_deploy_effect(sc_w, edge, sc_w_id, witness_chain_id)
        if not validate_evidence(anchor, ev, sc_w.d, expected):
            return False
    return True
