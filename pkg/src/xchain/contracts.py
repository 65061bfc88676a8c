"""Swap contracts, the witness coordinator contract and hashlock/timelock contracts.

Contract objects are immutable; every transition returns a new object plus
the balance payouts it causes, and the hosting :class:`SimChain` stores the
result. The chain-level helpers at the bottom pre-check a request against
the canonical state, then submit the transaction for mining.
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, replace
from typing import Any, ClassVar, Mapping

from .chain_sim import (
    ChainTx,
    ContractError,
    DeployMessage,
    ExecContext,
    InsufficientFunds,
    SimChain,
    contract_id_for,
    register_code,
)
from .encoding import encode, verify_signature
from .swap_graph import Multisignature, SwapGraph, verify_multisig


class WrongState(ContractError):
    pass


class InvalidSecret(ContractError):
    pass


class BadEvidence(ContractError):
    pass


class UnknownContract(ContractError):
    pass


class ContractState(enum.Enum):
    P = "P"
    RD = "RD"
    RF = "RF"


class WitnessState(enum.Enum):
    P = "P"
    RD_AUTH = "RD_auth"
    RF_AUTH = "RF_auth"


RD_TAG = b"\x01"
RF_TAG = b"\x02"


def trent_message(ms: Multisignature, decision: ContractState) -> bytes:
    """Bytes Trent signs to release the redeem or refund secret for ``ms``."""
    tag = {ContractState.RD: RD_TAG, ContractState.RF: RF_TAG}[decision]
    return encode([encode(ms), tag])


@dataclass(frozen=True)
class TrustedWitness:
    ms: Multisignature
    witness_pk: str

    def verify(self, witness: Any, decision: ContractState) -> bool:
        if not isinstance(witness, (bytes, bytearray)):
            return False
        return verify_signature(self.witness_pk, trent_message(self.ms, decision), witness)


@dataclass(frozen=True)
class WitnessRef:
    witness_chain_id: str
    sc_w_id: str
    min_depth: int


@dataclass(frozen=True)
class HashLock:
    h: str

    def verify(self, witness: Any) -> bool:
        if not isinstance(witness, (bytes, bytearray)):
            return False
        return hashlib.sha256(bytes(witness)).hexdigest() == self.h


@dataclass(frozen=True)
class AtomicSwapContract:
    """Template: lock ``a`` from ``s``; release it to ``r`` or back to ``s``."""

    code: ClassVar[str] = "atomic-swap"

    s: str
    r: str
    a: int
    state: ContractState
    rd: Any
    rf: Any

    @property
    def held(self) -> int:
        return self.a if self.state is ContractState.P else 0

    @classmethod
    def _fields_from(cls, msg: DeployMessage, args: Mapping[str, Any]) -> dict:
        return dict(s=msg.sender, r=args["r"], a=msg.value, state=ContractState.P,
                    rd=args["rd"], rf=args["rf"])

    @classmethod
    def deploy(cls, msg: DeployMessage, args: Mapping[str, Any], ctx: ExecContext):
        try:
            return cls(**cls._fields_from(msg, args))
        except (KeyError, TypeError) as exc:
            raise ContractError(f"bad constructor arguments: {exc}") from None

    def is_redeemable(self, witness: Any, ctx: ExecContext | None = None) -> bool:
        raise NotImplementedError

    def is_refundable(self, witness: Any, ctx: ExecContext | None = None) -> bool:
        raise NotImplementedError

    def call(self, function: str, args: Mapping[str, Any], ctx: ExecContext):
        if function == "redeem":
            self._require_p()
            if not self.is_redeemable(args.get("witness"), ctx):
                raise InvalidSecret("redemption witness rejected")
            return replace(self, state=ContractState.RD), [(self.r, self.a)]
        if function == "refund":
            self._require_p()
            if not self.is_refundable(args.get("witness"), ctx):
                raise InvalidSecret("refund witness rejected")
            return replace(self, state=ContractState.RF), [(self.s, self.a)]
        raise ContractError(f"unknown function {function!r}")

    def _require_p(self) -> None:
        if self.state is not ContractState.P:
            raise WrongState(f"contract is {self.state.value}")


@register_code
@dataclass(frozen=True)
class CentralizedSC(AtomicSwapContract):
    """Swap contract whose secrets are Trent's signatures over the graph multisignature."""

    code: ClassVar[str] = "ac3tw-swap"

    @classmethod
    def deploy(cls, msg, args, ctx):
        c = super().deploy(msg, args, ctx)
        if not (isinstance(c.rd, TrustedWitness) and c.rf == c.rd):
            raise ContractError("rd and rf must be the same trusted-witness scheme")
        return c

    def is_redeemable(self, witness, ctx=None) -> bool:
        return self.rd.verify(witness, ContractState.RD)

    def is_refundable(self, witness, ctx=None) -> bool:
        return self.rf.verify(witness, ContractState.RF)


@register_code
@dataclass(frozen=True)
class PermissionlessSC(AtomicSwapContract):
    """Swap contract released by evidence of the witness contract's decision."""

    code: ClassVar[str] = "ac3wn-swap"

    witness_anchor: Any = None  # evidence.AnchorHeader on the witness chain

    @classmethod
    def _fields_from(cls, msg, args):
        fields = super()._fields_from(msg, args)
        fields["witness_anchor"] = args["witness_anchor"]
        return fields

    @classmethod
    def deploy(cls, msg, args, ctx):
        c = super().deploy(msg, args, ctx)
        if not (isinstance(c.rd, WitnessRef) and c.rf == c.rd):
            raise ContractError("rd and rf must be the same witness reference")
        anchor = c.witness_anchor
        if getattr(anchor, "chain_id", None) != c.rd.witness_chain_id:
            raise ContractError("witness anchor is not on the witness chain")
        return c

    def _decided(self, witness, state: WitnessState) -> bool:
        from .evidence import Evidence, WitnessStateEffect, validate_evidence

        if not isinstance(witness, Evidence) or witness.chain_id != self.rd.witness_chain_id:
            return False
        expected = WitnessStateEffect(self.rd.sc_w_id, state)
        return validate_evidence(self.witness_anchor, witness, self.rd.min_depth, expected)

    def is_redeemable(self, witness, ctx=None) -> bool:
        return self._decided(witness, WitnessState.RD_AUTH)

    def is_refundable(self, witness, ctx=None) -> bool:
        return self._decided(witness, WitnessState.RF_AUTH)


@register_code
@dataclass(frozen=True)
class TimeLockContract(AtomicSwapContract):
    """Hashlock redeem before ``expiry``; automatic refund once a block reaches it."""

    code: ClassVar[str] = "htlc"

    expiry: int = 0

    @classmethod
    def _fields_from(cls, msg, args):
        fields = super()._fields_from(msg, args)
        fields["expiry"] = int(args["expiry"])
        return fields

    @classmethod
    def deploy(cls, msg, args, ctx):
        c = super().deploy(msg, args, ctx)
        if not isinstance(c.rd, HashLock):
            raise ContractError("redeem scheme must be a hashlock")
        return c

    def is_redeemable(self, witness, ctx=None) -> bool:
        if ctx is not None and ctx.timestamp >= self.expiry:
            return False
        return self.rd.verify(witness)

    def is_refundable(self, witness, ctx=None) -> bool:
        return False

    def on_block(self, ctx: ExecContext):
        after = timelock_tick(self, ctx.timestamp)
        if after is None:
            return None
        return after, [(self.s, self.a)], "timelock expired"


def timelock_tick(contract: TimeLockContract, now: int) -> TimeLockContract | None:
    """The refunded contract if ``now`` has reached the expiry, else ``None``."""
    if contract.state is ContractState.P and now >= contract.expiry:
        return replace(contract, state=ContractState.RF)
    return None


@register_code
@dataclass(frozen=True)
class WitnessContract:
    """Coordinator on the witness chain deciding redeem versus refund once."""

    code: ClassVar[str] = "ac3wn-witness"

    participants: tuple[tuple[str, str], ...]  # (participant id, pk)
    ms: Multisignature
    graph: SwapGraph
    anchors: tuple[Any, ...]  # evidence.AnchorHeader per asset chain
    d: int
    state: WitnessState = WitnessState.P

    held: ClassVar[int] = 0

    @classmethod
    def deploy(cls, msg: DeployMessage, args: Mapping[str, Any], ctx: ExecContext):
        try:
            c = cls(tuple(tuple(p) for p in args["participants"]), args["ms"], args["graph"],
                    tuple(args["anchors"]), int(args["d"]))
        except (KeyError, TypeError) as exc:
            raise ContractError(f"bad constructor arguments: {exc}") from None
        if msg.value != 0:
            raise ContractError("witness contract locks no assets")
        ids = [pid for pid, _ in c.participants]
        if sorted(ids) != list(c.graph.vertices):
            raise BadEvidence("participant list does not match the graph")
        if not verify_multisig(c.ms, c.graph, [pk for _, pk in c.participants]):
            raise BadEvidence("multisignature does not verify")
        if sorted(a.chain_id for a in c.anchors) != c.graph.chains():
            raise BadEvidence("need exactly one anchor per asset chain")
        if c.d < 1:
            raise ContractError("d must be >= 1")
        return c

    def pk_of(self, pid: str) -> str:
        return dict(self.participants)[pid]

    def anchor_for(self, chain_id: str):
        for a in self.anchors:
            if a.chain_id == chain_id:
                return a
        return None

    def call(self, function: str, args: Mapping[str, Any], ctx: ExecContext):
        if self.state is not WitnessState.P:
            raise WrongState(f"witness contract is {self.state.value}")
        if function == "authorize_redeem":
            from .evidence import verify_contracts

            if not verify_contracts(self, args.get("bundle"), ctx.contract_id, ctx.chain_id):
                raise BadEvidence("contract evidence rejected")
            return replace(self, state=WitnessState.RD_AUTH), []
        if function == "authorize_refund":
            return replace(self, state=WitnessState.RF_AUTH), []
        raise ContractError(f"unknown function {function!r}")


def _code_for(rd: Any) -> type:
    if isinstance(rd, TrustedWitness):
        return CentralizedSC
    if isinstance(rd, WitnessRef):
        return PermissionlessSC
    if isinstance(rd, HashLock):
        return TimeLockContract
    raise TypeError(f"unsupported commitment scheme {type(rd).__name__}")


def _next_ctx(chain: SimChain, contract_id: str = "") -> ExecContext:
    tip = chain.tip_block.header
    return ExecContext(chain.chain_id, tip.height + 1, tip.timestamp + chain.params.block_interval,
                       contract_id=contract_id)


def _lookup(chain: SimChain, contract_id: str):
    try:
        return chain.contract_store[contract_id]
    except KeyError:
        raise UnknownContract(contract_id) from None


def swap_deploy_tx(chain: SimChain, msg: DeployMessage, r: str, rd: Any, rf: Any,
                   nonce: int = 0, **extra: Any) -> ChainTx:
    """Build a swap-contract deployment after checking it against the canonical tip."""
    if chain.state.balance(msg.sender) < msg.value:
        raise InsufficientFunds(f"{msg.sender[:12]} holds less than {msg.value}")
    cls = _code_for(rd)
    args = {"r": r, "rd": rd, "rf": rf, **extra}
    cls.deploy(msg, args, _next_ctx(chain))  # surface constructor errors before mining
    return ChainTx.deploy(cls.code, msg, args, nonce)


def deploy_swap_contract(chain: SimChain, msg: DeployMessage, r: str, rd: Any, rf: Any,
                         nonce: int = 0, **extra: Any) -> str:
    """Submit a swap-contract deployment and return the future contract id."""
    tx = swap_deploy_tx(chain, msg, r, rd, rf, nonce, **extra)
    chain.submit_tx(tx)
    return contract_id_for(tx.tx_id)


def settle_tx(chain: SimChain, contract_id: str, secret: Any, function: str,
              caller: str = "", nonce: int = 0) -> ChainTx:
    """Build a redeem or refund call that the canonical tip would accept."""
    c = _lookup(chain, contract_id)
    c._require_p()
    ctx = _next_ctx(chain, contract_id)
    check = c.is_redeemable if function == "redeem" else c.is_refundable
    if not check(secret, ctx):
        raise InvalidSecret(f"{function} witness rejected")
    return ChainTx.call(contract_id, function, {"witness": secret}, caller, nonce)


def redeem(chain: SimChain, contract_id: str, secret: Any, caller: str = "", nonce: int = 0) -> ContractState:
    chain.submit_tx(settle_tx(chain, contract_id, secret, "redeem", caller, nonce))
    return ContractState.RD


def refund(chain: SimChain, contract_id: str, secret: Any, caller: str = "", nonce: int = 0) -> ContractState:
    chain.submit_tx(settle_tx(chain, contract_id, secret, "refund", caller, nonce))
    return ContractState.RF


def is_redeemable(contract: AtomicSwapContract, witness: Any, ctx: ExecContext | None = None) -> bool:
    return contract.is_redeemable(witness, ctx)


def is_refundable(contract: AtomicSwapContract, witness: Any, ctx: ExecContext | None = None) -> bool:
    return contract.is_refundable(witness, ctx)


def witness_deploy_tx(chain: SimChain, sender: str, participants, ms: Multisignature,
                      graph: SwapGraph, anchors, d: int, nonce: int = 0) -> ChainTx:
    args = {"participants": [list(p) for p in participants], "ms": ms, "graph": graph,
            "anchors": list(anchors), "d": d}
    msg = DeployMessage(sender, 0)
    WitnessContract.deploy(msg, args, _next_ctx(chain))
    return ChainTx.deploy(WitnessContract.code, msg, args, nonce)


def deploy_witness_contract(chain: SimChain, sender: str, participants, ms: Multisignature,
                            graph: SwapGraph, anchors, d: int, nonce: int = 0) -> str:
    tx = witness_deploy_tx(chain, sender, participants, ms, graph, anchors, d, nonce)
    chain.submit_tx(tx)
    return contract_id_for(tx.tx_id)


def authorize_redeem_tx(chain: SimChain, sc_w_id: str, bundle, caller: str = "", nonce: int = 0) -> ChainTx:
    from .evidence import verify_contracts

    w = _lookup(chain, sc_w_id)
    if w.state is not WitnessState.P:
        raise WrongState(f"witness contract is {w.state.value}")
    if not verify_contracts(w, bundle, sc_w_id, chain.chain_id):
        raise BadEvidence("contract evidence rejected")
    return ChainTx.call(sc_w_id, "authorize_redeem", {"bundle": bundle}, caller, nonce)


def authorize_refund_tx(chain: SimChain, sc_w_id: str, caller: str = "", nonce: int = 0) -> ChainTx:
    w = _lookup(chain, sc_w_id)
    if w.state is not WitnessState.P:
        raise WrongState(f"witness contract is {w.state.value}")
    return ChainTx.call(sc_w_id, "authorize_refund", {}, caller, nonce)


def witness_authorize_redeem(chain: SimChain, sc_w_id: str, bundle, caller: str = "",
                             nonce: int = 0) -> WitnessState:
    chain.submit_tx(authorize_redeem_tx(chain, sc_w_id, bundle, caller, nonce))
    return WitnessState.RD_AUTH


def witness_authorize_refund(chain: SimChain, sc_w_id: str, caller: str = "", nonce: int = 0) -> WitnessState:
    chain.submit_tx(authorize_refund_tx(chain, sc_w_id, caller, nonce))
    return WitnessState.RF_AUTH
