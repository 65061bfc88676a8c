"""Deterministic simulation of permissionless blockchains.

A :class:`SimChain` is a block tree with a canonical tip chosen by the
longest-chain rule (ties go to the lexicographically smallest header
digest). Ledger state (balances and contract objects) is a pure function
of the canonical chain and is cached per block; :func:`replay` rebuilds it
from genesis without the cache.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Any, Iterable, Mapping, Sequence

from .encoding import (
    ZERO_DIGEST,
    digest,
    encode,
    encode_int,
    leading_zero_bits_ok,
    sha256_hex,
    to_jsonable,
)

log = logging.getLogger(__name__)

TRANSFER = "asset-transfer"
DEPLOY = "contract-deploy"
CALL = "contract-call"
TX_KINDS = (TRANSFER, DEPLOY, CALL)

MINT = ""  # sender of genesis allocations


class ChainError(Exception):
    """Base class for chain-level failures."""


class DuplicateTx(ChainError):
    pass


class UnknownBlock(ChainError, KeyError):
    pass


class TxInvalid(ChainError):
    """A transaction that miners refuse to include."""


class ContractError(TxInvalid):
    """Raised by contract code; the enclosing transaction is dropped."""


class InsufficientFunds(ContractError):
    pass


class _NotCanonical:
    _inst = None

    def __new__(cls):
        if cls._inst is None:
            cls._inst = super().__new__(cls)
        return cls._inst

    def __repr__(self) -> str:
        return "NOT_CANONICAL"


NOT_CANONICAL = _NotCanonical()


@dataclass(frozen=True)
class ChainParams:
    chain_id: str
    block_interval: int = 1
    fork_probability: float = 0.0
    pow_difficulty: int = 8
    default_confirm_depth: int = 6
    tps: Fraction = Fraction(0)
    unit: str = "coin"

    def __post_init__(self):
        if self.block_interval < 1:
            raise ValueError("block_interval must be >= 1")
        if not 0 <= self.fork_probability < 1:
            raise ValueError("fork_probability must lie in [0, 1)")
        if self.pow_difficulty < 0:
            raise ValueError("pow_difficulty must be non-negative")
        if self.default_confirm_depth < 1:
            raise ValueError("default_confirm_depth must be >= 1")
        if Fraction(self.tps) < 0:
            raise ValueError("tps must be non-negative")


@dataclass
class SimClock:
    """Global tick counter; ``delta`` is the publication bound in ticks."""

    delta: int
    now: int = 0

    def __post_init__(self):
        if self.delta < 1:
            raise ValueError("delta must be >= 1")

    def advance(self, to: int) -> None:
        if to < self.now:
            raise ValueError(f"clock cannot move backwards ({self.now} -> {to})")
        self.now = to

    def window(self, start: int) -> int:
        """Number of whole Δ windows elapsed since ``start``."""
        return (self.now - start) // self.delta


@dataclass(frozen=True)
class BlockHeader:
    height: int
    prev_digest: str
    payload_digest: str
    timestamp: int
    pow_nonce: int
    miner_id: str

    @cached_property
    def digest(self) -> str:
        return digest(self)


@dataclass(frozen=True)
class Transfer:
    sender: str
    recipient: str
    amount: int
    nonce: int = 0


@dataclass(frozen=True)
class DeployMessage:
    sender: str
    value: int


@dataclass(frozen=True)
class Deploy:
    code: str
    msg: DeployMessage
    args: Mapping[str, Any]
    nonce: int = 0


@dataclass(frozen=True)
class Call:
    contract_id: str
    function: str
    args: Mapping[str, Any]
    caller: str = ""
    nonce: int = 0


@dataclass(frozen=True)
class ChainTx:
    kind: str
    payload: Transfer | Deploy | Call

    def __post_init__(self):
        expected = {TRANSFER: Transfer, DEPLOY: Deploy, CALL: Call}.get(self.kind)
        if expected is None or not isinstance(self.payload, expected):
            raise ValueError(f"malformed {self.kind!r} transaction")

    @cached_property
    def tx_id(self) -> str:
        return digest(self)

    @classmethod
    def transfer(cls, sender: str, recipient: str, amount: int, nonce: int = 0) -> "ChainTx":
        return cls(TRANSFER, Transfer(sender, recipient, amount, nonce))

    @classmethod
    def deploy(cls, code: str, msg: DeployMessage, args: Mapping[str, Any], nonce: int = 0) -> "ChainTx":
        return cls(DEPLOY, Deploy(code, msg, dict(args), nonce))

    @classmethod
    def call(cls, contract_id: str, function: str, args: Mapping[str, Any] | None = None,
             caller: str = "", nonce: int = 0) -> "ChainTx":
        return cls(CALL, Call(contract_id, function, dict(args or {}), caller, nonce))


def contract_id_for(tx_id: str) -> str:
    return sha256_hex(bytes.fromhex(tx_id))


@dataclass(frozen=True)
class Block:
    header: BlockHeader
    txs: tuple[ChainTx, ...]

    @property
    def digest(self) -> str:
        return self.header.digest

    @property
    def height(self) -> int:
        return self.header.height


def payload_digest(txs: Sequence[ChainTx]) -> str:
    return digest(list(txs))


@dataclass(frozen=True)
class ExecContext:
    chain_id: str
    height: int
    timestamp: int
    tx_id: str = ""
    contract_id: str = ""


@dataclass(frozen=True)
class ChainState:
    """Balances and contract objects; never mutated once built."""

    balances: Mapping[str, int] = field(default_factory=dict)
    contracts: Mapping[str, Any] = field(default_factory=dict)

    def balance(self, pk: str) -> int:
        return self.balances.get(pk, 0)

    def locked(self) -> int:
        return sum(c.held for c in self.contracts.values())

    def total_supply(self) -> int:
        return sum(self.balances.values()) + self.locked()

    def _credit(self, balances: dict, payouts: Iterable[tuple[str, int]]) -> None:
        for pk, amount in payouts:
            balances[pk] = balances.get(pk, 0) + amount


# code id -> contract class; populated by xchain.contracts
CONTRACT_CODES: dict[str, type] = {}


def register_code(cls: type) -> type:
    CONTRACT_CODES[cls.code] = cls
    return cls


def apply_tx(state: ChainState, tx: ChainTx, ctx: ExecContext) -> tuple[ChainState, list[dict]]:
    """Apply one transaction; raise :class:`TxInvalid` if miners would drop it."""
    p = tx.payload
    if tx.kind == TRANSFER:
        if p.sender == MINT:
            raise TxInvalid("minting outside genesis")
        if p.amount <= 0:
            raise TxInvalid("non-positive transfer")
        if state.balance(p.sender) < p.amount:
            raise TxInvalid("insufficient funds")
        balances = dict(state.balances)
        balances[p.sender] -= p.amount
        balances[p.recipient] = balances.get(p.recipient, 0) + p.amount
        return ChainState(balances, state.contracts), [
            {"kind": "transfer", "tx": tx.tx_id, "from": p.sender, "to": p.recipient, "amount": p.amount}
        ]

    if tx.kind == DEPLOY:
        cls = CONTRACT_CODES.get(p.code)
        if cls is None:
            raise TxInvalid(f"unknown contract code {p.code!r}")
        if p.msg.value < 0:
            raise TxInvalid("negative deploy value")
        if state.balance(p.msg.sender) < p.msg.value:
            raise InsufficientFunds("sender balance below msg.value")
        cid = contract_id_for(tx.tx_id)
        if cid in state.contracts:
            raise TxInvalid("contract already exists")
        dctx = ExecContext(ctx.chain_id, ctx.height, ctx.timestamp, tx.tx_id, cid)
        try:
            contract = cls.deploy(p.msg, p.args, dctx)
        except (AttributeError, KeyError, TypeError, ValueError) as exc:
            raise ContractError(f"constructor failed: {exc}") from None
        balances = dict(state.balances)
        balances[p.msg.sender] = balances.get(p.msg.sender, 0) - p.msg.value
        contracts = dict(state.contracts)
        contracts[cid] = contract
        return ChainState(balances, contracts), [
            {"kind": "deploy", "tx": tx.tx_id, "contract": cid, "code": p.code, "value": p.msg.value}
        ]

    contract = state.contracts.get(p.contract_id)
    if contract is None:
        raise TxInvalid("unknown contract")
    cctx = ExecContext(ctx.chain_id, ctx.height, ctx.timestamp, tx.tx_id, p.contract_id)
    try:
        new_contract, payouts = contract.call(p.function, p.args, cctx)
    except (AttributeError, KeyError, TypeError, ValueError) as exc:
        raise ContractError(f"call failed: {exc}") from None
    balances = dict(state.balances)
    state._credit(balances, payouts)
    contracts = dict(state.contracts)
    contracts[p.contract_id] = new_contract
    return ChainState(balances, contracts), [
        {"kind": "call", "tx": tx.tx_id, "contract": p.contract_id, "function": p.function,
         "state": getattr(new_contract.state, "value", str(new_contract.state))}
    ]


def begin_block(state: ChainState, ctx: ExecContext) -> tuple[ChainState, list[dict]]:
    """Run block-level contract triggers (timelock expiry) before any tx."""
    effects: list[dict] = []
    changed: dict[str, Any] = {}
    balances: dict[str, int] | None = None
    for cid in sorted(state.contracts):
        hook = getattr(state.contracts[cid], "on_block", None)
        if hook is None:
            continue
        outcome = hook(ctx)
        if outcome is None:
            continue
        new_contract, payouts, note = outcome
        if balances is None:
            balances = dict(state.balances)
        state._credit(balances, payouts)
        changed[cid] = new_contract
        effects.append({"kind": "trigger", "contract": cid, "note": note,
                        "state": new_contract.state.value, "timestamp": ctx.timestamp})
    if not changed:
        return state, effects
    contracts = dict(state.contracts)
    contracts.update(changed)
    return ChainState(balances, contracts), effects


def mine_header(height: int, prev: str, payload: str, timestamp: int,
                miner_id: str, difficulty: int) -> BlockHeader:
    """Search pow_nonce upward from 0 until the digest meets ``difficulty``."""
    name = encode(BlockHeader.__name__)
    pre = encode(height) + encode(prev) + encode(payload) + encode(timestamp)
    post = encode(miner_id)
    nonce = 0
    while True:
        body = name + pre + encode_int(nonce) + post
        raw = b"C" + len(body).to_bytes(4, "big") + body
        h = sha256_hex(raw)
        if leading_zero_bits_ok(h, difficulty):
            header = BlockHeader(height, prev, payload, timestamp, nonce, miner_id)
            header.__dict__["digest"] = h
            return header
        nonce += 1


def pow_valid(header: BlockHeader, difficulty: int) -> bool:
    return leading_zero_bits_ok(digest(header), difficulty)


class SimChain:
    """One simulated permissionless blockchain."""

    def __init__(self, params: ChainParams, allocations: Mapping[str, int] | None = None):
        self.params = params
        mints = tuple(
            ChainTx(TRANSFER, Transfer(MINT, pk, amount))
            for pk, amount in sorted((allocations or {}).items()) if amount > 0
        )
        header = mine_header(0, ZERO_DIGEST, payload_digest(mints), 0,
                             f"genesis:{params.chain_id}", params.pow_difficulty)
        genesis = Block(header, mints)
        self.genesis_state = ChainState({tx.payload.recipient: tx.payload.amount for tx in mints}, {})
        self.blocks: dict[str, Block] = {genesis.digest: genesis}
        self.tips: set[str] = {genesis.digest}
        self.mempool: list[ChainTx] = []
        self.dropped: list[tuple[str, str]] = []
        self.sibling_forks = 0
        self._states: dict[str, ChainState] = {genesis.digest: self.genesis_state}
        self._effects: dict[str, tuple[dict, ...]] = {genesis.digest: ()}
        self.genesis_digest = genesis.digest
        self.tip = genesis.digest
        self._canon: list[str] = [genesis.digest]
        self._canon_tx: dict[str, str] = {tx.tx_id: genesis.digest for tx in mints}

    # -- inspection -------------------------------------------------------

    @property
    def chain_id(self) -> str:
        return self.params.chain_id

    @property
    def height(self) -> int:
        return len(self._canon) - 1

    @property
    def tip_block(self) -> Block:
        return self.blocks[self.tip]

    @property
    def state(self) -> ChainState:
        return self._states[self.tip]

    @property
    def contract_store(self) -> Mapping[str, Any]:
        return self.state.contracts

    def block(self, block_id: str) -> Block:
        try:
            return self.blocks[block_id]
        except KeyError:
            raise UnknownBlock(block_id) from None

    def state_at(self, block_id: str) -> ChainState:
        self.block(block_id)
        return self._states[block_id]

    def effects_at(self, block_id: str) -> tuple[dict, ...]:
        self.block(block_id)
        return self._effects[block_id]

    def canonical_chain(self) -> list[Block]:
        return [self.blocks[d] for d in self._canon]

    def canonical_block_at(self, height: int) -> Block:
        return self.blocks[self._canon[height]]

    def is_canonical(self, block_id: str) -> bool:
        blk = self.block(block_id)
        return blk.height < len(self._canon) and self._canon[blk.height] == block_id

    def canonical_tx_block(self, tx_id: str) -> Block | None:
        d = self._canon_tx.get(tx_id)
        return self.blocks[d] if d is not None else None

    def blocks_containing(self, tx_id: str) -> list[Block]:
        return [b for b in self.blocks.values() if any(t.tx_id == tx_id for t in b.txs)]

    def in_mempool(self, tx_id: str) -> bool:
        return any(t.tx_id == tx_id for t in self.mempool)

    def confirmations(self, block_id: str):
        """Depth below the canonical tip, or ``NOT_CANONICAL``."""
        if block_id not in self.blocks:
            raise UnknownBlock(block_id)
        if not self.is_canonical(block_id):
            return NOT_CANONICAL
        return self.height - self.blocks[block_id].height

    def tx_confirmations(self, tx_id: str) -> int | None:
        blk = self.canonical_tx_block(tx_id)
        return None if blk is None else self.height - blk.height

    # -- mutation ---------------------------------------------------------

    def submit_tx(self, tx: ChainTx) -> int:
        if tx.tx_id in self._canon_tx or self.in_mempool(tx.tx_id):
            raise DuplicateTx(tx.tx_id)
        self.mempool.append(tx)
        return len(self.mempool)

    def mine_block(self, rng: random.Random, timestamp: int | None = None,
                   miner_id: str = "miner") -> str:
        parent = self.tip
        if timestamp is None:
            timestamp = self.blocks[parent].header.timestamp + self.params.block_interval
        candidates = [tx for tx in self.mempool if tx.tx_id not in self._canon_tx]
        blk, state, effects, included, drops = self._build(parent, candidates, timestamp, miner_id)
        if drops:
            gone = {tx_id for tx_id, _ in drops}
            self.mempool = [tx for tx in self.mempool if tx.tx_id not in gone]
            self.dropped.extend(drops)
            for tx_id, reason in drops:
                log.debug("%s drops %s: %s", self.chain_id, tx_id[:12], reason)
        self._add(blk, state, effects)
        if rng.random() < self.params.fork_probability:
            subset = [tx for tx in included if rng.random() < 0.5]
            sib, sstate, seffects, _, _ = self._build(parent, subset, timestamp, miner_id + "-sibling")
            self._add(sib, sstate, seffects)
            self.sibling_forks += 1
        self.resolve_tip()
        return blk.digest

    def resolve_tip(self) -> str:
        best = min(self.tips, key=lambda d: (-self.blocks[d].height, d))
        if best != self.tip:
            self._set_canonical(best)
        return best

    def inject_fork(self, at_block: str, branch_len: int,
                    txs_per_block: Sequence[Sequence[ChainTx]] = (),
                    timestamp: int | None = None, miner_id: str = "adversary") -> list[str]:
        """Grow an alternate branch of ``branch_len`` blocks on ``at_block``."""
        parent = self.block(at_block).digest
        created: list[str] = []
        for i in range(branch_len):
            txs = list(txs_per_block[i]) if i < len(txs_per_block) else []
            ts = timestamp if timestamp is not None else self.blocks[parent].header.timestamp
            on_path = self._path_tx_ids(parent)
            txs = [tx for tx in txs if tx.tx_id not in on_path]
            blk, state, effects, _, drops = self._build(parent, txs, ts, miner_id)
            self.dropped.extend(drops)
            self._add(blk, state, effects)
            created.append(blk.digest)
            parent = blk.digest
        if created:
            self.resolve_tip()
        return created

    # -- internals --------------------------------------------------------

    def _build(self, parent: str, candidates: Sequence[ChainTx], timestamp: int, miner_id: str):
        pblk = self.blocks[parent]
        height = pblk.height + 1
        ctx = ExecContext(self.chain_id, height, timestamp)
        state, effects = begin_block(self._states[parent], ctx)
        included: list[ChainTx] = []
        drops: list[tuple[str, str]] = []
        for tx in candidates:
            try:
                state, eff = apply_tx(state, tx, ctx)
            except TxInvalid as exc:
                drops.append((tx.tx_id, f"{type(exc).__name__}: {exc}"))
                continue
            included.append(tx)
            effects.extend(eff)
        txs = tuple(included)
        header = mine_header(height, parent, payload_digest(txs), timestamp,
                             miner_id, self.params.pow_difficulty)
        return Block(header, txs), state, tuple(effects), included, drops

    def _add(self, blk: Block, state: ChainState, effects: tuple[dict, ...]) -> None:
        if blk.digest in self.blocks:
            return
        self.blocks[blk.digest] = blk
        self._states[blk.digest] = state
        self._effects[blk.digest] = effects
        self.tips.discard(blk.header.prev_digest)
        self.tips.add(blk.digest)

    def _path(self, tip: str) -> list[str]:
        path = []
        d = tip
        while True:
            path.append(d)
            if d == self.genesis_digest:
                break
            d = self.blocks[d].header.prev_digest
        path.reverse()
        return path

    def _path_tx_ids(self, tip: str) -> set[str]:
        if tip == self.tip:
            return set(self._canon_tx)
        return {tx.tx_id for d in self._path(tip) for tx in self.blocks[d].txs}

    def _set_canonical(self, new_tip: str) -> None:
        old_canon = self._canon
        new_canon = self._path(new_tip)
        new_tx = {tx.tx_id: d for d in new_canon for tx in self.blocks[d].txs}
        new_set = set(new_canon)
        orphaned = [tx for d in old_canon if d not in new_set for tx in self.blocks[d].txs]
        reorg = bool(orphaned) or old_canon[-1] not in new_set
        self.tip = new_tip
        self._canon = new_canon
        self._canon_tx = new_tx
        pending = {tx.tx_id for tx in self.mempool}
        self.mempool = [tx for tx in self.mempool if tx.tx_id not in new_tx]
        for tx in orphaned:
            if tx.tx_id not in new_tx and tx.tx_id not in pending:
                self.mempool.append(tx)
                pending.add(tx.tx_id)
        if reorg:
            log.info("%s reorg to height %d (%s)", self.chain_id, self.height, new_tip[:12])

    def clone(self) -> "SimChain":
        """Cheap copy sharing the immutable blocks and states."""
        other = object.__new__(SimChain)
        other.__dict__.update(self.__dict__)
        other.blocks = dict(self.blocks)
        other.tips = set(self.tips)
        other.mempool = list(self.mempool)
        other.dropped = list(self.dropped)
        other._states = dict(self._states)
        other._effects = dict(self._effects)
        other._canon = list(self._canon)
        other._canon_tx = dict(self._canon_tx)
        return other

    def export_json(self) -> dict:
        canon = set(self._canon)
        blocks = []
        for blk in sorted(self.blocks.values(), key=lambda b: (b.height, b.digest)):
            h = blk.header
            blocks.append({
                "digest": blk.digest,
                "height": h.height,
                "prev": h.prev_digest,
                "payload": h.payload_digest,
                "timestamp": h.timestamp,
                "nonce": h.pow_nonce,
                "miner": h.miner_id,
                "canonical": blk.digest in canon,
                "txs": [{"tx_id": tx.tx_id, "kind": tx.kind, "payload": to_jsonable(tx.payload)}
                        for tx in blk.txs],
            })
        state = self.state
        return {
            "chain_id": self.chain_id,
            "tip": self.tip,
            "height": self.height,
            "blocks": blocks,
            "state": {
                "balances": dict(sorted(state.balances.items())),
                "contracts": {cid: to_jsonable(c) for cid, c in sorted(state.contracts.items())},
            },
        }


def replay(chain: SimChain, tip: str | None = None) -> ChainState:
    """Recompute the ledger state of a branch from genesis, ignoring caches."""
    path = chain._path(tip or chain.tip)
    state = chain.genesis_state
    for d in path[1:]:
        blk = chain.blocks[d]
        ctx = ExecContext(chain.chain_id, blk.height, blk.header.timestamp)
        state, _ = begin_block(state, ctx)
        for tx in blk.txs:
            state, _ = apply_tx(state, tx, ctx)
    return state

