"""End-to-end runs of the three swap protocols over simulated chains.

A run is a single-threaded tick loop. Every tick first mines each chain
whose block interval divides the tick, then lets the optional fork
adversary act, and at Δ-window boundaries lets the protocol driver act on
behalf of all participants. Drivers are level-triggered: at each window
they read canonical (and stable) chain state, decide what every
participant should do next, and (re)submit only what is missing.

Time zero of the transaction, t_s, is the first window boundary (tick Δ);
the ticks before it are warm-up mining so every chain has a stable block
to use as an evidence anchor.
"""

from __future__ import annotations

import hashlib
import logging
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable, Mapping

from .analysis import FeeSchedule, SecurityParams
from .chain_sim import (
    CALL,
    DEPLOY,
    Block,
    ChainParams,
    ChainState,
    ChainTx,
    ChainError,
    DeployMessage,
    SimChain,
    SimClock,
    contract_id_for,
)
from .contracts import (
    CentralizedSC,
    ContractState,
    HashLock,
    TrustedWitness,
    WitnessRef,
    WitnessState,
    authorize_redeem_tx,
    authorize_refund_tx,
    settle_tx,
    swap_deploy_tx,
    trent_message,
    witness_deploy_tx,
)
from .encoding import KeyPair, format_rational, to_jsonable
from .evidence import EvidenceBundle, EvidenceError, anchor_at, build_evidence, record_anchor
from .swap_graph import (
    UNBOUNDED,
    Behavior,
    Multisignature,
    Participant,
    SwapEdge,
    SwapGraph,
    classify,
    diameter,
    longest_path_to,
    multisign,
)

log = logging.getLogger(__name__)

AC3TW = "AC3TW"
AC3WN = "AC3WN"
BASELINE = "Baseline"
PROTOCOLS = (AC3TW, AC3WN, BASELINE)

TERMINAL = (ContractState.RD, ContractState.RF)


class ProtocolError(Exception):
    pass


class ScenarioInvalid(ProtocolError):
    pass


class BaselineInapplicable(ProtocolError):
    def __init__(self, kind: str):
        super().__init__(f"baseline protocol cannot run on a {kind} graph")
        self.kind = kind


@dataclass(frozen=True)
class AdversaryPlan:
    """Fork the witness chain once its decision block has enough confirmations.

    ``after_confirmations`` and ``branch_len`` are integers or inclusive
    ``(lo, hi)`` ranges sampled per seed.
    """

    chain: str
    after_confirmations: Any
    branch_len: Any
    trigger: str = "decision"
    tx: str = "authorize_refund"

    def __post_init__(self):
        if self.trigger != "decision":
            raise ScenarioInvalid(f"unsupported adversary trigger {self.trigger!r}")
        if self.tx != "authorize_refund":
            raise ScenarioInvalid(f"unsupported adversary tx {self.tx!r}")

    @staticmethod
    def _pick(spec, rng: random.Random) -> int:
        if isinstance(spec, int):
            return spec
        lo, hi = spec
        return rng.randint(lo, hi)

    def sample(self, seed: int) -> tuple[int, int]:
        rng = random.Random(f"adversary:{seed}")
        return self._pick(self.after_confirmations, rng), self._pick(self.branch_len, rng)


@dataclass
class Scenario:
    graph: SwapGraph
    protocol: str
    chains: tuple[ChainParams, ...]
    d: int
    delta: int
    witness_chain: ChainParams | None = None
    fees: FeeSchedule = field(default_factory=FeeSchedule)
    security: SecurityParams | None = None
    faults: Mapping[str, Behavior] = field(default_factory=dict)
    adversary: AdversaryPlan | None = None
    seeds: tuple[int, ...] = (0,)
    horizon_ticks: int | None = None
    patience: int = 2
    name: str = ""

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise ScenarioInvalid(f"unknown protocol {self.protocol!r}")
        if self.d < 1:
            raise ScenarioInvalid("d must be >= 1")
        ids = [c.chain_id for c in self.chains]
        if len(set(ids)) != len(ids):
            raise ScenarioInvalid("duplicate chain ids")
        units = {c.chain_id: c.unit for c in self.chains}
        for e in self.graph.edges:
            if e.chain_id not in units:
                raise ScenarioInvalid(f"edge {e.label()} names unknown chain {e.chain_id!r}")
            if e.unit != units[e.chain_id]:
                raise ScenarioInvalid(f"edge {e.label()} unit {e.unit!r} is not the chain's {units[e.chain_id]!r}")
        if self.protocol == AC3WN and self.witness_chain is None:
            raise ScenarioInvalid("AC3WN needs a witness chain")
        for c in self.all_chains():
            if self.delta < c.block_interval * (self.d + 1):
                raise ScenarioInvalid(
                    f"delta {self.delta} < block_interval*(d+1) = {c.block_interval * (self.d + 1)} on {c.chain_id}")
        unknown = set(self.faults) - set(self.graph.vertices)
        if unknown:
            raise ScenarioInvalid(f"faults name unknown participants {sorted(unknown)}")
        if self.adversary is not None and (
                self.witness_chain is None or self.adversary.chain != self.witness_chain.chain_id):
            raise ScenarioInvalid("the adversary may only fork the witness chain")

    def all_chains(self) -> list[ChainParams]:
        out = list(self.chains)
        if self.witness_chain is not None and self.witness_chain.chain_id not in {c.chain_id for c in out}:
            out.append(self.witness_chain)
        return out

    @property
    def horizon(self) -> int:
        return self.horizon_ticks if self.horizon_ticks is not None else 50 * self.delta


@dataclass(frozen=True)
class Verdict:
    kind: str  # AllRedeemed | AllRefunded | AtomicityViolated | Stuck
    details: tuple[str, ...] = ()

    def to_json(self) -> dict:
        return {"kind": self.kind, "details": list(self.details)}


def verdict(states: Mapping[str, ContractState | None]) -> Verdict:
    """Classify final per-edge contract states (``None`` = never deployed)."""
    rd = sorted(k for k, s in states.items() if s is ContractState.RD)
    rf = sorted(k for k, s in states.items() if s is ContractState.RF)
    if rd and rf:
        return Verdict("AtomicityViolated", tuple(f"RD {k}" for k in rd) + tuple(f"RF {k}" for k in rf))
    if states and len(rd) == len(states):
        return Verdict("AllRedeemed")
    if not rd and all(s in (None, ContractState.RF) for s in states.values()):
        return Verdict("AllRefunded", tuple(f"undeployed {k}" for k, s in sorted(states.items()) if s is None))
    pending = sorted(k for k, s in states.items() if s is ContractState.P)
    undeployed = sorted(k for k, s in states.items() if s is None)
    return Verdict("Stuck", tuple(f"P {k}" for k in pending) + tuple(f"undeployed {k}" for k in undeployed))


@dataclass
class RunOutcome:
    protocol: str
    seed: int
    verdict: Verdict
    delta: int
    t_s: int
    t_c: int | None
    phases: dict[str, Fraction]
    contracts: list[dict]
    balances: dict[str, dict[str, int]]
    fees: dict[str, dict[str, int]]
    n_edges: int
    diameter: Any
    witness_state: str | None = None
    extra: dict = field(default_factory=dict)
    trace: list[dict] = field(default_factory=list)

    @property
    def latency(self) -> Fraction | None:
        if self.t_c is None:
            return None
        return Fraction(self.t_c - self.t_s, self.delta)

    def to_json(self) -> dict:
        return {
            "protocol": self.protocol,
            "seed": self.seed,
            "verdict": self.verdict.to_json(),
            "latency": None if self.latency is None else format_rational(self.latency),
            "delta": self.delta,
            "t_s": self.t_s,
            "t_c": self.t_c,
            "phases": {k: format_rational(v) for k, v in self.phases.items()},
            "contracts": self.contracts,
            "balances": self.balances,
            "fees": self.fees,
            "n_edges": self.n_edges,
            "diameter": None if self.diameter is UNBOUNDED else self.diameter,
            "witness_state": self.witness_state,
            "extra": to_jsonable(self.extra),
            "trace": self.trace,
        }


class TrentStore:
    """Trusted witness: one irrevocable decision per registered graph digest."""

    def __init__(self, keys: KeyPair | None = None):
        self.keys = keys or KeyPair("trent")
        self.kv: dict[str, tuple[ContractState, bytes] | None] = {}
        self.issued: list[tuple[str, ContractState]] = []

    @property
    def pk(self) -> str:
        return self.keys.pk

    def register(self, ms: Multisignature) -> None:
        if ms.graph_digest in self.kv:
            raise ScenarioInvalid("graph already registered at the trusted witness")
        self.kv[ms.graph_digest] = None

    def _require(self, ms: Multisignature):
        if ms.graph_digest not in self.kv:
            raise ScenarioInvalid("graph not registered at the trusted witness")
        return self.kv[ms.graph_digest]

    def _issue(self, ms: Multisignature, decision: ContractState) -> bytes:
        sig = self.keys.sign(trent_message(ms, decision))
        self.kv[ms.graph_digest] = (decision, sig)
        self.issued.append((ms.graph_digest, decision))
        return sig

    def request_redeem(self, ms: Multisignature, all_deployed: Callable[[], bool]) -> bytes | None:
        current = self._require(ms)
        if current is None:
            return self._issue(ms, ContractState.RD) if all_deployed() else None
        return current[1] if current[0] is ContractState.RD else None

    def request_refund(self, ms: Multisignature) -> bytes | None:
        current = self._require(ms)
        if current is None:
            return self._issue(ms, ContractState.RF)
        return current[1] if current[0] is ContractState.RF else None

    def decision(self, ms: Multisignature) -> tuple[ContractState, bytes] | None:
        return self.kv.get(ms.graph_digest)


def secret_for(seed: int) -> bytes:
    return hashlib.sha256(f"xchain-secret:{seed}".encode()).digest()


class World:
    """Chains, clock, participants and the shared trace of one run."""

    def __init__(self, scenario: Scenario, seed: int):
        self.scenario = scenario
        self.seed = seed
        self.rng = random.Random(seed)
        self.clock = SimClock(scenario.delta)
        self.d = scenario.d
        self.t_s = scenario.delta
        self.participants = {
            v: Participant.named(v, scenario.faults.get(v)) for v in scenario.graph.vertices
        }
        funding: dict[str, dict[str, int]] = {}
        for e in scenario.graph.edges:
            alloc = funding.setdefault(e.chain_id, {})
            pk = self.pk(e.source)
            alloc[pk] = alloc.get(pk, 0) + e.amount
        self.chains = {
            p.chain_id: SimChain(p, funding.get(p.chain_id, {})) for p in scenario.all_chains()
        }
        self.trace: list[dict] = []

    @property
    def now(self) -> int:
        return self.clock.now

    def pk(self, pid: str) -> str:
        return self.participants[pid].pk

    def record(self, actor: str, action: str, **detail: Any) -> None:
        entry = {"tick": self.now, "actor": actor, "action": action}
        entry.update(detail)
        self.trace.append(entry)
        log.debug("t=%d %s %s %s", self.now, actor, action, detail)

    def mine_due(self) -> None:
        for cid in sorted(self.chains):
            chain = self.chains[cid]
            if self.now % chain.params.block_interval == 0:
                chain.mine_block(self.rng, timestamp=self.now)

    def window_of(self, tick: int) -> int | None:
        if tick < self.t_s or (tick - self.t_s) % self.scenario.delta:
            return None
        return (tick - self.t_s) // self.scenario.delta

    def stable_state(self, chain_id: str) -> ChainState:
        chain = self.chains[chain_id]
        h = max(0, chain.height - self.d)
        return chain.state_at(chain.canonical_block_at(h).digest)


class Driver:
    """Shared bookkeeping for the protocol drivers."""

    protocol = ""

    def __init__(self, world: World):
        self.world = world
        self.graph = world.scenario.graph
        self.attempts: dict[tuple, list[tuple[str, ChainTx]]] = {}
        self.due_since: dict[tuple[str, str], int] = {}
        self.crash_logged: set[tuple[str, str]] = set()
        self.phases: dict[str, int] = {}

    # -- helpers ----------------------------------------------------------

    def may(self, pid: str, step: str, window: int) -> bool:
        behavior = self.world.participants[pid].behavior
        since = self.due_since.setdefault((pid, step), window)
        if behavior.crashed(step, window - since):
            if (pid, step) not in self.crash_logged:
                self.crash_logged.add((pid, step))
                self.world.record(pid, "skip", step=step, behavior=behavior.kind)
            return False
        return True

    def pending_or_done(self, key: tuple) -> bool:
        for chain_id, tx in self.attempts.get(key, ()):
            chain = self.world.chains[chain_id]
            if chain.canonical_tx_block(tx.tx_id) is not None or chain.in_mempool(tx.tx_id):
                return True
        return False

    def ensure(self, key: tuple, chain_id: str, actor: str, action: str,
               build: Callable[[int], ChainTx], **detail: Any) -> ChainTx | None:
        """Submit ``build(nonce)`` unless an earlier attempt is pending or included."""
        if self.pending_or_done(key):
            return None
        tries = self.attempts.setdefault(key, [])
        try:
            tx = build(len(tries))
            self.world.chains[chain_id].submit_tx(tx)
        except (ChainError, EvidenceError) as exc:
            self.world.record(actor, action + "_rejected", chain=chain_id, reason=f"{type(exc).__name__}: {exc}")
            return None
        tries.append((chain_id, tx))
        self.world.record(actor, action, chain=chain_id, tx=tx.tx_id, **detail)
        return tx

    def deploy_txs(self, edge: SwapEdge) -> list[ChainTx]:
        return [tx for _, tx in self.attempts.get(("deploy", edge), ())]

    def contract_in(self, edge: SwapEdge, state: ChainState):
        """(contract id, contract) for this edge in ``state``, if deployed there."""
        for tx in self.deploy_txs(edge):
            cid = contract_id_for(tx.tx_id)
            c = state.contracts.get(cid)
            if c is not None:
                return cid, c
        return None

    def tip_contract(self, edge: SwapEdge):
        return self.contract_in(edge, self.world.chains[edge.chain_id].state)

    def stable_contract(self, edge: SwapEdge):
        return self.contract_in(edge, self.world.stable_state(edge.chain_id))

    def canonical_deploy_tx(self, edge: SwapEdge) -> ChainTx | None:
        chain = self.world.chains[edge.chain_id]
        for tx in self.deploy_txs(edge):
            if chain.canonical_tx_block(tx.tx_id) is not None:
                return tx
        return None

    def settled(self, edge: SwapEdge, state: ContractState | None = None) -> bool:
        found = self.stable_contract(edge)
        if found is None:
            return False
        s = found[1].state
        return s in TERMINAL if state is None else s is state

    def mark(self, phase: str, window: int) -> None:
        self.phases.setdefault(phase, window)

    def first_up(self, step: str, window: int) -> str | None:
        for v in self.graph.vertices:
            if self.may(v, step, window):
                return v
        return None

    # -- protocol hooks ---------------------------------------------------

    def act(self, window: int) -> None:
        raise NotImplementedError

    def complete(self, window: int) -> bool:
        raise NotImplementedError

    def witness_state(self) -> str | None:
        return None

    def extra(self) -> dict:
        return {}

    # -- outcome ----------------------------------------------------------

    def outcome(self, t_c: int | None) -> RunOutcome:
        w = self.world
        states: dict[str, ContractState | None] = {}
        contracts = []
        for e in self.graph.edges:
            found = self.tip_contract(e)
            state = found[1].state if found else None
            states[e.label()] = state
            contracts.append({
                "edge": e.label(),
                "chain": e.chain_id,
                "contract_id": found[0] if found else None,
                "state": state.value if state else None,
            })
        v = verdict(states)
        if t_c is None and v.kind in ("AllRedeemed", "AllRefunded"):
            v = Verdict("Stuck", ("horizon reached before settlement was stable",))
        balances = {
            cid: {pid: chain.state.balance(w.pk(pid)) for pid in self.graph.vertices}
            for cid, chain in sorted(w.chains.items())
        }
        fees = {}
        for cid, chain in sorted(w.chains.items()):
            deploys = calls = 0
            for blk in chain.canonical_chain()[1:]:
                for tx in blk.txs:
                    deploys += tx.kind == DEPLOY
                    calls += tx.kind == CALL
            fees[cid] = {"deploys": deploys, "calls": calls}
        phases = {k: Fraction(win) for k, win in sorted(self.phases.items(), key=lambda kv: kv[1])}
        trace = list(w.trace) + _trigger_events(w)
        trace.sort(key=lambda ev: ev["tick"])
        return RunOutcome(
            protocol=self.protocol, seed=w.seed, verdict=v, delta=w.scenario.delta, t_s=w.t_s,
            t_c=t_c, phases=phases, contracts=contracts, balances=balances, fees=fees,
            n_edges=len(self.graph.edges), diameter=diameter(self.graph),
            witness_state=self.witness_state(), extra=self.extra(), trace=trace,
        )


def _trigger_events(world: World) -> list[dict]:
    out = []
    for cid, chain in sorted(world.chains.items()):
        for blk in chain.canonical_chain():
            for eff in chain.effects_at(blk.digest):
                if eff["kind"] == "trigger":
                    out.append({"tick": blk.header.timestamp, "actor": cid, "action": "expiry_refund",
                                "contract": eff["contract"], "note": eff["note"], "height": blk.height})
    return out


class AC3WNDriver(Driver):
    protocol = AC3WN

    def __init__(self, world: World):
        super().__init__(world)
        self.wc = world.scenario.witness_chain.chain_id
        self.registrar = self.graph.vertices[0]
        self.ms = multisign(self.graph, [world.participants[v] for v in self.graph.vertices])
        self.anchors = None
        self.sc_w_id: str | None = None
        self.deploy_window: int | None = None

    @property
    def witness(self) -> SimChain:
        return self.world.chains[self.wc]

    def decision_block(self) -> Block | None:
        """Canonical witness-chain block whose tx moved SC_w out of P."""
        if self.sc_w_id is None:
            return None
        chain = self.witness
        if chain.state.contracts.get(self.sc_w_id) is None:
            return None
        if chain.state.contracts[self.sc_w_id].state is WitnessState.P:
            return None
        for blk in chain.canonical_chain():
            for tx in blk.txs:
                if tx.kind == CALL and tx.payload.contract_id == self.sc_w_id:
                    return blk
        return None

    def decision_tx(self) -> ChainTx | None:
        blk = self.decision_block()
        if blk is None:
            return None
        return next(tx for tx in blk.txs if tx.kind == CALL and tx.payload.contract_id == self.sc_w_id)

    def _stable_sc_w(self):
        if self.sc_w_id is None:
            return None
        return self.world.stable_state(self.wc).contracts.get(self.sc_w_id)

    def act(self, window: int) -> None:
        w, d = self.world, self.world.d
        if self.anchors is None:
            self.anchors = [record_anchor(w.chains[c], d) for c in self.graph.chains()]
        participants = [(v, w.pk(v)) for v in self.graph.vertices]
        tx = self.ensure(("sc_w",), self.wc, self.registrar, "deploy_witness",
                         lambda n: witness_deploy_tx(self.witness, w.pk(self.registrar), participants,
                                                     self.ms, self.graph, self.anchors, d, n))
        if tx is not None:
            self.sc_w_id = contract_id_for(tx.tx_id)
        stable_w = self._stable_sc_w()
        if stable_w is None:
            return
        self.mark("witness_deployed", window)
        if self.deploy_window is None:
            self.deploy_window = window
        tip_w = self.witness.state.contracts[self.sc_w_id]

        if tip_w.state is WitnessState.P:
            self._deploys(window)
            self._authorize(window)
        if stable_w.state is not WitnessState.P:
            self.mark("decision", window)
            self._settle(window, stable_w.state)

    def _deploys(self, window: int) -> None:
        w, d = self.world, self.world.d
        ref = WitnessRef(self.wc, self.sc_w_id, d)
        sc_w_tx = self.attempts[("sc_w",)][-1][1]
        # every later state change of SC_w lies above the block that deployed it
        anchor = anchor_at(self.witness, self.witness.canonical_tx_block(sc_w_tx.tx_id).digest)
        for e in self.graph.edges:
            if self.tip_contract(e) is not None or self.pending_or_done(("deploy", e)):
                continue
            if not self.may(e.source, "deploy", window):
                continue
            self.ensure(("deploy", e), e.chain_id, e.source, "deploy",
                        lambda n, e=e: swap_deploy_tx(
                            w.chains[e.chain_id], DeployMessage(w.pk(e.source), e.amount),
                            w.pk(e.recipient), ref, ref, n, witness_anchor=anchor),
                        edge=e.label())

    def _authorize(self, window: int) -> None:
        w, d = self.world, self.world.d
        if self.pending_or_done(("authorize",)):
            return
        if all(self.stable_contract(e) is not None for e in self.graph.edges):
            self.mark("contracts_deployed", window)
            who = self.first_up("authorize", window)
            if who is None:
                return
            sc_w = self.witness.state.contracts[self.sc_w_id]

            def build(n):
                pairs = []
                for e in self.graph.edges:
                    tx = self.canonical_deploy_tx(e)
                    pairs.append((e, build_evidence(w.chains[e.chain_id], sc_w.anchor_for(e.chain_id), tx.tx_id, d)))
                return authorize_redeem_tx(self.witness, self.sc_w_id, EvidenceBundle.of(pairs), who, n)

            self.ensure(("authorize",), self.wc, who, "authorize_redeem", build)
        elif window >= self.deploy_window + 1 + w.scenario.patience:
            who = self.first_up("authorize", window)
            if who is None:
                return
            self.ensure(("authorize",), self.wc, who, "authorize_refund",
                        lambda n: authorize_refund_tx(self.witness, self.sc_w_id, who, n))

    def _settle(self, window: int, decided: WitnessState) -> None:
        w, d = self.world, self.world.d
        decision = self.decision_tx()
        if decision is None:
            return
        redeem = decided is WitnessState.RD_AUTH
        for e in self.graph.edges:
            found = self.tip_contract(e)
            if found is None or found[1].state is not ContractState.P:
                continue
            actor = e.recipient if redeem else e.source
            step = "redeem" if redeem else "refund"
            if not self.may(actor, step, window):
                continue
            cid, contract = found

            def build(n, e=e, cid=cid, contract=contract):
                ev = build_evidence(self.witness, contract.witness_anchor, decision.tx_id, d)
                return settle_tx(w.chains[e.chain_id], cid, ev, step, w.pk(actor), n)

            self.ensure(("settle", e), e.chain_id, actor, step, build, edge=e.label())

    def complete(self, window: int) -> bool:
        stable_w = self._stable_sc_w()
        if stable_w is None or stable_w.state is WitnessState.P:
            return False
        if stable_w.state is WitnessState.RD_AUTH:
            done = all(self.settled(e, ContractState.RD) for e in self.graph.edges)
        else:
            done = all(self.tip_contract(e) is None or self.settled(e, ContractState.RF)
                       for e in self.graph.edges)
        if done:
            self.mark("settled", window)
        return done

    def witness_state(self) -> str | None:
        if self.sc_w_id is None:
            return None
        c = self.witness.state.contracts.get(self.sc_w_id)
        return c.state.value if c else None

    def extra(self) -> dict:
        return {"sc_w_id": self.sc_w_id, "witness_chain": self.wc}


class AC3TWDriver(Driver):
    protocol = AC3TW

    def __init__(self, world: World, trent: TrentStore | None = None):
        super().__init__(world)
        self.trent = trent or TrentStore()
        self.ms = multisign(self.graph, [world.participants[v] for v in self.graph.vertices])
        self.scheme = TrustedWitness(self.ms, self.trent.pk)
        self.registered = False

    def _trent_sees_all(self) -> bool:
        """Trent's own check: every edge has a distinct stable contract bound to this ms."""
        w = self.world
        used: set[str] = set()
        for e in self.graph.edges:
            state = w.stable_state(e.chain_id)
            match = None
            for cid in sorted(state.contracts):
                c = state.contracts[cid]
                if (cid not in used and isinstance(c, CentralizedSC) and c.state is ContractState.P
                        and c.s == w.pk(e.source) and c.r == w.pk(e.recipient)
                        and c.a == e.amount and c.rd == self.scheme):
                    match = cid
                    break
            if match is None:
                return False
            used.add(match)
        return True

    def act(self, window: int) -> None:
        w = self.world
        if not self.registered:
            self.trent.register(self.ms)
            self.registered = True
            w.record(self.graph.vertices[0], "register", graph=self.ms.graph_digest)
        decision = self.trent.decision(self.ms)
        if decision is None:
            for e in self.graph.edges:
                if self.tip_contract(e) is not None or self.pending_or_done(("deploy", e)):
                    continue
                if not self.may(e.source, "deploy", window):
                    continue
                self.ensure(("deploy", e), e.chain_id, e.source, "deploy",
                            lambda n, e=e: swap_deploy_tx(
                                w.chains[e.chain_id], DeployMessage(w.pk(e.source), e.amount),
                                w.pk(e.recipient), self.scheme, self.scheme, n),
                            edge=e.label())
            if all(self.stable_contract(e) is not None for e in self.graph.edges):
                self.mark("contracts_deployed", window)
                who = self.first_up("authorize", window)
                if who is not None and self.trent.request_redeem(self.ms, self._trent_sees_all):
                    w.record(who, "request_redeem", issued="RD")
            elif window >= 1 + w.scenario.patience:
                who = self.first_up("authorize", window)
                if who is not None and self.trent.request_refund(self.ms):
                    w.record(who, "request_refund", issued="RF")
            decision = self.trent.decision(self.ms)
        if decision is None:
            return
        self.mark("decision", window)
        kind, sig = decision
        redeem = kind is ContractState.RD
        for e in self.graph.edges:
            found = self.tip_contract(e)
            if found is None or found[1].state is not ContractState.P:
                continue
            actor = e.recipient if redeem else e.source
            step = "redeem" if redeem else "refund"
            if not self.may(actor, step, window):
                continue
            cid = found[0]
            self.ensure(("settle", e), e.chain_id, actor, step,
                        lambda n, e=e, cid=cid: settle_tx(w.chains[e.chain_id], cid, sig, step, w.pk(actor), n),
                        edge=e.label())

    def complete(self, window: int) -> bool:
        decision = self.trent.decision(self.ms)
        if decision is None:
            return False
        if decision[0] is ContractState.RD:
            done = all(self.settled(e, ContractState.RD) for e in self.graph.edges)
        else:
            done = all(self.tip_contract(e) is None or self.settled(e, ContractState.RF)
                       for e in self.graph.edges)
        if done:
            self.mark("settled", window)
        return done

    def extra(self) -> dict:
        decision = self.trent.decision(self.ms)
        return {"trent_decision": decision[0].value if decision else None,
                "signatures_issued": len(self.trent.issued)}


class BaselineDriver(Driver):
    """Single-leader hashlock/timelock swap."""

    protocol = BASELINE

    def __init__(self, world: World):
        super().__init__(world)
        cls = classify(self.graph)
        if cls.kind != "leader_acyclic":
            raise BaselineInapplicable(cls.kind)
        self.diam = diameter(self.graph)
        if self.diam is UNBOUNDED:
            raise ScenarioInvalid("baseline needs a strongly connected graph (finite diameter)")
        self.leader = min(cls.leaders)
        self.secret = secret_for(world.seed)
        self.lock = HashLock(hashlib.sha256(self.secret).hexdigest())
        delta = world.scenario.delta
        self.expiry = {
            e: world.t_s + (self.diam + longest_path_to(self.graph, e.recipient, self.leader) + 1) * delta
            for e in self.graph.edges
        }

    def revealed_secret(self, u: str) -> bytes | None:
        """Preimage visible in a canonical redeem of one of ``u``'s outgoing contracts."""
        for e in self.graph.outgoing(u):
            found = self.tip_contract(e)
            if found is None or found[1].state is not ContractState.RD:
                continue
            for blk in self.world.chains[e.chain_id].canonical_chain():
                for tx in blk.txs:
                    if tx.kind == CALL and tx.payload.contract_id == found[0] and tx.payload.function == "redeem":
                        return tx.payload.args["witness"]
        return None

    def act(self, window: int) -> None:
        w = self.world
        for u in self.graph.vertices:
            ready = u == self.leader or all(self.stable_contract(e) is not None for e in self.graph.incoming(u))
            if not ready:
                continue
            for e in self.graph.outgoing(u):
                if self.tip_contract(e) is not None or self.pending_or_done(("deploy", e)):
                    continue
                if w.now >= self.expiry[e] or not self.may(u, "deploy", window):
                    continue
                self.ensure(("deploy", e), e.chain_id, u, "deploy",
                            lambda n, e=e: swap_deploy_tx(
                                w.chains[e.chain_id], DeployMessage(w.pk(e.source), e.amount),
                                w.pk(e.recipient), self.lock, self.lock, n, expiry=self.expiry[e]),
                            edge=e.label(), expiry=self.expiry[e])
        for u in self.graph.vertices:
            incoming = self.graph.incoming(u)
            if u == self.leader:
                if not all(self.stable_contract(e) is not None for e in incoming):
                    continue
                secret = self.secret
            else:
                secret = self.revealed_secret(u)
                if secret is None:
                    continue
            for e in incoming:
                found = self.tip_contract(e)
                if found is None or found[1].state is not ContractState.P:
                    continue
                if not self.may(u, "redeem", window):
                    continue
                cid = found[0]
                self.ensure(("settle", e), e.chain_id, u, "redeem",
                            lambda n, e=e, cid=cid, secret=secret: settle_tx(
                                w.chains[e.chain_id], cid, secret, "redeem", w.pk(u), n),
                            edge=e.label())

    def complete(self, window: int) -> bool:
        if all(self.settled(e, ContractState.RD) for e in self.graph.edges):
            self.mark("settled", window)
            return True
        if self.world.now < max(self.expiry.values()):
            return False
        done = all(self.tip_contract(e) is None or self.settled(e) for e in self.graph.edges)
        if done:
            self.mark("settled", window)
        return done

    def extra(self) -> dict:
        return {
            "leader": self.leader,
            "timelocks": {e.label(): t for e, t in self.expiry.items()},
            "hashlock": self.lock.h,
        }


DRIVERS: dict[str, type[Driver]] = {AC3TW: AC3TWDriver, AC3WN: AC3WNDriver, BASELINE: BaselineDriver}


class Adversary:
    """Forks the witness chain around the decision block once, per the plan."""

    def __init__(self, plan: AdversaryPlan, world: World, driver: AC3WNDriver):
        self.plan = plan
        self.world = world
        self.driver = driver
        self.k, self.branch_len = plan.sample(world.seed)
        self.fired = False

    def on_tick(self) -> None:
        if self.fired:
            return
        blk = self.driver.decision_block()
        if blk is None:
            return
        chain = self.world.chains[self.plan.chain]
        if chain.confirmations(blk.digest) < self.k:
            return
        self.fired = True
        tx = ChainTx.call(self.driver.sc_w_id, "authorize_refund", {}, "adversary", nonce=1 << 20)
        created = chain.inject_fork(blk.header.prev_digest, self.branch_len, [[tx]],
                                    timestamp=self.world.now)
        self.world.record("adversary", "inject_fork", chain=self.plan.chain, confirmations=self.k,
                          branch_len=self.branch_len, root=blk.header.prev_digest,
                          won=bool(created) and chain.tip == created[-1])


def simulate(scenario: Scenario, seed: int | None = None,
             driver_factory: Callable[[World], Driver] | None = None) -> RunOutcome:
    return execute(scenario, seed, driver_factory)[1]


def execute(scenario: Scenario, seed: int | None = None,
            driver_factory: Callable[[World], Driver] | None = None) -> tuple[World, RunOutcome]:
    """Run to completion or horizon; also hands back the world for inspection."""
    seed = scenario.seeds[0] if seed is None else seed
    world = World(scenario, seed)
    driver = (driver_factory or DRIVERS[scenario.protocol])(world)
    adversary = None
    if scenario.adversary is not None:
        if not isinstance(driver, AC3WNDriver):
            raise ScenarioInvalid("fork adversary requires the AC3WN protocol")
        adversary = Adversary(scenario.adversary, world, driver)
    end = world.t_s + scenario.horizon
    t_c = None
    while world.now < end:
        world.clock.advance(world.now + 1)
        world.mine_due()
        if adversary is not None:
            adversary.on_tick()
        window = world.window_of(world.now)
        if window is None:
            continue
        if driver.complete(window):
            t_c = world.now
            break
        driver.act(window)
    return world, driver.outcome(t_c)


def _require(scenario: Scenario, protocol: str) -> None:
    if scenario.protocol != protocol:
        raise ScenarioInvalid(f"scenario is {scenario.protocol}, not {protocol}")


def run_ac3wn(scenario: Scenario, seed: int | None = None) -> RunOutcome:
    _require(scenario, AC3WN)
    return simulate(scenario, seed)


def run_ac3tw(scenario: Scenario, seed: int | None = None) -> RunOutcome:
    _require(scenario, AC3TW)
    return simulate(scenario, seed)


def run_baseline(scenario: Scenario, seed: int | None = None) -> RunOutcome:
    _require(scenario, BASELINE)
    return simulate(scenario, seed)


def run(scenario: Scenario, seed: int | None = None) -> RunOutcome:
    return simulate(scenario, seed)
