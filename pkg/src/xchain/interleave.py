"""Exhaustive enumeration of protocol event orders.

A *model* names a finite set of protocol events and says which are enabled
in a given snapshot of the chains. :func:`explore` walks every maximal
sequence of enabled events depth first, cloning the chains at each branch
point. Every event submits its transaction (unchecked, so a miner may drop
it) and then mines ``1 + d`` blocks, making its effect stable before the
next event. Forks are disabled.
"""

from __future__ import annotations

import hashlib
import random
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterator

from .chain_sim import CALL, ChainTx, DeployMessage, SimChain, contract_id_for
from .contracts import (
    CentralizedSC,
    ContractState,
    HashLock,
    PermissionlessSC,
    TimeLockContract,
    TrustedWitness,
    WitnessRef,
    WitnessState,
    trent_message,
    witness_deploy_tx,
)
from .encoding import KeyPair
from .evidence import EvidenceBundle, EvidenceError, anchor_at, build_evidence, record_anchor
from .protocols import (
    AC3TW,
    AC3WN,
    BASELINE,
    BaselineInapplicable,
    Scenario,
    ScenarioInvalid,
    Verdict,
    World,
    secret_for,
    verdict,
)
from .swap_graph import UNBOUNDED, SwapEdge, classify, diameter, longest_path_to, multisign

DEFAULT_MAX_EVENTS = 12
DEFAULT_MAX_SCHEDULES = 100_000


class TooManySchedules(Exception):
    pass


@dataclass
class Snap:
    chains: dict[str, SimChain]
    now: int = 0
    done: tuple[str, ...] = ()
    data: dict = field(default_factory=dict)

    def clone(self) -> "Snap":
        return Snap({k: c.clone() for k, c in self.chains.items()}, self.now, self.done, dict(self.data))


class Model:
    """Event universe plus enabling rules; subclasses implement the protocol."""

    protocol = ""

    def universe(self) -> list[str]:
        raise NotImplementedError

    def initial(self) -> Snap:
        raise NotImplementedError

    def enabled(self, snap: Snap) -> list[str]:
        raise NotImplementedError

    def apply(self, snap: Snap, event: str) -> None:
        raise NotImplementedError

    def verdict(self, snap: Snap) -> Verdict:
        raise NotImplementedError

    def check(self, snap: Snap) -> list[str]:
        """Extra per-schedule invariant failures."""
        return []


@dataclass
class InterleaveReport:
    protocol: str
    events: int
    schedules: int = 0
    verdicts: Counter = field(default_factory=Counter)
    violations: list[tuple[str, ...]] = field(default_factory=list)
    violation_count: int = 0
    invariant_failures: list[tuple[tuple[str, ...], str]] = field(default_factory=list)
    keep: int = 20

    @property
    def ok(self) -> bool:
        return self.violation_count == 0 and not self.invariant_failures

    def to_json(self) -> dict:
        return {
            "protocol": self.protocol,
            "events": self.events,
            "schedules": self.schedules,
            "verdicts": dict(sorted(self.verdicts.items())),
            "violations": self.violation_count,
            "violation_traces": [list(s) for s in self.violations],
            "invariant_failures": [{"schedule": list(s), "failure": f} for s, f in self.invariant_failures],
        }


def schedules(model: Model, max_schedules: int = DEFAULT_MAX_SCHEDULES) -> Iterator[Snap]:
    """Yield the final snapshot of every maximal schedule, depth first."""
    count = 0
    stack = [model.initial()]
    while stack:
        snap = stack.pop()
        ready = model.enabled(snap)
        if not ready:
            count += 1
            if count > max_schedules:
                raise TooManySchedules(f"more than {max_schedules} schedules")
            yield snap
            continue
        for ev in reversed(ready):
            nxt = snap.clone()
            model.apply(nxt, ev)
            nxt.done = nxt.done + (ev,)
            stack.append(nxt)


def explore(model: Model, max_schedules: int = DEFAULT_MAX_SCHEDULES,
            max_events: int = DEFAULT_MAX_EVENTS) -> InterleaveReport:
    n = len(model.universe())
    if n > max_events:
        raise TooManySchedules(f"{n} events exceeds the bound of {max_events}")
    report = InterleaveReport(model.protocol, n)
    for snap in schedules(model, max_schedules):
        report.schedules += 1
        v = model.verdict(snap)
        report.verdicts[v.kind] += 1
        if v.kind == "AtomicityViolated":
            report.violation_count += 1
            if len(report.violations) < report.keep:
                report.violations.append(snap.done)
        for failure in model.check(snap):
            report.invariant_failures.append((snap.done, failure))
    return report


def replay_schedule(model: Model, schedule) -> Snap:
    """Re-execute a recorded schedule, checking each event is still enabled."""
    snap = model.initial()
    for ev in schedule:
        if ev not in model.enabled(snap):
            raise ValueError(f"event {ev!r} is not enabled at this point")
        model.apply(snap, ev)
        snap.done = snap.done + (ev,)
    return snap


class _ChainModel(Model):
    """Common setup: funded chains, warm-up, and per-event mining."""

    def __init__(self, scenario: Scenario):
        for c in scenario.all_chains():
            if c.fork_probability != 0:
                raise ScenarioInvalid("interleaving enumeration assumes fork_probability 0")
        self.scenario = scenario
        self.graph = scenario.graph
        self.d = scenario.d
        self.world = World(scenario, scenario.seeds[0])
        self.rng = random.Random(0)
        self.edges = {e.label(): e for e in self.graph.edges}

    def pk(self, pid: str) -> str:
        return self.world.pk(pid)

    def mine(self, snap: Snap, chain_id: str, n: int | None = None) -> None:
        chain = snap.chains[chain_id]
        for _ in range(self.d + 1 if n is None else n):
            chain.mine_block(self.rng, timestamp=snap.now)

    def base_snap(self) -> Snap:
        snap = Snap({k: c.clone() for k, c in self.world.chains.items()})
        for cid in sorted(snap.chains):
            self.mine(snap, cid)
        return snap

    def submit(self, snap: Snap, chain_id: str, tx: ChainTx) -> None:
        snap.chains[chain_id].submit_tx(tx)
        self.mine(snap, chain_id)

    def contract(self, snap: Snap, e: SwapEdge):
        tx = snap.data.get(("deploy", e))
        if tx is None:
            return None
        return snap.chains[e.chain_id].state.contracts.get(contract_id_for(tx.tx_id))

    def verdict(self, snap: Snap) -> Verdict:
        states = {}
        for label, e in self.edges.items():
            c = self.contract(snap, e)
            states[label] = c.state if c else None
        return verdict(states)


class AC3WNModel(_ChainModel):
    protocol = AC3WN

    def __init__(self, scenario: Scenario):
        super().__init__(scenario)
        self.wc = scenario.witness_chain.chain_id

    def universe(self) -> list[str]:
        out = ["authorize_redeem", "authorize_refund"]
        for label in self.edges:
            out += [f"deploy:{label}", f"redeem:{label}", f"refund:{label}"]
        return sorted(out)

    def initial(self) -> Snap:
        snap = self.base_snap()
        anchors = [record_anchor(snap.chains[c], self.d) for c in self.graph.chains()]
        ms = multisign(self.graph, [self.world.participants[v] for v in self.graph.vertices])
        registrar = self.graph.vertices[0]
        tx = witness_deploy_tx(snap.chains[self.wc], self.pk(registrar),
                               [(v, self.pk(v)) for v in self.graph.vertices], ms, self.graph, anchors, self.d)
        self.submit(snap, self.wc, tx)
        snap.data["sc_w"] = contract_id_for(tx.tx_id)
        snap.data["sc_w_anchor"] = anchor_at(snap.chains[self.wc], snap.chains[self.wc].canonical_tx_block(tx.tx_id).digest)
        return snap

    def witness_state(self, snap: Snap) -> WitnessState:
        return snap.chains[self.wc].state.contracts[snap.data["sc_w"]].state

    def enabled(self, snap: Snap) -> list[str]:
        ws = self.witness_state(snap)
        out = []
        for ev in self.universe():
            if ev in snap.done:
                continue
            kind, _, label = ev.partition(":")
            if kind in ("redeem", "refund"):
                want = WitnessState.RD_AUTH if kind == "redeem" else WitnessState.RF_AUTH
                if ws is not want or self.contract(snap, self.edges[label]) is None:
                    continue
            out.append(ev)
        return out

    def apply(self, snap: Snap, event: str) -> None:
        kind, _, label = event.partition(":")
        W = snap.chains[self.wc]
        sc_w = snap.data["sc_w"]
        if kind == "deploy":
            e = self.edges[label]
            ref = WitnessRef(self.wc, sc_w, self.d)
            tx = ChainTx.deploy(PermissionlessSC.code, DeployMessage(self.pk(e.source), e.amount),
                                {"r": self.pk(e.recipient), "rd": ref, "rf": ref,
                                 "witness_anchor": snap.data["sc_w_anchor"]})
            snap.data[("deploy", e)] = tx
            self.submit(snap, e.chain_id, tx)
        elif kind == "authorize_redeem":
            w = W.state.contracts[sc_w]
            pairs = []
            for e in self.graph.edges:
                tx = snap.data.get(("deploy", e))
                if tx is None:
                    continue
                try:
                    pairs.append((e, build_evidence(snap.chains[e.chain_id], w.anchor_for(e.chain_id), tx.tx_id, self.d)))
                except EvidenceError:
                    continue
            self.submit(snap, self.wc, ChainTx.call(sc_w, "authorize_redeem", {"bundle": EvidenceBundle.of(pairs)}))
        elif kind == "authorize_refund":
            self.submit(snap, self.wc, ChainTx.call(sc_w, "authorize_refund", {}))
        else:
            e = self.edges[label]
            decision = next(tx for blk in W.canonical_chain() for tx in blk.txs
                            if tx.kind == CALL and tx.payload.contract_id == sc_w)
            c = self.contract(snap, e)
            ev = build_evidence(W, c.witness_anchor, decision.tx_id, self.d)
            cid = contract_id_for(snap.data[("deploy", e)].tx_id)
            self.submit(snap, e.chain_id, ChainTx.call(cid, kind, {"witness": ev}))

    def check(self, snap: Snap) -> list[str]:
        if self.witness_state(snap) is WitnessState.P:
            return ["witness contract never decided"]
        return []


class AC3TWModel(_ChainModel):
    protocol = AC3TW

    def __init__(self, scenario: Scenario):
        super().__init__(scenario)
        self.trent = KeyPair("trent")
        self.ms = multisign(self.graph, [self.world.participants[v] for v in self.graph.vertices])
        self.scheme = TrustedWitness(self.ms, self.trent.pk)

    def universe(self) -> list[str]:
        out = ["req_redeem", "req_refund"]
        for label in self.edges:
            out += [f"deploy:{label}", f"redeem:{label}", f"refund:{label}"]
        return sorted(out)

    def initial(self) -> Snap:
        snap = self.base_snap()
        snap.data["trent"] = None
        snap.data["issued"] = 0
        return snap

    def enabled(self, snap: Snap) -> list[str]:
        decision = snap.data["trent"]
        out = []
        for ev in self.universe():
            if ev in snap.done:
                continue
            kind, _, label = ev.partition(":")
            if kind in ("redeem", "refund"):
                want = ContractState.RD if kind == "redeem" else ContractState.RF
                if decision is None or decision[0] is not want or self.contract(snap, self.edges[label]) is None:
                    continue
            out.append(ev)
        return out

    def _all_deployed(self, snap: Snap) -> bool:
        for e in self.graph.edges:
            c = self.contract(snap, e)
            if not (isinstance(c, CentralizedSC) and c.state is ContractState.P and c.rd == self.scheme):
                return False
        return True

    def _sign(self, snap: Snap, kind: ContractState) -> None:
        snap.data["trent"] = (kind, self.trent.sign(trent_message(self.ms, kind)))
        snap.data["issued"] += 1

    def apply(self, snap: Snap, event: str) -> None:
        kind, _, label = event.partition(":")
        if kind == "deploy":
            e = self.edges[label]
            tx = ChainTx.deploy(CentralizedSC.code, DeployMessage(self.pk(e.source), e.amount),
                                {"r": self.pk(e.recipient), "rd": self.scheme, "rf": self.scheme})
            snap.data[("deploy", e)] = tx
            self.submit(snap, e.chain_id, tx)
        elif kind == "req_redeem":
            if snap.data["trent"] is None and self._all_deployed(snap):
                self._sign(snap, ContractState.RD)
        elif kind == "req_refund":
            if snap.data["trent"] is None:
                self._sign(snap, ContractState.RF)
        else:
            e = self.edges[label]
            cid = contract_id_for(snap.data[("deploy", e)].tx_id)
            self.submit(snap, e.chain_id, ChainTx.call(cid, kind, {"witness": snap.data["trent"][1]}))

    def check(self, snap: Snap) -> list[str]:
        if snap.data["issued"] != 1:
            return [f"trusted witness issued {snap.data['issued']} signatures"]
        return []


class BaselineModel(_ChainModel):
    protocol = BASELINE

    def __init__(self, scenario: Scenario):
        super().__init__(scenario)
        cls = classify(self.graph)
        if cls.kind != "leader_acyclic":
            raise BaselineInapplicable(cls.kind)
        diam = diameter(self.graph)
        if diam is UNBOUNDED:
            raise ScenarioInvalid("baseline needs a strongly connected graph (finite diameter)")
        self.leader = min(cls.leaders)
        self.secret = secret_for(scenario.seeds[0])
        self.lock = HashLock(hashlib.sha256(self.secret).hexdigest())
        delta = scenario.delta
        self.expiry = {
            e: (diam + longest_path_to(self.graph, e.recipient, self.leader) + 1) * delta
            for e in self.graph.edges
        }

    def universe(self) -> list[str]:
        out = []
        for label in self.edges:
            out += [f"deploy:{label}", f"redeem:{label}", f"expire:{label}"]
        return sorted(out)

    def initial(self) -> Snap:
        return self.base_snap()

    def revealed(self, snap: Snap, u: str) -> bool:
        for e in self.graph.outgoing(u):
            c = self.contract(snap, e)
            if c is not None and c.state is ContractState.RD:
                return True
        return False

    def enabled(self, snap: Snap) -> list[str]:
        out = []
        for ev in self.universe():
            if ev in snap.done:
                continue
            kind, _, label = ev.partition(":")
            e = self.edges[label]
            if kind == "deploy":
                u = e.source
                if u != self.leader and not all(self.contract(snap, i) is not None for i in self.graph.incoming(u)):
                    continue
            elif kind == "redeem":
                v = e.recipient
                if self.contract(snap, e) is None:
                    continue
                if v == self.leader:
                    if not all(self.contract(snap, i) is not None for i in self.graph.incoming(v)):
                        continue
                elif not self.revealed(snap, v):
                    continue
            else:
                earlier = [f"expire:{o.label()}" for o in self.graph.edges if self.expiry[o] < self.expiry[e]]
                if any(x not in snap.done for x in earlier):
                    continue
            out.append(ev)
        return out

    def apply(self, snap: Snap, event: str) -> None:
        kind, _, label = event.partition(":")
        e = self.edges[label]
        if kind == "deploy":
            tx = ChainTx.deploy(TimeLockContract.code, DeployMessage(self.pk(e.source), e.amount),
                                {"r": self.pk(e.recipient), "rd": self.lock, "rf": self.lock,
                                 "expiry": self.expiry[e]})
            snap.data[("deploy", e)] = tx
            self.submit(snap, e.chain_id, tx)
        elif kind == "redeem":
            cid = contract_id_for(snap.data[("deploy", e)].tx_id)
            self.submit(snap, e.chain_id, ChainTx.call(cid, "redeem", {"witness": self.secret}))
        else:
            snap.now = max(snap.now, self.expiry[e])
            for cid in sorted(snap.chains):
                self.mine(snap, cid)


MODELS = {AC3WN: AC3WNModel, AC3TW: AC3TWModel, BASELINE: BaselineModel}


def model_for(scenario: Scenario) -> Model:
    return MODELS[scenario.protocol](scenario)
