"""Acceptance criteria as runnable checks.

Each criterion returns a :class:`CriterionResult` whose ``output`` is a
deterministic text rendering of everything it computed (no timings), so
criterion 10 can rerun 1 to 9 and compare the bytes.
"""

from __future__ import annotations

import contextlib
import csv
import dataclasses
import hashlib
import io
import json
import random
import time
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterable, TextIO

from . import analysis
from .chain_sim import CALL, BlockHeader, Call, ChainTx, Deploy, DeployMessage
from .contracts import WitnessState
from .evidence import (
    AnchorHeader,
    DeployEffect,
    Evidence,
    WitnessStateEffect,
    build_evidence,
    expected_deploy_effect,
    validate_evidence,
)
from .harness import canonical_json, load_scenario, load_scenario_obj, read_scenario_text, run_seeds
from .interleave import explore, model_for, replay_schedule
from .protocols import BaselineInapplicable, execute, run_baseline
from .swap_graph import classify, has_cycle

CONSISTENT = {("AllRedeemed", "RD_auth"), ("AllRefunded", "RF_auth")}


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    detail: str
    output: str
    seconds: float = 0.0
    budget: float | None = None

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        budget = f", budget {self.budget:g}s" if self.budget else ""
        return f"[{status}] criterion {self.number:>2} {self.title}: {self.detail} ({self.seconds:.2f}s{budget})"


class _Checks:
    """Collects named boolean checks plus the values behind them."""

    def __init__(self):
        self.failed: list[str] = []
        self.values: dict = {}

    def expect(self, name: str, ok: bool) -> bool:
        if not ok:
            self.failed.append(name)
        return ok

    def output(self) -> str:
        return canonical_json(self.values)


def _outcome(name: str, seed: int | None = None):
    loaded = load_scenario(name)
    _, outcome = execute(loaded.scenario, seed)
    return outcome


# -- 1 ------------------------------------------------------------------------

def criterion_latency() -> _Checks:
    c = _Checks()
    text = analysis.latency_csv(range(2, 11))
    rows = list(csv.DictReader(io.StringIO(text)))
    c.values["csv"] = text
    for row in rows:
        diam = int(row["diam"])
        c.expect(f"baseline diam {diam}", row["baseline_latency"] == str(2 * diam))
        c.expect(f"ac3wn diam {diam}", row["ac3wn_latency"] == "4")
    c.expect("row count", [int(r["diam"]) for r in rows] == list(range(2, 11)))
    for name, predicted in (("fig4_ac3wn", 4), ("fig4_baseline", 4)):
        out = _outcome(name)
        report = analysis.measured_vs_predicted(out)
        c.values[name] = {"latency": str(out.latency), "verdict": out.verdict.kind, "report": report.to_json()}
        c.expect(f"{name} latency", out.latency == predicted and out.latency.denominator == 1)
        c.expect(f"{name} report", not report.mismatches)
    return c


# -- 2 ------------------------------------------------------------------------

def criterion_cost() -> _Checks:
    c = _Checks()
    fees = analysis.FeeSchedule()
    for n in (1, 2, 5, 10):
        ratio = analysis.fee_overhead(n, fees)
        c.values[f"overhead_{n}"] = str(ratio)
        c.expect(f"overhead N={n}", ratio == Fraction(1, n))
    out = _outcome("fig4_ac3wn")
    deploys = sum(v["deploys"] for v in out.fees.values())
    calls = sum(v["calls"] for v in out.fees.values())
    c.values["measured"] = {"n_edges": out.n_edges, "deploys": deploys, "calls": calls, "fees": out.fees}
    c.expect("deploys N+1", deploys == out.n_edges + 1)
    c.expect("calls N+1", calls == out.n_edges + 1)
    c.expect("fee total", analysis.total_fee("ac3wn", out.n_edges, fees) == (deploys * fees.f_d + calls * fees.f_fc))
    return c


# -- 3 ------------------------------------------------------------------------

def criterion_throughput() -> _Checks:
    c = _Checks()
    table = analysis.REFERENCE_TPS
    c.expect("table", table == {"btc": 7, "eth": 25, "ltc": 56, "bch": 61})
    external = analysis.min_throughput([table["eth"], table["ltc"], table["btc"]])
    involved = analysis.min_throughput([table["eth"], table["ltc"]])
    c.values.update(external_witness=external, involved_witness=involved, csv=analysis.throughput_csv())
    c.expect("btc witness", external == 7)
    c.expect("witness from involved set", involved == 25)
    return c


# -- 4 ------------------------------------------------------------------------

def brute_force_depth(V_a, C_h, d_h) -> int:
    bound = Fraction(V_a) * Fraction(d_h) / Fraction(C_h)
    d = 1
    while not Fraction(d) > bound:
        d += 1
    return d


def criterion_depth() -> _Checks:
    c = _Checks()
    p = analysis.SecurityParams(Fraction(10**6), Fraction(3 * 10**5), Fraction(6))
    d = analysis.min_confirmation_depth(p)
    scan = brute_force_depth(p.V_a, p.C_h, p.d_h)
    c.values.update(threshold=str(p.V_a * p.d_h / p.C_h), depth=d, scan=scan)
    c.expect("depth 21", d == 21)
    c.expect("brute force agrees", scan == d)
    return c


# -- 5 ------------------------------------------------------------------------

def criterion_fork_free() -> _Checks:
    c = _Checks()
    for name in ("interleave_2edge_ac3wn", "interleave_3edge_ac3wn"):
        loaded = load_scenario(name)
        c.expect(f"{name} fork-free", all(ch.fork_probability == 0 for ch in loaded.scenario.all_chains()))
        report = explore(model_for(loaded.scenario))
        c.values[name] = report.to_json()
        c.expect(f"{name} no violations", report.violation_count == 0)
        c.expect(f"{name} witness decided", not report.invariant_failures)
        c.expect(f"{name} schedule bound", 0 < report.schedules <= 10**5)
    return c


# -- 6 ------------------------------------------------------------------------

def criterion_fork_safety(runs: int = 1000) -> _Checks:
    c = _Checks()
    for name in ("fork_safety_eps010", "fork_safety_eps030"):
        loaded = load_scenario(name)
        sc = loaded.scenario
        seeds = list(sc.seeds)[:runs]
        c.expect(f"{name} d=6", sc.d == 6)
        c.expect(f"{name} >= {runs} runs", len(seeds) >= runs)
        hi = sc.adversary.branch_len[1] if isinstance(sc.adversary.branch_len, tuple) else sc.adversary.branch_len
        c.expect(f"{name} fork shorter than d", hi < sc.d)
        records = run_seeds(loaded, seeds)
        verdicts = Counter(r.outcome.verdict.kind for r in records)
        # converged: the witness decided and every asset contract followed that decision
        converged = sum((r.outcome.verdict.kind, r.outcome.witness_state) in CONSISTENT for r in records)
        forks_won = sum(
            any(t["action"] == "inject_fork" and t.get("won") for t in r.outcome.trace) for r in records
        )
        digest = hashlib.sha256("\n".join(r.line() for r in records).encode()).hexdigest()
        c.values[name] = {"runs": len(records), "verdicts": dict(sorted(verdicts.items())),
                          "converged": converged, "forks_won": forks_won, "records_sha256": digest}
        c.expect(f"{name} zero violations", verdicts.get("AtomicityViolated", 0) == 0)
        c.expect(f"{name} witness converged", converged == len(records))
    return c


# -- 7 ------------------------------------------------------------------------

def criterion_baseline_counterexample() -> _Checks:
    from .cli import main

    c = _Checks()
    buf = io.StringIO()
    with contextlib.redirect_stdout(buf):
        code = main(["run", "fig4_baseline_crash"])
    record = json.loads(buf.getvalue().splitlines()[0])
    out = record["outcome"]
    c.values.update(exit=code, verdict=out["verdict"], balances=out["balances"], trace=out["trace"])
    c.expect("exit 1", code == 1)
    c.expect("violated", out["verdict"]["kind"] == "AtomicityViolated")
    b = out["balances"]
    c.expect("Alice holds both assets", b["bitcoin"]["Alice"] == 5 and b["ethereum"]["Alice"] == 7)
    c.expect("Bob holds nothing", b["bitcoin"]["Bob"] == 0 and b["ethereum"]["Bob"] == 0)
    t1_edge = "Alice->Bob@bitcoin"
    t1 = out["extra"]["timelocks"][t1_edge]
    c.expect("t1 > t2", t1 > out["extra"]["timelocks"]["Bob->Alice@ethereum"])
    cid = next(x["contract_id"] for x in out["contracts"] if x["edge"] == t1_edge)
    refunds = [t for t in out["trace"] if t["action"] == "expiry_refund" and t["contract"] == cid]
    c.expect("t1 expiry refund in trace", len(refunds) == 1 and refunds[0]["tick"] == t1)
    redeem_tick = next(t["tick"] for t in out["trace"] if t["action"] == "redeem" and t["actor"] == "Alice")
    c.expect("leader redeemed first", redeem_tick < t1)
    return c


# -- 8 ------------------------------------------------------------------------

def criterion_complex_graphs() -> _Checks:
    c = _Checks()
    for name, kind in (("cyclic", "cyclic_all_leaders"), ("disconnected", "disconnected")):
        ac = load_scenario(f"{name}_ac3wn")
        g = ac.scenario.graph
        c.expect(f"{name} classified {kind}", classify(g).kind == kind)
        if kind == "cyclic_all_leaders":
            c.expect("every vertex-deleted subgraph cyclic", all(has_cycle(g.without(v)) for v in g.vertices))
        _, out = execute(ac.scenario)
        c.values[f"{name}_ac3wn"] = {"verdict": out.verdict.kind, "latency": str(out.latency), "fees": out.fees}
        c.expect(f"{name} AC3WN redeemed", out.verdict.kind == "AllRedeemed")
        base = load_scenario(f"{name}_baseline")
        try:
            run_baseline(base.scenario)
            c.values[f"{name}_baseline"] = "ran"
            c.expect(f"{name} baseline inapplicable", False)
        except BaselineInapplicable as exc:
            c.values[f"{name}_baseline"] = exc.kind
            c.expect(f"{name} baseline kind", exc.kind == kind)
    return c


# -- 9 ------------------------------------------------------------------------

@dataclass(frozen=True)
class HonestCase:
    name: str
    anchor: AnchorHeader
    evidence: Evidence
    expected: object
    d: int


FUZZ_DIFFICULTY = 16
FUZZ_D = 3


def honest_evidence_cases(difficulty: int = FUZZ_DIFFICULTY, d: int = FUZZ_D) -> list[HonestCase]:
    """Deploy and witness-decision evidence from a replayed two-party AC3WN run.

    A high proof-of-work difficulty keeps a tampered tip header from passing
    the work check by luck; every evidence is trimmed to exactly ``d``
    confirmations so that dropping a header must break the depth check.
    """
    raw = json.loads(read_scenario_text("interleave_2edge_ac3wn"))
    for ch in raw["chains"] + [raw["witness_chain"]]:
        ch["pow_difficulty"] = difficulty
    raw.update(d=d, delta_ticks=d + 1)
    raw.pop("interleave", None)
    sc = load_scenario_obj(raw).scenario
    model = model_for(sc)
    edges = list(sc.graph.edges)
    schedule = [f"deploy:{e.label()}" for e in edges] + ["authorize_redeem"]
    snap = replay_schedule(model, schedule)
    wc = sc.witness_chain.chain_id
    W = snap.chains[wc]
    sc_w_id = snap.data["sc_w"]
    sc_w = W.state.contracts[sc_w_id]

    def trimmed(ev: Evidence) -> Evidence:
        return dataclasses.replace(ev, headers=ev.headers[: ev.target_index + 1 + d])

    cases = []
    for e in edges:
        tx = snap.data[("deploy", e)]
        anchor = sc_w.anchor_for(e.chain_id)
        ev = trimmed(build_evidence(snap.chains[e.chain_id], anchor, tx.tx_id, d))
        cases.append(HonestCase(f"deploy {e.label()}", anchor, ev, expected_deploy_effect(sc_w, e, sc_w_id, wc), d))
    decision = next(tx for blk in W.canonical_chain() for tx in blk.txs
                    if tx.kind == CALL and tx.payload.contract_id == sc_w_id)
    anchor = snap.data["sc_w_anchor"]
    ev = trimmed(build_evidence(W, anchor, decision.tx_id, d))
    cases.append(HonestCase("decision", anchor, ev, WitnessStateEffect(sc_w_id, WitnessState.RD_AUTH), d))
    return cases


def _flip_hex(value: str, rng: random.Random) -> str:
    i = rng.randrange(len(value))
    new = rng.choice([h for h in "0123456789abcdef" if h != value[i]])
    return value[:i] + new + value[i + 1:]


def _mutate_header(h: BlockHeader, rng: random.Random) -> tuple[str, BlockHeader]:
    field = rng.choice(["height", "prev_digest", "payload_digest", "timestamp", "pow_nonce", "miner_id"])
    old = getattr(h, field)
    if field in ("prev_digest", "payload_digest"):
        new = _flip_hex(old, rng)
    elif field == "miner_id":
        new = old + rng.choice(["x", "-evil", "0"])
    else:
        new = old + rng.choice([-2, -1, 1, 2, 3, 1000])
    return field, dataclasses.replace(h, **{field: new})


def _mutate_payload(tx: ChainTx, rng: random.Random) -> tuple[str, ChainTx]:
    p = tx.payload
    if isinstance(p, Deploy):
        field = rng.choice(["value", "sender", "r", "nonce", "code"])
        if field == "value":
            p = dataclasses.replace(p, msg=DeployMessage(p.msg.sender, p.msg.value + rng.choice([-1, 1, 100])))
        elif field == "sender":
            p = dataclasses.replace(p, msg=DeployMessage(_flip_hex(p.msg.sender, rng), p.msg.value))
        elif field == "r":
            p = dataclasses.replace(p, args={**p.args, "r": _flip_hex(p.args["r"], rng)})
        elif field == "nonce":
            p = dataclasses.replace(p, nonce=p.nonce + rng.randint(1, 9))
        else:
            p = dataclasses.replace(p, code=p.code + "-x")
    elif isinstance(p, Call):
        field = rng.choice(["function", "contract_id", "nonce", "caller"])
        if field == "function":
            p = dataclasses.replace(p, function="authorize_refund" if p.function != "authorize_refund" else "authorize_redeem")
        elif field == "contract_id":
            p = dataclasses.replace(p, contract_id=_flip_hex(p.contract_id, rng))
        elif field == "nonce":
            p = dataclasses.replace(p, nonce=p.nonce + rng.randint(1, 9))
        else:
            p = dataclasses.replace(p, caller=p.caller + "x")
    else:  # transfers carry no effect but still feed the payload digest
        field = "amount"
        p = dataclasses.replace(p, amount=p.amount + 1)
    return field, ChainTx(tx.kind, p)


def _mutate_effect(effect, rng: random.Random) -> tuple[str, object]:
    if isinstance(effect, DeployEffect):
        field = rng.choice(["code", "sender", "recipient", "value", "rd", "rf"])
        old = getattr(effect, field)
        if field == "value":
            new = old + rng.choice([-1, 1, 7])
        elif field in ("rd", "rf"):
            new = rng.choice([
                dataclasses.replace(old, min_depth=old.min_depth - 1),
                dataclasses.replace(old, sc_w_id=_flip_hex(old.sc_w_id, rng)),
                dataclasses.replace(old, witness_chain_id=old.witness_chain_id + "x"),
            ])
        elif field == "code":
            new = "htlc"
        else:
            new = _flip_hex(old, rng)
        return field, dataclasses.replace(effect, **{field: new})
    field = rng.choice(["state", "contract_id"])
    if field == "state":
        return field, dataclasses.replace(effect, state=WitnessState.RF_AUTH if effect.state is not WitnessState.RF_AUTH else WitnessState.RD_AUTH)
    return field, dataclasses.replace(effect, contract_id=_flip_hex(effect.contract_id, rng))


def mutate_evidence(ev: Evidence, rng: random.Random) -> tuple[str, Evidence]:
    """One single-field tampering of ``ev``; returns (description, mutant)."""
    kinds = ["header", "header", "header", "chain_id", "target_index", "tx_id", "txs", "payload", "effect",
             "drop_last", "drop_first", "swap_headers"]
    kind = rng.choice(kinds)
    if kind == "header":
        i = rng.randrange(len(ev.headers))
        field, h = _mutate_header(ev.headers[i], rng)
        headers = ev.headers[:i] + (h,) + ev.headers[i + 1:]
        return f"header[{i}].{field}", dataclasses.replace(ev, headers=headers)
    if kind == "chain_id":
        return kind, dataclasses.replace(ev, chain_id=ev.chain_id + rng.choice(["x", "-fork", "2"]))
    if kind == "target_index":
        delta = rng.choice([d for d in (-2, -1, 1, 2) if ev.target_index + d != ev.target_index])
        return kind, dataclasses.replace(ev, target_index=ev.target_index + delta)
    if kind == "tx_id":
        others = [t.tx_id for t in ev.txs if t.tx_id != ev.tx_id]
        new = rng.choice(others) if others and rng.random() < 0.5 else _flip_hex(ev.tx_id, rng)
        return kind, dataclasses.replace(ev, tx_id=new)
    if kind == "txs":
        txs = list(ev.txs)
        op = rng.choice(["drop", "dup", "extra"])
        if op == "drop":
            txs.pop(rng.randrange(len(txs)))
        elif op == "dup":
            txs.insert(rng.randrange(len(txs) + 1), rng.choice(txs))
        else:
            txs.append(ChainTx.transfer("00" * 32, "11" * 32, rng.randint(1, 9), rng.randint(0, 99)))
        return f"txs.{op}", dataclasses.replace(ev, txs=tuple(txs))
    if kind == "payload":
        i = rng.randrange(len(ev.txs))
        field, tx = _mutate_payload(ev.txs[i], rng)
        txs = ev.txs[:i] + (tx,) + ev.txs[i + 1:]
        return f"txs[{i}].{field}", dataclasses.replace(ev, txs=txs)
    if kind == "effect":
        field, eff = _mutate_effect(ev.effect, rng)
        return f"effect.{field}", dataclasses.replace(ev, effect=eff)
    if kind == "drop_last":
        return kind, dataclasses.replace(ev, headers=ev.headers[:-1])
    if kind == "drop_first":
        return kind, dataclasses.replace(ev, headers=ev.headers[1:], target_index=ev.target_index - 1)
    i = rng.randrange(len(ev.headers) - 1)
    headers = list(ev.headers)
    headers[i], headers[i + 1] = headers[i + 1], headers[i]
    return f"swap_headers[{i}]", dataclasses.replace(ev, headers=tuple(headers))


def fuzz_evidence(cases: Iterable[HonestCase], mutations: int = 1200, seed: int = 0):
    """Returns (honest results, list of (case, description, accepted))."""
    cases = list(cases)
    rng = random.Random(f"evidence-fuzz:{seed}")
    honest = [(case.name, validate_evidence(case.anchor, case.evidence, case.d, case.expected)) for case in cases]
    results = []
    for k in range(mutations):
        case = cases[k % len(cases)]
        desc, mutant = mutate_evidence(case.evidence, rng)
        if mutant == case.evidence:
            raise AssertionError(f"mutation {desc} left the evidence unchanged")
        results.append((case.name, desc, validate_evidence(case.anchor, mutant, case.d, case.expected)))
    return honest, results


def criterion_evidence_fuzz(mutations: int = 1200) -> _Checks:
    c = _Checks()
    cases = honest_evidence_cases()
    honest, results = fuzz_evidence(cases, mutations)
    accepted = [(n, d) for n, d, ok in results if ok]
    kinds = Counter(d.split("[")[0].split(".")[0] for _, d, _ in results)
    c.values.update(
        honest=dict(honest), mutations=len(results), accepted=accepted, kinds=dict(sorted(kinds.items())),
        cases=[(case.name, len(case.evidence.headers), case.evidence.tx_id) for case in cases],
        mutants_sha256=hashlib.sha256("\n".join(f"{n}|{d}" for n, d, _ in results).encode()).hexdigest(),
    )
    c.expect("honest evidence accepted", all(ok for _, ok in honest))
    c.expect(">= 1000 mutations", len(results) >= 1000)
    c.expect("every mutation rejected", not accepted)
    return c


# -- driver -------------------------------------------------------------------

CRITERIA: dict[int, tuple[str, Callable[[], _Checks], float]] = {
    1: ("latency reproduction", criterion_latency, 1.0),
    2: ("cost overhead", criterion_cost, 1.0),
    3: ("throughput", criterion_throughput, 1.0),
    4: ("security depth", criterion_depth, 1.0),
    5: ("exhaustive interleavings (fork-free)", criterion_fork_free, 60.0),
    6: ("statistical fork safety", criterion_fork_safety, 300.0),
    7: ("baseline counterexample", criterion_baseline_counterexample, 1.0),
    8: ("complex graphs", criterion_complex_graphs, 5.0),
    9: ("evidence fuzzing", criterion_evidence_fuzz, 30.0),
}


def _summary(number: int, c: _Checks) -> str:
    v = c.values
    if c.failed:
        return "failed: " + ", ".join(c.failed)
    if number == 1:
        return "baseline 2*diam and AC3WN 4 for diam 2..10; two-party runs measured 4 and 4"
    if number == 2:
        m = v["measured"]
        return f"overhead 1/N for N in 1,2,5,10; measured {m['deploys']} deploys, {m['calls']} calls for N={m['n_edges']}"
    if number == 3:
        return f"btc witness -> {v['external_witness']}, involved witness -> {v['involved_witness']}"
    if number == 4:
        return f"threshold {v['threshold']}, d = {v['depth']} (scan {v['scan']})"
    if number == 5:
        return "; ".join(f"{k}: {r['schedules']} schedules, {r['violations']} violations" for k, r in v.items())
    if number == 6:
        return "; ".join(f"{k}: {r['runs']} runs, {r['verdicts']}, {r['forks_won']} forks won" for k, r in v.items())
    if number == 7:
        return f"exit {v['exit']}, {v['verdict']['kind']}, Alice holds {v['balances']['bitcoin']['Alice']} btc + {v['balances']['ethereum']['Alice']} eth"
    if number == 8:
        return "; ".join(f"{k}: {r if isinstance(r, str) else r['verdict']}" for k, r in v.items())
    if number == 9:
        return f"{v['mutations']} mutations all rejected, {len(v['honest'])} honest accepted"
    return "ok"


def run_criterion(number: int) -> CriterionResult:
    title, fn, budget = CRITERIA[number]
    t0 = time.perf_counter()
    try:
        checks = fn()
    except Exception as exc:  # report, do not crash the whole suite
        checks = _Checks()
        checks.failed.append(f"raised {type(exc).__name__}: {exc}")
    seconds = time.perf_counter() - t0
    passed = not checks.failed and seconds < budget
    detail = _summary(number, checks)
    if not checks.failed and seconds >= budget:
        detail += f"; over the {budget:g}s budget"
    return CriterionResult(number, title, passed, detail, checks.output(), seconds, budget)


def determinism(first: dict[int, CriterionResult], numbers: Iterable[int] = range(1, 10)) -> CriterionResult:
    t0 = time.perf_counter()
    again = {n: run_criterion(n) for n in numbers}
    differing = [n for n in again if again[n].output != first[n].output]
    seconds = time.perf_counter() - t0
    detail = f"criteria {', '.join(map(str, again))} byte-identical on rerun" if not differing \
        else f"outputs differ for criteria {differing}"
    out = canonical_json({n: hashlib.sha256(r.output.encode()).hexdigest() for n, r in again.items()})
    return CriterionResult(10, "determinism", not differing, detail, out, seconds, None)


def run_acceptance(only: Iterable[int] | None = None, stream: TextIO | None = None) -> list[CriterionResult]:
    wanted = sorted(set(only)) if only else list(range(1, 11))
    base = [n for n in range(1, 10) if n in wanted or 10 in wanted]
    results: dict[int, CriterionResult] = {}
    for n in base:
        results[n] = run_criterion(n)
        if stream is not None and n in wanted:
            print(results[n].line(), file=stream, flush=True)
    if 10 in wanted:
        results[10] = determinism(results)
        if stream is not None:
            print(results[10].line(), file=stream, flush=True)
    return [results[n] for n in wanted]
