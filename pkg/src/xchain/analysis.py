"""Closed-form latency, fee, throughput and confirmation-depth calculators.

Everything is exact: integers and :class:`fractions.Fraction`, never floats.
Latencies are expressed in units of Δ unless a ``delta`` is supplied.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping

from .encoding import format_rational
from .swap_graph import UNBOUNDED


class AnalysisError(ValueError):
    pass


class UnboundedDiameter(AnalysisError):
    pass


class EmptyList(AnalysisError):
    pass


class InvalidParams(AnalysisError):
    pass


Number = int | Fraction


@dataclass(frozen=True)
class FeeSchedule:
    f_d: Fraction = Fraction(1)
    f_fc: Fraction = Fraction(1)

    @property
    def per_contract(self) -> Fraction:
        return Fraction(self.f_d) + Fraction(self.f_fc)


@dataclass(frozen=True)
class SecurityParams:
    V_a: Fraction
    C_h: Fraction
    d_h: Fraction


# Top permissionless chains in market-cap order, transactions per second.
REFERENCE_TPS: dict[str, int] = {"btc": 7, "eth": 25, "ltc": 56, "bch": 61}

AC3WN_PHASES = 4


def latency_baseline(diam, delta: Number = 1) -> Fraction:
    """Sequential deploy then sequential redeem: 2·Δ·Diam."""
    if diam is UNBOUNDED or diam is None:
        raise UnboundedDiameter("baseline latency needs a finite diameter")
    return 2 * Fraction(delta) * diam


def latency_ac3wn(diam=None, delta: Number = 1) -> Fraction:
    """Four parallel phases regardless of the graph: 4·Δ."""
    return AC3WN_PHASES * Fraction(delta)


def total_fee(protocol: str, n_edges: int, fees: FeeSchedule) -> Fraction:
    if n_edges < 1:
        raise InvalidParams("need at least one edge")
    key = protocol.lower()
    if key == "baseline":
        return n_edges * fees.per_contract
    if key == "ac3wn":
        return (n_edges + 1) * fees.per_contract
    raise InvalidParams(f"no fee formula for {protocol!r}")


def fee_overhead(n_edges: int, fees: FeeSchedule = FeeSchedule()) -> Fraction:
    base = total_fee("baseline", n_edges, fees)
    return (total_fee("ac3wn", n_edges, fees) - base) / base


def min_throughput(tps: Iterable[Number]) -> Number:
    values = list(tps)
    if not values:
        raise EmptyList("no chains given")
    return min(values)


def min_confirmation_depth(p: SecurityParams) -> int:
    """Smallest integer d with d > V_a·d_h/C_h, never below 1."""
    V_a, C_h, d_h = Fraction(p.V_a), Fraction(p.C_h), Fraction(p.d_h)
    if C_h <= 0 or d_h <= 0 or V_a < 0:
        raise InvalidParams("need C_h > 0, d_h > 0 and V_a >= 0")
    threshold = V_a * d_h / C_h
    return max(1, math.floor(threshold) + 1)


@dataclass
class Report:
    measured_latency: Fraction | None
    predicted_latency: Fraction
    deviation: Fraction | None
    deploys: int
    calls: int
    predicted_deploys: int
    predicted_calls: int

    @property
    def mismatches(self) -> list[str]:
        out = []
        if self.deviation:
            out.append(f"latency deviates by {format_rational(self.deviation)} Δ")
        if self.deploys != self.predicted_deploys:
            out.append(f"deploys {self.deploys} != {self.predicted_deploys}")
        if self.calls != self.predicted_calls:
            out.append(f"calls {self.calls} != {self.predicted_calls}")
        return out

    def to_json(self) -> dict:
        f = lambda x: None if x is None else format_rational(x)  # noqa: E731
        return {
            "measured_latency": f(self.measured_latency),
            "predicted_latency": f(self.predicted_latency),
            "deviation": f(self.deviation),
            "deploys": self.deploys,
            "calls": self.calls,
            "predicted_deploys": self.predicted_deploys,
            "predicted_calls": self.predicted_calls,
            "mismatches": self.mismatches,
        }


def measured_vs_predicted(outcome, diam=None) -> Report:
    """Compare a run's latency (Δ units) and fee counts with the closed forms."""
    protocol = outcome.protocol.lower()
    n = outcome.n_edges
    if protocol == "baseline":
        predicted = latency_baseline(diam if diam is not None else outcome.diameter)
        p_deploys = p_calls = n
    elif protocol == "ac3wn":
        predicted = latency_ac3wn()
        p_deploys = p_calls = n + 1
    else:
        raise InvalidParams(f"no closed form for {outcome.protocol!r}")
    deploys = sum(c["deploys"] for c in outcome.fees.values())
    calls = sum(c["calls"] for c in outcome.fees.values())
    if outcome.verdict.kind != "AllRedeemed":
        # refund paths use a different number of calls; only latency is compared
        p_deploys, p_calls = deploys, calls
    measured = outcome.latency
    deviation = None if measured is None else measured - predicted
    return Report(measured, predicted, deviation, deploys, calls, p_deploys, p_calls)


def latency_rows(diams: Iterable[int], delta: Number = 1) -> list[tuple[int, Fraction, Fraction]]:
    return [(d, latency_baseline(d, delta), latency_ac3wn(d, delta)) for d in diams]


def latency_csv(diams: Iterable[int], delta: Number = 1) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["diam", "baseline_latency", "ac3wn_latency"])
    for d, b, a in latency_rows(diams, delta):
        w.writerow([d, format_rational(b), format_rational(a)])
    return buf.getvalue()


def throughput_csv(table: Mapping[str, Number] = REFERENCE_TPS) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["chain", "tps"])
    for chain, tps in table.items():
        w.writerow([chain, format_rational(tps)])
    return buf.getvalue()
