"""Swap graphs, graph multisignatures and structural classification."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .encoding import KeyPair, digest, encode, verify_signature


class GraphError(ValueError):
    pass


class EmptyGraph(GraphError):
    pass


class MissingParticipant(GraphError):
    pass


class _Unbounded:
    _inst = None

    def __new__(cls):
        if cls._inst is None:
            cls._inst = super().__new__(cls)
        return cls._inst

    def __repr__(self) -> str:
        return "UNBOUNDED"


UNBOUNDED = _Unbounded()


@dataclass(frozen=True, order=True)
class SwapEdge:
    source: str
    recipient: str
    amount: int
    unit: str
    chain_id: str

    def __post_init__(self):
        if self.source == self.recipient:
            raise GraphError(f"self-loop on {self.source!r}")
        if self.amount <= 0:
            raise GraphError("edge amount must be positive")

    @property
    def sort_key(self):
        return (self.source, self.recipient, self.chain_id, self.amount, self.unit)

    def label(self) -> str:
        return f"{self.source}->{self.recipient}@{self.chain_id}"


@dataclass(frozen=True)
class SwapGraph:
    vertices: tuple[str, ...]
    edges: tuple[SwapEdge, ...]
    t: int = 0

    def __post_init__(self):
        object.__setattr__(self, "vertices", tuple(sorted(set(self.vertices))))
        object.__setattr__(self, "edges", tuple(sorted(self.edges, key=lambda e: e.sort_key)))
        vs = set(self.vertices)
        for e in self.edges:
            if e.source not in vs or e.recipient not in vs:
                raise GraphError(f"edge {e.label()} has an endpoint outside the vertex set")

    @property
    def digest(self) -> str:
        return digest(self)

    def successors(self, u: str) -> list[str]:
        return sorted({e.recipient for e in self.edges if e.source == u})

    def incoming(self, v: str) -> list[SwapEdge]:
        return [e for e in self.edges if e.recipient == v]

    def outgoing(self, u: str) -> list[SwapEdge]:
        return [e for e in self.edges if e.source == u]

    def chains(self) -> list[str]:
        return sorted({e.chain_id for e in self.edges})

    def without(self, v: str) -> "SwapGraph":
        return SwapGraph(
            tuple(x for x in self.vertices if x != v),
            tuple(e for e in self.edges if v not in (e.source, e.recipient)),
            self.t,
        )

    @classmethod
    def from_json(cls, obj: Mapping) -> "SwapGraph":
        edges = tuple(
            SwapEdge(e["from"], e["to"], int(e["amount"]), e.get("unit", "coin"), e["chain"])
            for e in obj["edges"]
        )
        return cls(tuple(obj["vertices"]), edges, int(obj.get("t", 0)))

    def to_json(self) -> dict:
        return {
            "vertices": list(self.vertices),
            "edges": [
                {"from": e.source, "to": e.recipient, "amount": e.amount, "unit": e.unit, "chain": e.chain_id}
                for e in self.edges
            ],
            "t": self.t,
        }


@dataclass(frozen=True)
class Behavior:
    """How a participant deviates from the protocol (if at all)."""

    kind: str = "honest"
    step: str | None = None
    recover_after: int | None = None
    group: str | None = None

    KINDS = ("honest", "crash_at", "decline_publish", "coalition")
    STEPS = ("deploy", "authorize", "redeem", "refund")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown behavior {self.kind!r}")
        if self.kind == "crash_at" and self.step not in self.STEPS:
            raise ValueError(f"crash_at needs a step in {self.STEPS}")
        if self.recover_after is not None and self.recover_after < 0:
            raise ValueError("recover_after must be non-negative")

    @classmethod
    def parse(cls, obj) -> "Behavior":
        if obj is None or obj == "honest":
            return cls()
        if isinstance(obj, str):
            if obj == "decline_publish":
                return cls("decline_publish")
            raise ValueError(f"unknown behavior {obj!r}")
        kind = obj["kind"]
        return cls(kind, obj.get("step"), obj.get("recover_after"), obj.get("group"))

    def crashed(self, step: str, windows_waited: int) -> bool:
        """True while this behavior suppresses ``step``."""
        if self.kind == "decline_publish":
            return step == "deploy"
        if self.kind != "crash_at" or step != self.step:
            return False
        return self.recover_after is None or windows_waited < self.recover_after


@dataclass
class Participant:
    id: str
    keys: KeyPair
    behavior: Behavior = field(default_factory=Behavior)

    @property
    def pk(self) -> str:
        return self.keys.pk

    @classmethod
    def named(cls, pid: str, behavior: Behavior | None = None, key_label: str | None = None) -> "Participant":
        return cls(pid, KeyPair(key_label or f"participant:{pid}"), behavior or Behavior())


@dataclass(frozen=True)
class Multisignature:
    graph_digest: str
    sigs: tuple[tuple[str, bytes], ...]

    @property
    def signers(self) -> tuple[str, ...]:
        return tuple(pk for pk, _ in self.sigs)


def multisign(graph: SwapGraph, participants: Sequence[Participant]) -> Multisignature:
    """Nested signatures: the first signer signs the graph, each later one the previous signature."""
    ids = [p.id for p in participants]
    missing = sorted(set(graph.vertices) - set(ids))
    if missing:
        raise MissingParticipant(", ".join(missing))
    message = encode(graph)
    sigs = []
    for p in participants:
        if p.id not in graph.vertices:
            continue
        sig = p.keys.sign(message)
        sigs.append((p.pk, sig))
        message = sig
    return Multisignature(graph.digest, tuple(sigs))


def verify_multisig(ms: Multisignature, graph: SwapGraph, pks: Iterable[str]) -> bool:
    pks = list(pks)
    if ms.graph_digest != graph.digest:
        return False
    if len(ms.sigs) != len(pks) or set(ms.signers) != set(pks) or len(set(pks)) != len(pks):
        return False
    message = encode(graph)
    for pk, sig in ms.sigs:
        if not verify_signature(pk, message, sig):
            return False
        message = sig
    return True


def _bfs(graph: SwapGraph, start: str) -> dict[str, int]:
    """Shortest edge counts from ``start``; the entry for ``start`` is its shortest cycle."""
    succ = {v: graph.successors(v) for v in graph.vertices}
    dist: dict[str, int] = {}
    q = deque((w, 1) for w in succ[start])
    seen = set()
    while q:
        v, d = q.popleft()
        if v in seen:
            continue
        seen.add(v)
        dist[v] = d
        for w in succ[v]:
            if w not in seen:
                q.append((w, d + 1))
    return dist


def diameter(graph: SwapGraph):
    """Max over ordered pairs (including u = u) of shortest path length, or UNBOUNDED."""
    if not graph.vertices:
        raise EmptyGraph("graph has no vertices")
    if len(graph.vertices) == 1 and not graph.edges:
        return 0
    best = 0
    for u in graph.vertices:
        dist = _bfs(graph, u)
        if len(dist) != len(graph.vertices):
            return UNBOUNDED
        best = max(best, max(dist.values()))
    return best


def has_cycle(graph: SwapGraph) -> bool:
    indeg = {v: 0 for v in graph.vertices}
    for e in graph.edges:
        indeg[e.recipient] += 1
    succ = {v: [e.recipient for e in graph.edges if e.source == v] for v in graph.vertices}
    ready = [v for v, k in indeg.items() if k == 0]
    removed = 0
    while ready:
        v = ready.pop()
        removed += 1
        for w in succ[v]:
            indeg[w] -= 1
            if indeg[w] == 0:
                ready.append(w)
    return removed != len(graph.vertices)


def undirected_components(graph: SwapGraph) -> list[set[str]]:
    adj = {v: set() for v in graph.vertices}
    for e in graph.edges:
        adj[e.source].add(e.recipient)
        adj[e.recipient].add(e.source)
    comps, seen = [], set()
    for v in graph.vertices:
        if v in seen:
            continue
        comp, stack = set(), [v]
        while stack:
            x = stack.pop()
            if x in comp:
                continue
            comp.add(x)
            stack.extend(adj[x] - comp)
        seen |= comp
        comps.append(comp)
    return comps


@dataclass(frozen=True)
class Classification:
    kind: str  # leader_acyclic | cyclic_all_leaders | disconnected
    leaders: tuple[str, ...] = ()


def classify(graph: SwapGraph) -> Classification:
    if not graph.vertices:
        raise EmptyGraph("graph has no vertices")
    if len(undirected_components(graph)) > 1:
        return Classification("disconnected")
    leaders = tuple(v for v in graph.vertices if not has_cycle(graph.without(v)))
    if not leaders:
        return Classification("cyclic_all_leaders")
    return Classification("leader_acyclic", leaders)


def longest_path_to(graph: SwapGraph, source: str, target: str) -> int:
    """Longest simple path length from ``source`` to ``target`` with edges out of ``target`` cut.

    With ``target`` a leader the remaining graph is acyclic, so this is the
    classic DAG longest path. Returns -1 if ``target`` is unreachable.
    """
    if source == target:
        return 0
    succ = {v: [e.recipient for e in graph.edges if e.source == v and v != target] for v in graph.vertices}
    memo: dict[str, int] = {}

    def walk(v: str, stack: frozenset) -> int:
        if v == target:
            return 0
        if v in memo:
            return memo[v]
        best = -1
        for w in succ[v]:
            if w in stack:
                continue
            sub = walk(w, stack | {w})
            if sub >= 0:
                best = max(best, sub + 1)
        memo[v] = best
        return best

    return walk(source, frozenset({source}))

