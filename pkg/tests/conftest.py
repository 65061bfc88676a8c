from __future__ import annotations

import random

import pytest
from hypothesis import HealthCheck, settings

from xchain.chain_sim import ChainParams, SimChain
from xchain.protocols import Scenario
from xchain.swap_graph import Participant, SwapEdge, SwapGraph

settings.register_profile(
    "default", deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("default")

# criterion lines collected by test_acceptance, echoed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def fig4_graph() -> SwapGraph:
    return SwapGraph(
        ("Alice", "Bob"),
        (SwapEdge("Alice", "Bob", 5, "btc", "bitcoin"), SwapEdge("Bob", "Alice", 7, "eth", "ethereum")),
        1,
    )


def fig4_scenario(protocol: str, d: int = 6, bi: int = 1, difficulty: int = 4, eps: float = 0.0,
                  faults=None, adversary=None, delta: int | None = None, seeds=(0,), horizon=None) -> Scenario:
    chains = tuple(
        ChainParams(cid, bi, eps, difficulty, d, unit=unit) for cid, unit in (("bitcoin", "btc"), ("ethereum", "eth"))
    )
    witness = ChainParams("witness", bi, eps, difficulty, d, unit="wit") if protocol == "AC3WN" else None
    return Scenario(fig4_graph(), protocol, chains, d, delta or bi * (d + 1), witness,
                    faults=faults or {}, adversary=adversary, seeds=tuple(seeds), horizon_ticks=horizon)


@pytest.fixture
def graph():
    return fig4_graph()


@pytest.fixture
def alice():
    return Participant.named("Alice")


@pytest.fixture
def bob():
    return Participant.named("Bob")


@pytest.fixture
def rng():
    return random.Random(1234)


@pytest.fixture
def chain():
    """A fork-free chain at low difficulty with addresses "a" and "b" funded."""
    return SimChain(ChainParams("bitcoin", pow_difficulty=4, unit="btc"), {"a": 100, "b": 50})
