"""Runs every acceptance criterion at its stated tolerance and budget.

Each criterion prints one PASS/FAIL line (shown with ``-s`` and repeated
in the terminal summary). Criterion 10 reruns 1 to 9 and compares their
rendered outputs byte for byte.
"""

from __future__ import annotations

import pytest

import conftest
from xchain.acceptance import CRITERIA, determinism, run_criterion

_results: dict = {}


def result(number):
    if number not in _results:
        _results[number] = run_criterion(number)
        line = _results[number].line()
        conftest.ACCEPTANCE_LINES.append(line)
        print(line)
    return _results[number]


@pytest.mark.slow
@pytest.mark.parametrize("number", sorted(CRITERIA), ids=lambda n: f"criterion_{n}")
def test_criterion(number):
    r = result(number)
    assert r.passed, r.line()


@pytest.mark.slow
def test_criterion_10_determinism():
    first = {n: result(n) for n in sorted(CRITERIA)}
    r = determinism(first)
    conftest.ACCEPTANCE_LINES.append(r.line())
    print(r.line())
    assert r.passed, r.line()
