"""Deterministic multi-chain simulator for atomic cross-chain swap protocols."""

from . import contracts as _contracts  # noqa: F401  (populates the contract-code registry)

__version__ = "0.1.0"
