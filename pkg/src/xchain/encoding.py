"""Canonical serialization, digests and participant keys.

Every digest in the simulator (block headers, transaction ids, graph
digests, contract ids) is SHA-256 over the canonical byte encoding defined
here: a one-byte type tag followed by length-prefixed big-endian fields,
with dataclass fields emitted in declaration order and mapping entries
sorted by their encoded key.
"""

from __future__ import annotations

import dataclasses
import enum
import hashlib
import struct
from fractions import Fraction
from typing import Any

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

ZERO_DIGEST = "00" * 32

_LEN = struct.Struct(">I")


def _frame(tag: bytes, body: bytes) -> bytes:
    return tag + _LEN.pack(len(body)) + body


def encode_int(value: int) -> bytes:
    width = max(1, (value.bit_length() + 8) // 8)
    return _frame(b"I", value.to_bytes(width, "big", signed=True))


def encode(obj: Any) -> bytes:
    """Return the canonical encoding of ``obj``."""
    if obj is None:
        return b"N"
    if isinstance(obj, bool):
        return b"T" if obj else b"F"
    if isinstance(obj, enum.Enum):
        return _frame(b"E", encode(obj.value))
    if isinstance(obj, int):
        return encode_int(obj)
    if isinstance(obj, Fraction):
        return _frame(b"Q", encode_int(obj.numerator) + encode_int(obj.denominator))
    if isinstance(obj, str):
        return _frame(b"S", obj.encode("utf-8"))
    if isinstance(obj, (bytes, bytearray)):
        return _frame(b"Y", bytes(obj))
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        name = type(obj).__name__.encode("ascii")
        body = _frame(b"S", name) + b"".join(
            encode(getattr(obj, f.name)) for f in dataclasses.fields(obj)
        )
        return _frame(b"C", body)
    if isinstance(obj, (list, tuple)):
        return _frame(b"L", _LEN.pack(len(obj)) + b"".join(encode(x) for x in obj))
    if isinstance(obj, (set, frozenset)):
        items = sorted(encode(x) for x in obj)
        return _frame(b"L", _LEN.pack(len(items)) + b"".join(items))
    if isinstance(obj, dict):
        pairs = sorted((encode(k), encode(v)) for k, v in obj.items())
        return _frame(b"D", _LEN.pack(len(pairs)) + b"".join(k + v for k, v in pairs))
    raise TypeError(f"cannot canonically encode {type(obj).__name__}")


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def digest(obj: Any) -> str:
    """Hex SHA-256 of the canonical encoding."""
    return hashlib.sha256(encode(obj)).hexdigest()


def leading_zero_bits_ok(hex_digest: str, bits: int) -> bool:
    """True iff the first ``bits`` bits of the digest are zero."""
    if bits <= 0:
        return True
    return int(hex_digest, 16) >> (256 - bits) == 0


def to_jsonable(obj: Any) -> Any:
    """Plain-JSON view of simulator values (hex bytes, "p/q" rationals)."""
    if obj is None or isinstance(obj, (bool, int, str)):
        return obj
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, Fraction):
        return format_rational(obj)
    if isinstance(obj, (bytes, bytearray)):
        return bytes(obj).hex()
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        out = {"type": type(obj).__name__}
        for f in dataclasses.fields(obj):
            out[f.name] = to_jsonable(getattr(obj, f.name))
        return out
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(x) for x in obj]
    if isinstance(obj, (set, frozenset)):
        return sorted(to_jsonable(x) for x in obj)
    if isinstance(obj, dict):
        return {str(to_jsonable(k)): to_jsonable(v) for k, v in obj.items()}
    raise TypeError(f"cannot convert {type(obj).__name__} to JSON")


def format_rational(value: Fraction | int) -> int | str:
    """Exact integers stay integers; everything else becomes "p/q"."""
    value = Fraction(value)
    if value.denominator == 1:
        return value.numerator
    return f"{value.numerator}/{value.denominator}"


class KeyPair:
    """Deterministic Ed25519 key pair derived from a label.

    ``pk`` is the hex public key used as an address on every simulated
    chain. The private half never leaves the object.
    """

    __slots__ = ("label", "_sk", "pk")

    def __init__(self, label: str):
        self.label = label
        seed = hashlib.sha256(b"xchain-key:" + label.encode("utf-8")).digest()
        self._sk = Ed25519PrivateKey.from_private_bytes(seed)
        raw = self._sk.public_key().public_bytes(
            serialization.Encoding.Raw, serialization.PublicFormat.Raw
        )
        self.pk = raw.hex()

    def sign(self, message: bytes) -> bytes:
        return self._sk.sign(message)

    def __repr__(self) -> str:
        return f"KeyPair({self.label!r}, pk={self.pk[:12]}...)"


def verify_signature(pk: str, message: bytes, signature: bytes) -> bool:
    try:
        key = Ed25519PublicKey.from_public_bytes(bytes.fromhex(pk))
        key.verify(bytes(signature), message)
    except (InvalidSignature, ValueError, TypeError):
        return False
    return True
