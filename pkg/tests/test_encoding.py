from __future__ import annotations

import hashlib
from dataclasses import dataclass
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from xchain.encoding import (
    KeyPair,
    digest,
    encode,
    format_rational,
    leading_zero_bits_ok,
    to_jsonable,
    verify_signature,
)


@dataclass(frozen=True)
class Point:
    x: int
    y: int


scalars = st.one_of(
    st.none(), st.booleans(), st.integers(min_value=-(2**70), max_value=2**70),
    st.text(max_size=20), st.binary(max_size=20),
)
values = st.recursive(
    scalars,
    lambda inner: st.one_of(st.lists(inner, max_size=4), st.dictionaries(st.text(max_size=5), inner, max_size=4)),
    max_leaves=12,
)


class TestEncode:
    @given(values)
    def test_deterministic(self, v):
        assert encode(v) == encode(v)

    @given(values, values)
    def test_injective_on_samples(self, a, b):
        if encode(a) == encode(b):
            assert to_jsonable(a) == to_jsonable(b)

    def test_type_tags_separate_lookalikes(self):
        assert encode("1") != encode(1)
        assert encode(b"ab") != encode("ab")
        assert encode(["ab"]) != encode(["a", "b"])

    def test_mapping_order_is_irrelevant(self):
        assert encode({"a": 1, "b": 2}) == encode({"b": 2, "a": 1})

    def test_dataclass_fields_in_order(self):
        assert encode(Point(1, 2)) != encode(Point(2, 1))
        assert digest(Point(1, 2)) == hashlib.sha256(encode(Point(1, 2))).hexdigest()

    def test_unsupported_type(self):
        with pytest.raises(TypeError):
            encode(object())


class TestPowBits:
    def test_zero_bits_always_ok(self):
        assert leading_zero_bits_ok("ff" * 32, 0)

    @given(st.integers(min_value=0, max_value=255), st.integers(min_value=0, max_value=8))
    def test_matches_integer_oracle(self, first_byte, bits):
        h = f"{first_byte:02x}" + "ff" * 31
        assert leading_zero_bits_ok(h, bits) == (first_byte >> (8 - bits) == 0 if bits else True)


class TestKeys:
    def test_same_label_same_key(self):
        assert KeyPair("alice").pk == KeyPair("alice").pk
        assert KeyPair("alice").pk != KeyPair("bob").pk

    def test_sign_verify(self):
        k = KeyPair("alice")
        sig = k.sign(b"msg")
        assert verify_signature(k.pk, b"msg", sig)
        assert not verify_signature(k.pk, b"other", sig)
        assert not verify_signature(KeyPair("bob").pk, b"msg", sig)

    def test_garbage_is_rejected_not_raised(self):
        assert not verify_signature("zz", b"m", b"sig")
        assert not verify_signature(KeyPair("a").pk, b"m", b"short")

    def test_repr_hides_secret(self):
        assert "pk=" in repr(KeyPair("alice"))


class TestRationals:
    @pytest.mark.parametrize("value, expected", [
        (4, 4), (Fraction(8, 2), 4), (Fraction(1, 2), "1/2"), (Fraction(-3, 6), "-1/2"),
    ])
    def test_format(self, value, expected):
        assert format_rational(value) == expected

    @given(st.fractions())
    def test_round_trip(self, q):
        assert Fraction(str(format_rational(q))) == q

    def test_jsonable(self):
        assert to_jsonable({"a": (Fraction(1, 3), b"\x01")}) == {"a": ["1/3", "01"]}
        assert to_jsonable(Point(1, 2)) == {"type": "Point", "x": 1, "y": 2}
