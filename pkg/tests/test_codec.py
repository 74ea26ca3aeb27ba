import enum
import struct
from dataclasses import dataclass

import pytest
from hypothesis import given, strategies as st

from medledger import codec
from medledger.codec import DecodeError
from medledger.ledger import Block, Transaction
from medledger.state import AccessEvent, Decision, LedgerState


class Color(enum.IntEnum):
    RED = 1
    BLUE = 2


@dataclass(frozen=True)
class Inner:
    tag: str
    blob: bytes


@dataclass(frozen=True)
class Sample:
    n: int
    flag: bool
    color: Color
    items: tuple[Inner, ...]
    table: dict[str, int]
    maybe: int | None


def be64(n):
    return struct.pack(">Q", n)


def be32(n):
    return struct.pack(">I", n)


def test_empty_list_is_four_zero_bytes():
    assert codec.encode((), tuple[int, ...]) == b"\x00\x00\x00\x00"
    assert codec.encode([], list[str]) == bytes(4)


def test_scalar_layouts():
    assert codec.encode(1) == be64(1)
    assert codec.encode(True) == b"\x01"
    assert codec.encode(b"ab") == be32(2) + b"ab"
    assert codec.encode("é") == be32(2) + "é".encode()
    assert codec.encode(Color.BLUE) == b"\x02"
    assert codec.encode(None, int | None) == b"\x00"
    assert codec.encode(5, int | None) == b"\x01" + be64(5)


def test_dataclass_layout_by_hand():
    s = Sample(7, False, Color.RED, (Inner("x", b"\x00"),), {"b": 2, "a": 1}, None)
    expected = (
        be64(7) + b"\x00" + b"\x01"
        + be32(1) + be32(1) + b"x" + be32(1) + b"\x00"
        + be32(2) + be32(1) + b"a" + be64(1) + be32(1) + b"b" + be64(2)
        + b"\x00"
    )
    assert codec.encode(s) == expected
    assert codec.decode(Sample, expected) == s


def test_map_order_is_insertion_independent():
    a = Sample(0, True, Color.RED, (), {"x": 1, "y": 2, "z": 3}, 4)
    b = Sample(0, True, Color.RED, (), {"z": 3, "x": 1, "y": 2}, 4)
    assert codec.encode(a) == codec.encode(b)


@pytest.mark.parametrize(
    "tp,data",
    [
        (int, be64(1)[:-1]),
        (int, be64(1) + b"\x00"),
        (bool, b"\x02"),
        (bytes, be32(5) + b"abc"),
        (str, be32(1) + b"\xff"),
        (Color, b"\x09"),
        (int | None, b"\x02"),
        (dict[str, int], be32(2) + be32(1) + b"b" + be64(1) + be32(1) + b"a" + be64(1)),
        (dict[str, int], be32(2) + be32(1) + b"a" + be64(1) + be32(1) + b"a" + be64(1)),
    ],
)
def test_strict_decoding(tp, data):
    with pytest.raises(DecodeError):
        codec.decode(tp, data)


def test_rejects_unencodable_values():
    with pytest.raises(TypeError):
        codec.encode(1.5, int)
    with pytest.raises((TypeError, struct.error)):
        codec.encode(-1, int)
    with pytest.raises(TypeError):
        codec.encode(True, int)


inner_st = st.builds(Inner, st.text(max_size=8), st.binary(max_size=8))
sample_st = st.builds(
    Sample,
    st.integers(min_value=0, max_value=2**64 - 1),
    st.booleans(),
    st.sampled_from(Color),
    st.lists(inner_st, max_size=4).map(tuple),
    st.dictionaries(st.text(max_size=6), st.integers(min_value=0, max_value=2**64 - 1), max_size=4),
    st.none() | st.integers(min_value=0, max_value=2**64 - 1),
)


@given(sample_st)
def test_round_trip(s):
    assert codec.decode(Sample, codec.encode(s)) == s


@given(sample_st, sample_st)
def test_injective(x, y):
    assert (codec.encode(x) == codec.encode(y)) == (x == y)


@given(sample_st, st.data())
def test_single_byte_change_never_decodes_to_same_value(s, data):
    raw = bytearray(codec.encode(s))
    i = data.draw(st.integers(min_value=0, max_value=len(raw) - 1))
    raw[i] ^= data.draw(st.integers(min_value=1, max_value=255))
    try:
        other = codec.decode(Sample, bytes(raw))
    except DecodeError:
        return
    assert other != s


def test_ledger_types_round_trip(fixture_chain_20):
    for blk in fixture_chain_20.blocks:
        assert Block.from_bytes(blk.to_bytes()) == blk
        for tx in blk.txs:
            assert codec.decode(Transaction, codec.encode(tx)) == tx
    st_ = fixture_chain_20.state
    assert codec.decode(LedgerState, codec.encode(st_)) == st_
    for ev in st_.audit_log:
        assert codec.decode(AccessEvent, codec.encode(ev)) == ev
        assert ev.decision in (Decision.GRANTED, Decision.DENIED)
