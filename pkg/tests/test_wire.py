from __future__ import annotations

from dataclasses import dataclass

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compress_store.crypto import Digest
from compress_store.ledger import Block, SubBlock
from compress_store.wire import (
    F64,
    I64,
    U8,
    U16,
    U32,
    U64,
    DecodingError,
    EncodingError,
    _len_prefix,
    decode,
    decode_bytes_list,
    decode_list,
    encode,
    encode_bytes_list,
)


@dataclass(frozen=True)
class Inner:
    tag: str
    raw: bytes


@dataclass(frozen=True)
class Sample:
    a: U8
    b: U16
    c: U32
    d: U64
    e: I64
    f: F64
    ok: bool
    digest: Digest
    items: tuple[Inner, ...]
    numbers: tuple[U32, ...]


@dataclass(frozen=True)
class OnlyBytes:
    raw: bytes


def test_empty_bytes_is_four_zero_bytes():
    assert encode(OnlyBytes(b"")) == bytes(4)
    assert encode_bytes_list([]) == bytes(4)


def test_two_byte_strings_layout():
    assert encode_bytes_list([b"\xaa", b"\xbb"]).hex() == "00000002" "00000001" "aa" "00000001" "bb"
    assert decode_bytes_list(bytes.fromhex("0000000200000001aa00000001bb")) == (b"\xaa", b"\xbb")


def test_integer_and_float_layout():
    s = Sample(1, 2, 3, 4, -1, 1.5, True, Digest(bytes(32)), (Inner("x", b"\x01"),), (7,))
    raw = encode(s)
    assert raw[:1] == b"\x01"
    assert raw[1:3] == b"\x00\x02"
    assert raw[3:7] == b"\x00\x00\x00\x03"
    assert raw[7:15] == (4).to_bytes(8, "big")
    assert raw[15:23] == b"\xff" * 8
    assert raw[23:31] == bytes.fromhex("3ff8000000000000")
    assert raw[31:32] == b"\x01"
    assert raw[32:36] == b"\x00\x00\x00\x20"
    assert decode(Sample, raw) == s


samples = st.builds(
    Sample,
    a=st.integers(0, 255),
    b=st.integers(0, 2**16 - 1),
    c=st.integers(0, 2**32 - 1),
    d=st.integers(0, 2**64 - 1),
    e=st.integers(-(2**63), 2**63 - 1),
    f=st.floats(allow_nan=False),
    ok=st.booleans(),
    digest=st.binary(min_size=32, max_size=32).map(Digest),
    items=st.lists(st.builds(Inner, tag=st.text(max_size=20), raw=st.binary(max_size=50)), max_size=5).map(tuple),
    numbers=st.lists(st.integers(0, 2**32 - 1), max_size=8).map(tuple),
)


@settings(max_examples=300, deadline=None)
@given(samples)
def test_round_trip_property(s):
    raw = encode(s)
    assert decode(Sample, raw) == s
    assert encode(decode(Sample, raw)) == raw


@settings(max_examples=100, deadline=None)
@given(st.lists(samples, max_size=4))
def test_list_round_trip(items):
    assert decode_list(Sample, encode(items)) == tuple(items)


def test_structurally_equal_values_encode_identically():
    a = Inner("same", b"bytes")
    b = Inner("same", bytes(bytearray(b"bytes")))
    assert a is not b and encode(a) == encode(b)


def test_range_errors():
    with pytest.raises(EncodingError):
        encode(Sample(256, 0, 0, 0, 0, 0.0, False, Digest(bytes(32)), (), ()))
    with pytest.raises(EncodingError):
        encode(Sample(0, 0, 0, -1, 0, 0.0, False, Digest(bytes(32)), (), ()))
    with pytest.raises(EncodingError):
        _len_prefix(2**32, bytearray())


def test_decoding_errors():
    raw = encode(OnlyBytes(b"abc"))
    with pytest.raises(DecodingError):
        decode(OnlyBytes, raw + b"\x00")
    with pytest.raises(DecodingError):
        decode(OnlyBytes, raw[:-1])
    with pytest.raises(DecodingError):
        decode(OnlyBytes, b"\x00\x00")


def test_real_block_round_trip(mined):
    block = mined.block
    raw = encode(block)
    back = decode(Block, raw)
    assert back == block
    assert back.hash == block.hash
    for sb in block.subblocks:
        assert decode(SubBlock, encode(sb)) == sb
