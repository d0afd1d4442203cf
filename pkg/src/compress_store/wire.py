"""Canonical binary encoding.

Rules, applied recursively to dataclasses in field-declaration order:

* integers are fixed-width big-endian (``U8``, ``U16``, ``U32``, ``U64``, ``I64``)
* ``F64`` is an IEEE-754 binary64, big-endian
* ``bool`` is one byte, 0 or 1
* ``bytes``, ``Digest`` and ``str`` (UTF-8) are a 4-byte big-endian length
  followed by the raw bytes
* ``tuple[T, ...]`` / ``list[T]`` are a 4-byte big-endian count followed by
  each element
* nested dataclasses are the concatenation of their fields, no framing

Field types are declared with the ``Annotated`` aliases below, so the
dataclass definition is the schema.
"""

from __future__ import annotations

import dataclasses
import struct
import typing
from functools import lru_cache
from typing import Annotated, Any, Callable

from .crypto import DIGEST_SIZE, Digest

U8 = Annotated[int, "u8"]
U16 = Annotated[int, "u16"]
U32 = Annotated[int, "u32"]
U64 = Annotated[int, "u64"]
I64 = Annotated[int, "i64"]
F64 = Annotated[float, "f64"]

MAX_LEN = 2**32 - 1

_INT_FORMATS = {
    "u8": (">B", 0, 2**8 - 1),
    "u16": (">H", 0, 2**16 - 1),
    "u32": (">I", 0, 2**32 - 1),
    "u64": (">Q", 0, 2**64 - 1),
    "i64": (">q", -(2**63), 2**63 - 1),
}


class EncodingError(ValueError):
    pass


class DecodingError(ValueError):
    pass


Encoder = Callable[[Any, bytearray], None]
Decoder = Callable[[memoryview, int], "tuple[Any, int]"]


def _len_prefix(n: int, out: bytearray) -> None:
    if n > MAX_LEN:
        raise EncodingError(f"length {n} exceeds 2^32-1")
    out += n.to_bytes(4, "big")


def _read_len(buf: memoryview, pos: int) -> tuple[int, int]:
    if pos + 4 > len(buf):
        raise DecodingError("truncated length prefix")
    return int.from_bytes(buf[pos : pos + 4], "big"), pos + 4


def _bytes_codec(digest: bool) -> tuple[Encoder, Decoder]:
    def enc(v: Any, out: bytearray) -> None:
        if not isinstance(v, (bytes, bytearray)):
            raise EncodingError(f"expected bytes, got {type(v).__name__}")
        _len_prefix(len(v), out)
        out += v

    def dec(buf: memoryview, pos: int) -> tuple[Any, int]:
        n, pos = _read_len(buf, pos)
        if pos + n > len(buf):
            raise DecodingError("truncated byte string")
        raw = bytes(buf[pos : pos + n])
        if digest:
            if n != DIGEST_SIZE:
                raise DecodingError("digest must be 32 bytes")
            raw = Digest(raw)
        return raw, pos + n

    return enc, dec


def _str_codec() -> tuple[Encoder, Decoder]:
    benc, bdec = _bytes_codec(False)

    def enc(v: Any, out: bytearray) -> None:
        if not isinstance(v, str):
            raise EncodingError(f"expected str, got {type(v).__name__}")
        benc(v.encode("utf-8"), out)

    def dec(buf: memoryview, pos: int) -> tuple[Any, int]:
        raw, pos = bdec(buf, pos)
        try:
            return raw.decode("utf-8"), pos
        except UnicodeDecodeError as exc:
            raise DecodingError(str(exc)) from exc

    return enc, dec


def _int_codec(kind: str) -> tuple[Encoder, Decoder]:
    fmt, lo, hi = _INT_FORMATS[kind]
    st = struct.Struct(fmt)

    def enc(v: Any, out: bytearray) -> None:
        if isinstance(v, bool) or not isinstance(v, int):
            raise EncodingError(f"expected int, got {type(v).__name__}")
        if not lo <= v <= hi:
            raise EncodingError(f"{v} out of range for {kind}")
        out += st.pack(v)

    def dec(buf: memoryview, pos: int) -> tuple[Any, int]:
        if pos + st.size > len(buf):
            raise DecodingError(f"truncated {kind}")
        return st.unpack_from(buf, pos)[0], pos + st.size

    return enc, dec


def _f64_codec() -> tuple[Encoder, Decoder]:
    st = struct.Struct(">d")

    def enc(v: Any, out: bytearray) -> None:
        out += st.pack(float(v))

    def dec(buf: memoryview, pos: int) -> tuple[Any, int]:
        if pos + 8 > len(buf):
            raise DecodingError("truncated f64")
        return st.unpack_from(buf, pos)[0], pos + 8

    return enc, dec


def _bool_codec() -> tuple[Encoder, Decoder]:
    def enc(v: Any, out: bytearray) -> None:
        out.append(1 if v else 0)

    def dec(buf: memoryview, pos: int) -> tuple[Any, int]:
        if pos >= len(buf):
            raise DecodingError("truncated bool")
        b = buf[pos]
        if b > 1:
            raise DecodingError("bool byte must be 0 or 1")
        return bool(b), pos + 1

    return enc, dec


def _seq_codec(item: tuple[Encoder, Decoder]) -> tuple[Encoder, Decoder]:
    ienc, idec = item

    def enc(v: Any, out: bytearray) -> None:
        _len_prefix(len(v), out)
        for x in v:
            ienc(x, out)

    def dec(buf: memoryview, pos: int) -> tuple[Any, int]:
        n, pos = _read_len(buf, pos)
        items = []
        for _ in range(n):
            x, pos = idec(buf, pos)
            items.append(x)
        return tuple(items), pos

    return enc, dec


def _codec_for(tp: Any) -> tuple[Encoder, Decoder]:
    origin = typing.get_origin(tp)
    if origin is Annotated:
        base, tag = typing.get_args(tp)[:2]
        if tag == "f64":
            return _f64_codec()
        if tag in _INT_FORMATS:
            return _int_codec(tag)
        raise TypeError(f"unknown wire tag {tag!r}")
    if origin in (tuple, list):
        args = typing.get_args(tp)
        return _seq_codec(_codec_for(args[0]))
    if tp is Digest:
        return _bytes_codec(True)
    if tp is bytes:
        return _bytes_codec(False)
    if tp is str:
        return _str_codec()
    if tp is bool:
        return _bool_codec()
    if dataclasses.is_dataclass(tp):
        return _dataclass_codec(tp)
    raise TypeError(f"type {tp!r} has no canonical encoding")


@lru_cache(maxsize=None)
def _dataclass_codec(cls: type) -> tuple[Encoder, Decoder]:
    hints = typing.get_type_hints(cls, include_extras=True)
    fields = [
        (f.name, _codec_for(hints[f.name]))
        for f in dataclasses.fields(cls)
        if f.metadata.get("wire", True)
    ]

    def enc(v: Any, out: bytearray) -> None:
        for name, (fenc, _) in fields:
            fenc(getattr(v, name), out)

    def dec(buf: memoryview, pos: int) -> tuple[Any, int]:
        kwargs = {}
        for name, (_, fdec) in fields:
            kwargs[name], pos = fdec(buf, pos)
        return cls(**kwargs), pos

    return enc, dec


def encode(value: Any) -> bytes:
    """Canonical bytes for a wire dataclass (or a tuple/list of them)."""
    out = bytearray()
    if isinstance(value, (list, tuple)):
        _len_prefix(len(value), out)
        for v in value:
            _dataclass_codec(type(v))[0](v, out)
    else:
        _dataclass_codec(type(value))[0](value, out)
    return bytes(out)


def decode(cls: type, data: bytes) -> Any:
    """Inverse of encode() for a single dataclass; trailing bytes are an error."""
    value, pos = _dataclass_codec(cls)[1](memoryview(data), 0)
    if pos != len(data):
        raise DecodingError(f"{len(data) - pos} trailing bytes")
    return value


def decode_list(cls: type, data: bytes) -> tuple:
    value, pos = _seq_codec(_dataclass_codec(cls))[1](memoryview(data), 0)
    if pos != len(data):
        raise DecodingError(f"{len(data) - pos} trailing bytes")
    return value


def encode_bytes_list(items: list[bytes] | tuple[bytes, ...]) -> bytes:
    out = bytearray()
    _seq_codec(_bytes_codec(False))[0](items, out)
    return bytes(out)


def decode_bytes_list(data: bytes) -> tuple[bytes, ...]:
    value, pos = _seq_codec(_bytes_codec(False))[1](memoryview(data), 0)
    if pos != len(data):
        raise DecodingError(f"{len(data) - pos} trailing bytes")
    return value
