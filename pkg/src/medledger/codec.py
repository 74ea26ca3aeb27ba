"""Canonical binary serialization for ledger values.

Layout rules:

* ``int``   -> 8-byte big-endian unsigned
* ``bool``  -> one byte, 0 or 1
* ``bytes`` -> 4-byte big-endian length, then the bytes
* ``str``   -> UTF-8, encoded like ``bytes``
* ``IntEnum`` -> one byte
* ``tuple[T, ...]`` / ``list[T]`` -> 4-byte count, then items
* ``dict[K, V]`` -> 4-byte count, then (key, value) pairs sorted by encoded key
* ``Optional[T]`` -> one tag byte (0 absent, 1 present), then the value
* dataclasses -> fields in declaration order

Decoding is strict: every accepted byte string re-encodes to itself, so the
encoding is injective per type and a single changed byte can never decode
to an equal value.
"""

from __future__ import annotations

import dataclasses
import enum
import struct
import types
import typing
from typing import Any, Callable, TypeVar

T = TypeVar("T")

_U32 = struct.Struct(">I")
_U64 = struct.Struct(">Q")

_Encoder = Callable[[Any, list], None]
_Decoder = Callable[[memoryview, int], "tuple[Any, int]"]

_encoders: dict[Any, _Encoder] = {}
_decoders: dict[Any, _Decoder] = {}


class DecodeError(ValueError):
    """Raised when bytes are not the canonical encoding of the requested type."""


def encode(value: Any, tp: Any = None) -> bytes:
    """Serialize ``value``; ``tp`` defaults to ``type(value)``."""
    out: list = []
    _encoder_for(type(value) if tp is None else tp)(value, out)
    return b"".join(out)


def decode(tp: type[T], data: bytes) -> T:
    view = memoryview(bytes(data))
    value, pos = _decoder_for(tp)(view, 0)
    if pos != len(view):
        raise DecodeError(f"{len(view) - pos} trailing bytes after {tp!r}")
    return value


def u32(n: int) -> bytes:
    return _U32.pack(n)


# -- encoder construction ---------------------------------------------------


def _optional_arg(tp: Any) -> Any:
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if len(args) == 1 and len(typing.get_args(tp)) == 2:
            return args[0]
        raise TypeError(f"unsupported union {tp!r}")
    return None


def _encoder_for(tp: Any) -> _Encoder:
    try:
        return _encoders[tp]
    except KeyError:
        pass
    enc = _build_encoder(tp)
    _encoders[tp] = enc
    return enc


def _build_encoder(tp: Any) -> _Encoder:
    if tp is bool:
        def enc_bool(v, out):
            if not isinstance(v, bool):
                raise TypeError(f"expected bool, got {type(v).__name__}")
            out.append(b"\x01" if v else b"\x00")
        return enc_bool
    if isinstance(tp, type) and issubclass(tp, enum.IntEnum):
        def enc_enum(v, out):
            out.append(bytes((tp(v).value,)))
        return enc_enum
    if tp is int:
        def enc_int(v, out):
            if isinstance(v, bool) or not isinstance(v, int):
                raise TypeError(f"expected int, got {type(v).__name__}")
            out.append(_U64.pack(v))
        return enc_int
    if tp is bytes:
        def enc_bytes(v, out):
            if not isinstance(v, (bytes, bytearray)):
                raise TypeError(f"expected bytes, got {type(v).__name__}")
            out.append(_U32.pack(len(v)))
            out.append(bytes(v))
        return enc_bytes
    if tp is str:
        def enc_str(v, out):
            if not isinstance(v, str):
                raise TypeError(f"expected str, got {type(v).__name__}")
            b = v.encode("utf-8")
            out.append(_U32.pack(len(b)))
            out.append(b)
        return enc_str
    inner = _optional_arg(tp)
    if inner is not None:
        inner_enc = _encoder_for(inner)

        def enc_opt(v, out):
            if v is None:
                out.append(b"\x00")
            else:
                out.append(b"\x01")
                inner_enc(v, out)
        return enc_opt
    origin = typing.get_origin(tp)
    if origin in (tuple, list):
        args = typing.get_args(tp)
        if origin is tuple and not (len(args) == 2 and args[1] is Ellipsis):
            raise TypeError(f"only homogeneous tuples are supported: {tp!r}")
        item_enc = _encoder_for(args[0])

        def enc_seq(v, out):
            out.append(_U32.pack(len(v)))
            for item in v:
                item_enc(item, out)
        return enc_seq
    if origin is dict:
        k_tp, v_tp = typing.get_args(tp)
        k_enc, v_enc = _encoder_for(k_tp), _encoder_for(v_tp)

        def enc_map(v, out):
            pairs = []
            for key, val in v.items():
                kb: list = []
                k_enc(key, kb)
                pairs.append((b"".join(kb), val))
            pairs.sort(key=lambda kv: kv[0])
            out.append(_U32.pack(len(pairs)))
            for kb, val in pairs:
                out.append(kb)
                v_enc(val, out)
        return enc_map
    if dataclasses.is_dataclass(tp):
        hints = typing.get_type_hints(tp)
        fields = [(f.name, hints[f.name]) for f in dataclasses.fields(tp)]
        # resolved lazily so self-referencing modules can finish importing
        encs: list = []

        def enc_dc(v, out):
            if not encs:
                encs.extend((name, _encoder_for(ft)) for name, ft in fields)
            if type(v) is not tp:
                raise TypeError(f"expected {tp.__name__}, got {type(v).__name__}")
            for name, fe in encs:
                fe(getattr(v, name), out)
        return enc_dc
    raise TypeError(f"no canonical encoding for {tp!r}")


# -- decoder construction ---------------------------------------------------


def _need(view: memoryview, pos: int, n: int) -> None:
    if pos + n > len(view):
        raise DecodeError(f"truncated input at offset {pos}")


def _decoder_for(tp: Any) -> _Decoder:
    try:
        return _decoders[tp]
    except KeyError:
        pass
    dec = _build_decoder(tp)
    _decoders[tp] = dec
    return dec


def _read_len(view: memoryview, pos: int) -> tuple[int, int]:
    _need(view, pos, 4)
    return _U32.unpack_from(view, pos)[0], pos + 4


def _build_decoder(tp: Any) -> _Decoder:
    if tp is bool:
        def dec_bool(view, pos):
            _need(view, pos, 1)
            b = view[pos]
            if b > 1:
                raise DecodeError(f"bad bool byte {b} at offset {pos}")
            return b == 1, pos + 1
        return dec_bool
    if isinstance(tp, type) and issubclass(tp, enum.IntEnum):
        def dec_enum(view, pos):
            _need(view, pos, 1)
            try:
                return tp(view[pos]), pos + 1
            except ValueError:
                raise DecodeError(f"bad {tp.__name__} tag {view[pos]} at offset {pos}") from None
        return dec_enum
    if tp is int:
        def dec_int(view, pos):
            _need(view, pos, 8)
            return _U64.unpack_from(view, pos)[0], pos + 8
        return dec_int
    if tp is bytes:
        def dec_bytes(view, pos):
            n, pos = _read_len(view, pos)
            _need(view, pos, n)
            return bytes(view[pos:pos + n]), pos + n
        return dec_bytes
    if tp is str:
        def dec_str(view, pos):
            n, pos = _read_len(view, pos)
            _need(view, pos, n)
            try:
                return str(view[pos:pos + n], "utf-8"), pos + n
            except UnicodeDecodeError as exc:
                raise DecodeError(f"invalid UTF-8 at offset {pos}") from exc
        return dec_str
    inner = _optional_arg(tp)
    if inner is not None:
        inner_dec = _decoder_for(inner)

        def dec_opt(view, pos):
            _need(view, pos, 1)
            tag = view[pos]
            if tag == 0:
                return None, pos + 1
            if tag != 1:
                raise DecodeError(f"bad option tag {tag} at offset {pos}")
            return inner_dec(view, pos + 1)
        return dec_opt
    origin = typing.get_origin(tp)
    if origin in (tuple, list):
        item_dec = _decoder_for(typing.get_args(tp)[0])

        def dec_seq(view, pos):
            n, pos = _read_len(view, pos)
            # every item takes at least one byte
            _need(view, pos, n)
            items = []
            for _ in range(n):
                item, pos = item_dec(view, pos)
                items.append(item)
            return (tuple(items) if origin is tuple else items), pos
        return dec_seq
    if origin is dict:
        k_tp, v_tp = typing.get_args(tp)
        k_dec, v_dec = _decoder_for(k_tp), _decoder_for(v_tp)

        def dec_map(view, pos):
            n, pos = _read_len(view, pos)
            _need(view, pos, n)
            out = {}
            prev = None
            for _ in range(n):
                start = pos
                key, pos = k_dec(view, pos)
                kb = bytes(view[start:pos])
                if prev is not None and kb <= prev:
                    raise DecodeError(f"map keys not strictly ascending at offset {start}")
                prev = kb
                out[key], pos = v_dec(view, pos)
            return out, pos
        return dec_map
    if dataclasses.is_dataclass(tp):
        hints = typing.get_type_hints(tp)
        fields = [(f.name, hints[f.name]) for f in dataclasses.fields(tp)]
        decs: list = []

        def dec_dc(view, pos):
            if not decs:
                decs.extend((name, _decoder_for(ft)) for name, ft in fields)
            kwargs = {}
            for name, fd in decs:
                kwargs[name], pos = fd(view, pos)
            try:
                return tp(**kwargs), pos
            except (TypeError, ValueError) as exc:
                raise DecodeError(f"invalid {tp.__name__}: {exc}") from exc
        return dec_dc
    raise TypeError(f"no canonical decoding for {tp!r}")
