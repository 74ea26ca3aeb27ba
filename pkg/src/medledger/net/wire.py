"""Framed request/response messages shared by every transport.

Frame: 4-byte big-endian payload length, 1-byte kind, canonical payload.
Responses use ``request kind | 0x80``; failures come back as ``ERROR``.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

from medledger import codec
from medledger.ledger import Block, Transaction

MAX_PAYLOAD = 64 * 1024 * 1024
HEADER = struct.Struct(">IB")


class MsgKind(enum.IntEnum):
    SUBMIT_TX = 0x01
    GET_BLOCK = 0x02
    GET_TIP = 0x03
    GET_STATE = 0x04
    PUT_BLOB = 0x05
    GET_BLOB = 0x06
    BLOCK_ANNOUNCE = 0x07

    SUBMIT_RESULT = 0x81
    BLOCKS = 0x82
    TIP = 0x83
    STATE = 0x84
    BLOB_REF = 0x85
    BLOB = 0x86
    ANNOUNCE_RESULT = 0x87

    ERROR = 0xFF

    @property
    def is_response(self) -> bool:
        return self.value & 0x80 != 0


class WireError(Exception):
    pass


@dataclass(frozen=True)
class Empty:
    pass


@dataclass(frozen=True)
class TxBatch:
    txs: tuple[Transaction, ...]


@dataclass(frozen=True)
class TxResult:
    tx_id: bytes
    accepted: bool
    reason: str = ""
    detail: str = ""


@dataclass(frozen=True)
class SubmitResult:
    results: tuple[TxResult, ...]


@dataclass(frozen=True)
class BlockRange:
    start: int
    count: int


@dataclass(frozen=True)
class Blocks:
    blocks: tuple[Block, ...]


@dataclass(frozen=True)
class Tip:
    height: int
    block_hash: bytes
    state_root: bytes


@dataclass(frozen=True)
class StateQuery:
    actor_id: str = ""


@dataclass(frozen=True)
class StateSummary:
    height: int
    state_root: bytes
    registered: bool
    nonce: int
    pending_nonce: int


@dataclass(frozen=True)
class BlobData:
    data: bytes


@dataclass(frozen=True)
class BlobQuery:
    hash: bytes


@dataclass(frozen=True)
class BlobRefMsg:
    hash: bytes
    size: int


@dataclass(frozen=True)
class AnnounceResult:
    accepted: int
    reason: str
    tip: int


@dataclass(frozen=True)
class ErrorMsg:
    reason: str
    detail: str = ""


PAYLOAD_TYPES: dict[MsgKind, type] = {
    MsgKind.SUBMIT_TX: TxBatch,
    MsgKind.GET_BLOCK: BlockRange,
    MsgKind.GET_TIP: Empty,
    MsgKind.GET_STATE: StateQuery,
    MsgKind.PUT_BLOB: BlobData,
    MsgKind.GET_BLOB: BlobQuery,
    MsgKind.BLOCK_ANNOUNCE: Blocks,
    MsgKind.SUBMIT_RESULT: SubmitResult,
    MsgKind.BLOCKS: Blocks,
    MsgKind.TIP: Tip,
    MsgKind.STATE: StateSummary,
    MsgKind.BLOB_REF: BlobRefMsg,
    MsgKind.BLOB: BlobData,
    MsgKind.ANNOUNCE_RESULT: AnnounceResult,
    MsgKind.ERROR: ErrorMsg,
}


def encode_frame(kind: MsgKind, payload) -> bytes:
    if type(payload) is not PAYLOAD_TYPES[kind]:
        raise TypeError(f"{kind.name} carries {PAYLOAD_TYPES[kind].__name__}, not {type(payload).__name__}")
    body = codec.encode(payload)
    return HEADER.pack(len(body), kind) + body


def decode_frame(frame: bytes):
    """Parse one complete frame into ``(MsgKind, payload)``; raises :class:`WireError`."""
    if len(frame) < HEADER.size:
        raise WireError("short frame")
    length, raw_kind = HEADER.unpack_from(frame)
    if length != len(frame) - HEADER.size:
        raise WireError(f"length field {length} does not match payload of {len(frame) - HEADER.size} bytes")
    try:
        kind = MsgKind(raw_kind)
    except ValueError:
        raise WireError(f"unknown message kind 0x{raw_kind:02x}") from None
    try:
        return kind, codec.decode(PAYLOAD_TYPES[kind], frame[HEADER.size:])
    except (codec.DecodeError, ValueError, TypeError) as exc:
        raise WireError(f"malformed {kind.name} payload: {exc}") from exc


def error_frame(reason: str, detail: str = "") -> bytes:
    return encode_frame(MsgKind.ERROR, ErrorMsg(reason, detail))


def read_frame(read_exact) -> bytes | None:
    """Read one frame using ``read_exact(n)``; None on clean EOF."""
    header = read_exact(HEADER.size)
    if not header:
        return None
    if len(header) < HEADER.size:
        raise WireError("truncated header")
    length, _ = HEADER.unpack(header)
    if length > MAX_PAYLOAD:
        raise WireError(f"payload of {length} bytes exceeds limit")
    body = read_exact(length) if length else b""
    if len(body) != length:
        raise WireError("truncated payload")
    return header + body
