"""Materialized ledger state.

Everything here is derived from the genesis config plus the ordered blocks;
:func:`state_hash` commits to all of it and is carried in every block header.
Entries are frozen and replaced on update, so :meth:`LedgerState.copy` only
has to copy the containers.
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field, replace

from medledger import codec


class Role(enum.IntEnum):
    PATIENT = 1
    DOCTOR = 2
    RESEARCHER = 3
    PROXY = 4
    REGISTRAR = 5
    ADMIN = 6


class Decision(enum.IntEnum):
    GRANTED = 1
    DENIED = 2


class GrantStatus(enum.IntEnum):
    ACTIVE = 1
    REVOKED = 2


@dataclass(frozen=True)
class ValidatorInfo:
    validator_id: str
    pk_sig: bytes


@dataclass(frozen=True)
class ActorEntry:
    role: Role
    pk_sig: bytes
    pk_pre: bytes  # empty when the actor holds no re-encryption key
    nonce: int = 0


@dataclass(frozen=True)
class DeviceEntry:
    owner: str
    stream_id: str
    pk_sig: bytes
    nonce: int = 0


@dataclass(frozen=True)
class StreamEntry:
    owner: str
    pk: bytes
    created_at: int


@dataclass(frozen=True)
class RecordMeta:
    record_id: str
    stream_id: str
    owner: str
    device_id: str
    blob_hash: str
    size: int
    created_at: int


@dataclass(frozen=True)
class Grant:
    grant_id: str
    stream_id: str
    issuer: str
    delegatee: str
    policy: str
    rk1: bytes
    wrapped_eph: bytes
    wrapped_sealed: bytes
    from_fp: bytes
    to_fp: bytes
    proxy_id: str
    expiry: int
    status: GrantStatus
    created_at: int
    revoked_at: int | None = None


@dataclass(frozen=True)
class AttributeEntry:
    name: str
    issued_height: int
    revoked_height: int | None
    issued_at: int
    registrar_sig: bytes


@dataclass(frozen=True)
class RequestEntry:
    request_id: str
    grant_id: str
    record_id: str
    requester: str
    height: int
    decision: Decision
    reason: str
    logged: bool = False


@dataclass(frozen=True)
class AccessEvent:
    request_id: str
    grant_id: str
    record_id: str
    requester: str
    decision: Decision
    reason: str
    result_blob_hash: str | None
    proxy_id: str
    height: int

    def describe(self) -> str:
        return "GRANTED" if self.decision == Decision.GRANTED else f"DENIED({self.reason})"


@dataclass
class LedgerState:
    group: str
    validators: tuple[ValidatorInfo, ...]
    admin_id: str
    registrar_id: str
    registrar_pk: bytes
    height: int = 0
    actors: dict[str, ActorEntry] = field(default_factory=dict)
    devices: dict[str, DeviceEntry] = field(default_factory=dict)
    streams: dict[str, StreamEntry] = field(default_factory=dict)
    records: dict[str, RecordMeta] = field(default_factory=dict)
    grants: dict[str, Grant] = field(default_factory=dict)
    attributes: dict[str, tuple[AttributeEntry, ...]] = field(default_factory=dict)
    requests: dict[str, RequestEntry] = field(default_factory=dict)
    audit_log: list[AccessEvent] = field(default_factory=list)

    def copy(self) -> "LedgerState":
        return LedgerState(
            group=self.group,
            validators=self.validators,
            admin_id=self.admin_id,
            registrar_id=self.registrar_id,
            registrar_pk=self.registrar_pk,
            height=self.height,
            actors=dict(self.actors),
            devices=dict(self.devices),
            streams=dict(self.streams),
            records=dict(self.records),
            grants=dict(self.grants),
            attributes=dict(self.attributes),
            requests=dict(self.requests),
            audit_log=list(self.audit_log),
        )

    def sender_key(self, sender: str) -> tuple[bytes, int] | None:
        """(signing key, last nonce) of a registered actor or device."""
        if sender in self.actors:
            a = self.actors[sender]
            return a.pk_sig, a.nonce
        if sender in self.devices:
            d = self.devices[sender]
            return d.pk_sig, d.nonce
        return None

    def id_taken(self, ident: str) -> bool:
        return ident in self.actors or ident in self.devices

    def bump_nonce(self, sender: str, nonce: int) -> None:
        if sender in self.actors:
            self.actors[sender] = replace(self.actors[sender], nonce=nonce)
        else:
            self.devices[sender] = replace(self.devices[sender], nonce=nonce)


def serialize_state(state: LedgerState) -> bytes:
    """Canonical bytes of the state content.

    ``height`` is written as zero: the block header already commits to it, and
    an empty block must leave the state root unchanged.
    """
    return codec.encode(replace(state, height=0))


def state_hash(state: LedgerState) -> bytes:
    return hashlib.sha256(serialize_state(state)).digest()
