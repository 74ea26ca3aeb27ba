"""Built-in contracts: the deterministic transition rules for each tx kind.

Every handler runs all of its checks before touching ``state`` so a rejected
transaction never leaves a partial write behind. Envelope checks (signature,
nonce, registered sender) belong to :mod:`medledger.ledger` and have already
passed when a handler runs.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, replace
from typing import Callable

from medledger import codec
from medledger.crypto import CryptoError, group_by_name
from medledger.crypto.pre import fingerprint
from medledger.errors import Rejected, UnknownActor
from medledger.policy import (
    Attribute,
    PolicyError,
    collect_attributes,
    eval_policy,
    format_policy,
    parse_cached,
    verify_credential,
)
from medledger.state import (
    AccessEvent,
    ActorEntry,
    AttributeEntry,
    Decision,
    DeviceEntry,
    Grant,
    GrantStatus,
    LedgerState,
    RecordMeta,
    RequestEntry,
    Role,
    StreamEntry,
)

_HASH_HEX = re.compile(r"[0-9a-f]{64}\Z")

# denial reasons decided by the contract
REVOKED = "Revoked"
EXPIRED = "Expired"
NOT_DELEGATEE = "NotDelegatee"
WRONG_STREAM = "WrongStream"
POLICY_UNSATISFIED = "PolicyUnsatisfied"
# denial reasons a proxy may report for a request the contract granted
MISSING_BLOB = "MissingBlob"
MALFORMED_RECORD = "MalformedRecord"
PROXY_REASONS = frozenset({MISSING_BLOB, MALFORMED_RECORD})


class TxKind(enum.IntEnum):
    REGISTER_ACTOR = 0x01
    REGISTER_DEVICE = 0x02
    ATTRIBUTE = 0x03
    STORE_RECORD = 0x04
    GRANT_ACCESS = 0x05
    REVOKE_ACCESS = 0x06
    ACCESS_REQUEST = 0x07
    ACCESS_LOG = 0x08


class AttrAction(enum.IntEnum):
    ISSUE = 1
    REVOKE = 2


# -- bodies -------------------------------------------------------------------


@dataclass(frozen=True)
class RegisterActor:
    actor_id: str
    role: Role
    pk_sig: bytes
    pk_pre: bytes = b""


@dataclass(frozen=True)
class RegisterDevice:
    """Bind a device to one of the signer's streams.

    An empty ``device_id`` only opens the stream. A ``stream_pk`` is needed
    whenever the stream does not exist yet.
    """

    device_id: str
    pk_sig: bytes
    stream_id: str
    stream_pk: bytes = b""


@dataclass(frozen=True)
class AttributeUpdate:
    action: AttrAction
    subject: str
    name: str
    issued_at: int = 0
    registrar_sig: bytes = b""


@dataclass(frozen=True)
class StoreRecord:
    record_id: str
    stream_id: str
    owner: str
    device_id: str
    size: int


@dataclass(frozen=True)
class GrantAccess:
    grant_id: str
    stream_id: str
    delegatee: str
    policy: str
    rk1: bytes
    wrapped_eph: bytes
    wrapped_sealed: bytes
    from_fp: bytes
    to_fp: bytes
    proxy_id: str
    expiry: int = 0


@dataclass(frozen=True)
class RevokeAccess:
    grant_id: str


@dataclass(frozen=True)
class AccessRequest:
    request_id: str
    grant_id: str
    record_id: str


@dataclass(frozen=True)
class AccessLog:
    request_id: str
    decision: Decision
    reason: str = ""
    result_blob_hash: str = ""


BODY_TYPES: dict[TxKind, type] = {
    TxKind.REGISTER_ACTOR: RegisterActor,
    TxKind.REGISTER_DEVICE: RegisterDevice,
    TxKind.ATTRIBUTE: AttributeUpdate,
    TxKind.STORE_RECORD: StoreRecord,
    TxKind.GRANT_ACCESS: GrantAccess,
    TxKind.REVOKE_ACCESS: RevokeAccess,
    TxKind.ACCESS_REQUEST: AccessRequest,
    TxKind.ACCESS_LOG: AccessLog,
}
KIND_OF = {v: k for k, v in BODY_TYPES.items()}


def decode_body(kind: TxKind, body: bytes):
    try:
        return codec.decode(BODY_TYPES[TxKind(kind)], body)
    except (codec.DecodeError, ValueError, KeyError) as exc:
        raise Rejected("InvalidBody", str(exc)) from exc


# -- authorization ------------------------------------------------------------


@dataclass(frozen=True)
class Verdict:
    decision: Decision
    reason: str = ""

    @property
    def granted(self) -> bool:
        return self.decision == Decision.GRANTED

    def __str__(self) -> str:
        return "GRANTED" if self.granted else f"DENIED({self.reason})"


GRANTED = Verdict(Decision.GRANTED)


def authorize(state: LedgerState, requester: str, grant_id: str, record_id: str, height: int) -> Verdict:
    """Contract decision for one access request; pure in its arguments."""
    grant = state.grants.get(grant_id)
    record = state.records.get(record_id)
    if grant is None:
        raise Rejected("UnknownGrant", grant_id)
    if record is None:
        raise Rejected("UnknownRecord", record_id)
    if grant.status == GrantStatus.REVOKED:
        return Verdict(Decision.DENIED, REVOKED)
    if grant.expiry and height > grant.expiry:
        return Verdict(Decision.DENIED, EXPIRED)
    if requester != grant.delegatee:
        return Verdict(Decision.DENIED, NOT_DELEGATEE)
    if record.stream_id != grant.stream_id:
        return Verdict(Decision.DENIED, WRONG_STREAM)
    policy = parse_cached(grant.policy)
    if not eval_policy(policy, collect_attributes(state, requester, height)):
        return Verdict(Decision.DENIED, POLICY_UNSATISFIED)
    return GRANTED


# -- handlers -----------------------------------------------------------------


def _actor(state: LedgerState, actor_id: str) -> ActorEntry:
    try:
        return state.actors[actor_id]
    except KeyError:
        raise UnknownActor(actor_id) from None


def _check_pk_sig(pk: bytes) -> None:
    if len(pk) != 32:
        raise Rejected("InvalidBody", "signing keys are 32-byte Ed25519 public keys")


def _check_element(state: LedgerState, data: bytes, what: str) -> None:
    try:
        group_by_name(state.group).decode_element(data)
    except CryptoError as exc:
        raise Rejected("InvalidBody", f"{what}: {exc}") from exc


def _register_actor(state: LedgerState, b: RegisterActor, sender: str, height: int) -> None:
    if sender != state.admin_id:
        raise Rejected("WrongSigner", "actors are registered by the admin")
    if not b.actor_id:
        raise Rejected("InvalidBody", "empty actor id")
    if state.id_taken(b.actor_id):
        raise Rejected("DuplicateId", b.actor_id)
    _check_pk_sig(b.pk_sig)
    if b.pk_pre:
        _check_element(state, b.pk_pre, "pk_pre")
    state.actors[b.actor_id] = ActorEntry(Role(b.role), b.pk_sig, b.pk_pre)


def _register_device(state: LedgerState, b: RegisterDevice, sender: str, height: int) -> None:
    owner = state.actors.get(sender)
    if owner is None or owner.role != Role.PATIENT:
        raise Rejected("WrongSigner", "devices and streams belong to patients")
    stream = state.streams.get(b.stream_id)
    if stream is None:
        if not b.stream_pk:
            raise Rejected("UnknownStream", b.stream_id)
        if not b.stream_id:
            raise Rejected("InvalidBody", "empty stream id")
        _check_element(state, b.stream_pk, "stream_pk")
    else:
        if stream.owner != sender:
            raise Rejected("WrongSigner", f"stream {b.stream_id} belongs to {stream.owner}")
        if b.stream_pk and b.stream_pk != stream.pk:
            raise Rejected("KeyMismatch", "stream already registered with another key")
        if not b.device_id:
            raise Rejected("DuplicateId", b.stream_id)
    if b.device_id:
        if state.id_taken(b.device_id):
            raise Rejected("DuplicateId", b.device_id)
        _check_pk_sig(b.pk_sig)
    if stream is None:
        state.streams[b.stream_id] = StreamEntry(sender, b.stream_pk, height)
    if b.device_id:
        state.devices[b.device_id] = DeviceEntry(sender, b.stream_id, b.pk_sig)


def _attribute(state: LedgerState, b: AttributeUpdate, sender: str, height: int) -> None:
    if sender != state.registrar_id:
        raise Rejected("WrongSigner", "attributes are issued by the registrar")
    _actor(state, b.subject)
    held = state.attributes.get(b.subject, ())
    active = [i for i, e in enumerate(held) if e.name == b.name and e.revoked_height is None]
    if b.action == AttrAction.ISSUE:
        cred = Attribute(b.name, b.subject, b.issued_at, b.registrar_sig)
        if b.issued_at > height or not verify_credential(state.registrar_pk, cred):
            raise Rejected("BadCredential", f"{b.subject}:{b.name}")
        if active:
            raise Rejected("DuplicateId", f"{b.subject} already holds {b.name}")
        entry = AttributeEntry(b.name, height, None, b.issued_at, b.registrar_sig)
        state.attributes[b.subject] = held + (entry,)
    else:
        if not active:
            raise Rejected("UnknownAttribute", f"{b.subject} holds no active {b.name}")
        i = active[0]
        updated = list(held)
        updated[i] = replace(held[i], revoked_height=height)
        state.attributes[b.subject] = tuple(updated)


def _store_record(state: LedgerState, b: StoreRecord, sender: str, height: int) -> None:
    if not _HASH_HEX.match(b.record_id):
        raise Rejected("InvalidBody", "record_id must be a lowercase hex SHA-256 digest")
    if b.record_id in state.records:
        raise Rejected("DuplicateId", b.record_id)
    stream = state.streams.get(b.stream_id)
    if stream is None:
        raise Rejected("UnknownStream", b.stream_id)
    if stream.owner != b.owner:
        raise Rejected("WrongSigner", f"stream {b.stream_id} is not owned by {b.owner}")
    device = state.devices.get(sender)
    if device is not None:
        if device.owner != b.owner or device.stream_id != b.stream_id or b.device_id != sender:
            raise Rejected("WrongSigner", f"device {sender} is not bound to {b.stream_id}")
    elif sender == b.owner:
        if b.device_id and state.devices.get(b.device_id, DeviceEntry("", "", b"")).owner != b.owner:
            raise Rejected("WrongSigner", f"device {b.device_id} is not owned by {b.owner}")
    else:
        raise Rejected("WrongSigner", f"{sender} may not store into {b.stream_id}")
    state.records[b.record_id] = RecordMeta(
        b.record_id, b.stream_id, b.owner, b.device_id, b.record_id, b.size, height
    )


def _grant_access(state: LedgerState, b: GrantAccess, sender: str, height: int) -> None:
    if not b.grant_id:
        raise Rejected("InvalidBody", "empty grant id")
    if b.grant_id in state.grants:
        raise Rejected("DuplicateId", b.grant_id)
    stream = state.streams.get(b.stream_id)
    if stream is None:
        raise Rejected("UnknownStream", b.stream_id)
    if stream.owner != sender:
        raise Rejected("WrongSigner", f"{sender} does not own {b.stream_id}")
    delegatee = _actor(state, b.delegatee)
    proxy = _actor(state, b.proxy_id)
    if proxy.role != Role.PROXY:
        raise Rejected("NotProxy", b.proxy_id)
    if not delegatee.pk_pre:
        raise Rejected("KeyMismatch", f"{b.delegatee} has no re-encryption key")
    group = group_by_name(state.group)
    if b.from_fp != fingerprint(group, int.from_bytes(stream.pk, "big")):
        raise Rejected("KeyMismatch", "from_fp does not match the stream key")
    if b.to_fp != fingerprint(group, int.from_bytes(delegatee.pk_pre, "big")):
        raise Rejected("KeyMismatch", "to_fp does not match the delegatee key")
    try:
        group.decode_scalar(b.rk1)
        group.decode_element(b.wrapped_eph)
    except CryptoError as exc:
        raise Rejected("InvalidBody", str(exc)) from exc
    try:
        policy = format_policy(parse_cached(b.policy))
    except PolicyError as exc:
        raise Rejected("InvalidPolicy", str(exc)) from exc
    state.grants[b.grant_id] = Grant(
        grant_id=b.grant_id,
        stream_id=b.stream_id,
        issuer=sender,
        delegatee=b.delegatee,
        policy=policy,
        rk1=b.rk1,
        wrapped_eph=b.wrapped_eph,
        wrapped_sealed=b.wrapped_sealed,
        from_fp=b.from_fp,
        to_fp=b.to_fp,
        proxy_id=b.proxy_id,
        expiry=b.expiry,
        status=GrantStatus.ACTIVE,
        created_at=height,
    )


def _revoke_access(state: LedgerState, b: RevokeAccess, sender: str, height: int) -> None:
    grant = state.grants.get(b.grant_id)
    if grant is None:
        raise Rejected("UnknownGrant", b.grant_id)
    if grant.issuer != sender:
        raise Rejected("WrongSigner", f"{sender} did not issue {b.grant_id}")
    if grant.status == GrantStatus.REVOKED:
        raise Rejected("AlreadyRevoked", b.grant_id)
    state.grants[b.grant_id] = replace(grant, status=GrantStatus.REVOKED, revoked_at=height)


def _access_request(state: LedgerState, b: AccessRequest, sender: str, height: int) -> None:
    if not b.request_id:
        raise Rejected("InvalidBody", "empty request id")
    if b.request_id in state.requests:
        raise Rejected("DuplicateId", b.request_id)
    verdict = authorize(state, sender, b.grant_id, b.record_id, height)
    state.requests[b.request_id] = RequestEntry(
        b.request_id, b.grant_id, b.record_id, sender, height, verdict.decision, verdict.reason
    )


def allowed_log_reasons(state: LedgerState, req: RequestEntry, height: int) -> tuple[Verdict, frozenset[str]]:
    """Current verdict for ``req`` and the denial reasons a proxy may log."""
    now = authorize(state, req.requester, req.grant_id, req.record_id, height)
    reasons = set()
    if req.decision == Decision.DENIED:
        reasons.add(req.reason)
    else:
        reasons |= PROXY_REASONS
    if not now.granted:
        reasons.add(now.reason)
    return now, frozenset(reasons)


def _access_log(state: LedgerState, b: AccessLog, sender: str, height: int) -> None:
    req = state.requests.get(b.request_id)
    if req is None:
        raise Rejected("UnknownRequest", b.request_id)
    grant = state.grants[req.grant_id]
    if grant.proxy_id != sender:
        raise Rejected("WrongSigner", f"{b.request_id} is served by {grant.proxy_id}")
    if req.logged:
        raise Rejected("DuplicateId", b.request_id)
    now, reasons = allowed_log_reasons(state, req, height)
    if b.decision == Decision.GRANTED:
        if not (req.decision == Decision.GRANTED and now.granted):
            raise Rejected("BadDecision", f"request {b.request_id} is {now}")
        if b.reason or not _HASH_HEX.match(b.result_blob_hash):
            raise Rejected("InvalidBody", "a granted log carries a result hash and no reason")
    else:
        if b.reason not in reasons:
            raise Rejected("BadDecision", f"reason {b.reason!r} not in {sorted(reasons)}")
        if b.result_blob_hash:
            raise Rejected("InvalidBody", "a denied log carries no result")
    state.requests[b.request_id] = replace(req, logged=True)
    state.audit_log.append(
        AccessEvent(
            request_id=req.request_id,
            grant_id=req.grant_id,
            record_id=req.record_id,
            requester=req.requester,
            decision=Decision(b.decision),
            reason=b.reason,
            result_blob_hash=b.result_blob_hash or None,
            proxy_id=sender,
            height=height,
        )
    )


_HANDLERS: dict[TxKind, Callable] = {
    TxKind.REGISTER_ACTOR: _register_actor,
    TxKind.REGISTER_DEVICE: _register_device,
    TxKind.ATTRIBUTE: _attribute,
    TxKind.STORE_RECORD: _store_record,
    TxKind.GRANT_ACCESS: _grant_access,
    TxKind.REVOKE_ACCESS: _revoke_access,
    TxKind.ACCESS_REQUEST: _access_request,
    TxKind.ACCESS_LOG: _access_log,
}


def apply_body(state: LedgerState, kind: TxKind, body, sender: str, height: int) -> None:
    """Apply one decoded body in place; raises :class:`Rejected`."""
    if type(body) is not BODY_TYPES[kind]:
        raise Rejected("InvalidBody", f"{type(body).__name__} is not a {kind.name} body")
    _HANDLERS[kind](state, body, sender, height)


def apply_transaction(state: LedgerState, tx, height: int) -> LedgerState:
    """Contract step for an envelope whose signature and nonce were checked.

    Returns a new state; ``state`` is untouched.
    """
    new = state.copy()
    apply_body(new, tx.kind, decode_body(tx.kind, tx.body), tx.sender, height)
    return new


# -- queries ------------------------------------------------------------------


def query_grants(state: LedgerState, actor: str) -> list[Grant]:
    """Grants the actor issued, receives, or serves as proxy."""
    return sorted(
        (g for g in state.grants.values() if actor in (g.issuer, g.delegatee, g.proxy_id)),
        key=lambda g: (g.created_at, g.grant_id),
    )


def query_records(state: LedgerState, stream_id: str) -> list[RecordMeta]:
    return sorted(
        (r for r in state.records.values() if r.stream_id == stream_id),
        key=lambda r: (r.created_at, r.record_id),
    )


def query_audit(
    state: LedgerState,
    decision: Decision | None = None,
    requester: str | None = None,
    grant_id: str | None = None,
    record_id: str | None = None,
) -> list[AccessEvent]:
    out = []
    for ev in state.audit_log:
        if decision is not None and ev.decision != decision:
            continue
        if requester is not None and ev.requester != requester:
            continue
        if grant_id is not None and ev.grant_id != grant_id:
            continue
        if record_id is not None and ev.record_id != record_id:
            continue
        out.append(ev)
    # the log is appended in block order already; sort is a guard for callers
    return sorted(out, key=lambda e: e.height)
