"""Actor identities and builders for the transactions each role sends."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from medledger.contracts import AttrAction, AttributeUpdate, GrantAccess, RegisterActor, RegisterDevice
from medledger.crypto import group_by_name
from medledger.crypto.groups import GroupParams
from medledger.crypto.pre import (
    KeyPair,
    decode_sealed,
    fingerprint,
    generate_rekey,
    keygen,
    open_record,
)
from medledger.crypto.signing import SigningKey
from medledger.ledger import Transaction, make_tx
from medledger.policy import issue_credential
from medledger.state import Role


@dataclass
class Identity:
    """Signing key, optional re-encryption key pair, and the last nonce used."""

    actor_id: str
    signing: SigningKey
    role: Role | None = None
    pre: KeyPair | None = None
    nonce: int = 0
    streams: dict[str, KeyPair] = field(default_factory=dict)

    @classmethod
    def create(cls, actor_id: str, role: Role | None, group: GroupParams | None = None, entropy=None) -> "Identity":
        pre = keygen(group, entropy) if group is not None else None
        return cls(actor_id, SigningKey.generate(entropy), role, pre)

    @property
    def pk_sig(self) -> bytes:
        return self.signing.public_bytes

    def tx(self, body) -> Transaction:
        self.nonce += 1
        return make_tx(self.signing, self.actor_id, self.nonce, body)

    def resync(self, client) -> None:
        self.nonce = client.next_nonce(self.actor_id) - 1

    # -- key files ------------------------------------------------------------------

    def to_json(self, group: GroupParams | None = None) -> dict:
        out = {"actor_id": self.actor_id, "sig_seed": self.signing.seed.hex()}
        if self.role is not None:
            out["role"] = self.role.name.lower()
        if self.pre is not None:
            out["pre_sk"] = format(self.pre.sk, "x")
        if self.streams:
            out["streams"] = {sid: format(kp.sk, "x") for sid, kp in self.streams.items()}
        if group is not None:
            out["group"] = group.name
        return out

    @classmethod
    def from_json(cls, data: dict, group: GroupParams | None = None) -> "Identity":
        if group is None and "group" in data:
            group = group_by_name(data["group"])
        pre = None
        streams = {}
        if "pre_sk" in data:
            pre = keygen(group, sk=int(data["pre_sk"], 16))
        for sid, sk in data.get("streams", {}).items():
            streams[sid] = keygen(group, sk=int(sk, 16))
        role = Role[data["role"].upper()] if "role" in data else None
        return cls(data["actor_id"], SigningKey(bytes.fromhex(data["sig_seed"])), role, pre, 0, streams)

    def save(self, path: str | Path, group: GroupParams | None = None) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_json(group), indent=2) + "\n")
        path.chmod(0o600)

    @classmethod
    def load(cls, path: str | Path, group: GroupParams | None = None) -> "Identity":
        return cls.from_json(json.loads(Path(path).read_text()), group)


# -- body builders --------------------------------------------------------------


def register_actor(group: GroupParams, ident: Identity) -> RegisterActor:
    pk_pre = group.encode_element(ident.pre.pk) if ident.pre else b""
    return RegisterActor(ident.actor_id, ident.role, ident.pk_sig, pk_pre)


def open_stream(group: GroupParams, owner: Identity, stream_id: str, entropy=None) -> RegisterDevice:
    """Create a fresh stream key pair held by ``owner``; body registers it."""
    kp = keygen(group, entropy)
    owner.streams[stream_id] = kp
    return RegisterDevice("", b"", stream_id, group.encode_element(kp.pk))


def register_device(device_id: str, device_pk: bytes, stream_id: str) -> RegisterDevice:
    return RegisterDevice(device_id, device_pk, stream_id)


def issue_attribute(registrar: Identity, subject: str, name: str, height: int) -> AttributeUpdate:
    cred = issue_credential(registrar.signing, subject, name, height)
    return AttributeUpdate(AttrAction.ISSUE, subject, name, cred.issued_at, cred.registrar_sig)


def revoke_attribute(subject: str, name: str) -> AttributeUpdate:
    return AttributeUpdate(AttrAction.REVOKE, subject, name)


def grant_access(
    group: GroupParams,
    stream_key: KeyPair,
    grant_id: str,
    stream_id: str,
    delegatee: str,
    delegatee_pk_pre: int,
    policy: str,
    proxy_id: str,
    expiry: int = 0,
    entropy=None,
) -> GrantAccess:
    rk = generate_rekey(group, stream_key.sk, delegatee_pk_pre, entropy)
    return GrantAccess(
        grant_id=grant_id,
        stream_id=stream_id,
        delegatee=delegatee,
        policy=policy,
        rk1=group.encode_scalar(rk.rk1),
        wrapped_eph=group.encode_element(rk.wrapped_r.eph_pk),
        wrapped_sealed=rk.wrapped_r.sealed,
        from_fp=fingerprint(group, stream_key.pk),
        to_fp=fingerprint(group, delegatee_pk_pre),
        proxy_id=proxy_id,
        expiry=expiry,
    )


def open_blob(group: GroupParams, sk: int, blob: bytes) -> bytes:
    """Payload of a sealed-record blob, as the stream owner or as the delegatee."""
    return open_record(group, sk, decode_sealed(group, blob))
