"""Single-hop unidirectional proxy re-encryption over a prime-order group.

A second-level ciphertext of a group element ``m`` under ``pk = g^a`` is
``(m * g^k, pk^k)``. Delegation picks a fresh blinding scalar ``r`` and hands
the proxy ``rk1 = r / a (mod q)``; the proxy raises ``c2`` to ``rk1`` and
gets ``g^(k r)``. The delegatee learns ``r`` by unwrapping it with their own
secret key, so the delegator only ever needs the delegatee's public key.

Payloads never live in the group: :func:`seal_record` encapsulates a random
element and derives the AES-GCM data key from it.

Trust caveat: ``r`` (held by the delegatee) together with ``rk1`` (held by
the proxy) gives ``a = r / rk1``. The proxy is assumed honest-but-curious and
not colluding with delegatees.
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from medledger import codec
from medledger.crypto.entropy import system_entropy
from medledger.crypto.errors import (
    CorruptRecord,
    CryptoError,
    InvalidPayload,
    InvalidScalar,
    NotDelegatee,
    WrongLevel,
)
from medledger.crypto.groups import GroupParams

KDF_PREFIX = b"medledger/v1/"
NONCE_SIZE = 12


class Level(enum.IntEnum):
    FIRST = 1
    SECOND = 2


@dataclass(frozen=True)
class KeyPair:
    sk: int
    pk: int


@dataclass(frozen=True)
class PreCiphertext:
    c1: int
    c2: int
    level: Level = Level.SECOND


@dataclass(frozen=True)
class WrappedScalar:
    eph_pk: int
    sealed: bytes  # nonce || AES-GCM(ciphertext || tag)


@dataclass(frozen=True)
class ReEncryptionKey:
    rk1: int
    wrapped_r: WrappedScalar
    from_fp: bytes
    to_fp: bytes


@dataclass(frozen=True)
class SealedRecord:
    encapsulation: PreCiphertext
    nonce: bytes
    body: bytes
    context: bytes
    wrapped_r: WrappedScalar | None = None


def kdf(label: str, ikm: bytes, length: int = 32) -> bytes:
    return HKDF(
        algorithm=hashes.SHA256(),
        length=length,
        salt=None,
        info=KDF_PREFIX + label.encode("ascii"),
    ).derive(ikm)


def fingerprint(group: GroupParams, pk: int) -> bytes:
    return hashlib.sha256(group.encode_element(pk)).digest()


def keygen(group: GroupParams, entropy=None, sk: int | None = None) -> KeyPair:
    if sk is None:
        sk = group.random_scalar(entropy or system_entropy)
    group.check_scalar(sk)
    return KeyPair(sk=sk, pk=group.base_exp(sk))


# -- element-level scheme ---------------------------------------------------


def encrypt_element(group: GroupParams, pk: int, m: int, k: int) -> PreCiphertext:
    group.check_element(m)
    group.check_element(pk)
    group.check_scalar(k)
    return PreCiphertext(group.mul(m, group.base_exp(k)), group.exp(pk, k), Level.SECOND)


def encrypt(group: GroupParams, pk: int, m: int, entropy=None) -> PreCiphertext:
    return encrypt_element(group, pk, m, group.random_scalar(entropy or system_entropy))


def _check_ct(group: GroupParams, ct: PreCiphertext, level: Level) -> None:
    if ct.level != level:
        raise WrongLevel(f"expected a {level.name.lower()}-level ciphertext, got {ct.level.name.lower()}")
    group.check_element(ct.c1)
    group.check_element(ct.c2)


def _strip(group: GroupParams, c1: int, c2: int, exponent: int) -> int:
    return group.mul(c1, group.inv(group.exp(c2, exponent)))


def decrypt_second(group: GroupParams, sk: int, ct: PreCiphertext) -> int:
    _check_ct(group, ct, Level.SECOND)
    return _strip(group, ct.c1, ct.c2, group.scalar_inv(group.check_scalar(sk)))


def rekeygen(
    group: GroupParams, sk_from: int, pk_to: int, r: int, entropy=None
) -> ReEncryptionKey:
    """Re-encryption key from ``sk_from`` toward ``pk_to`` with blinding ``r``."""
    if r % group.q == 0:
        raise InvalidScalar("blinding scalar must be non-zero")
    group.check_scalar(r)
    group.check_scalar(sk_from)
    rk1 = r * group.scalar_inv(sk_from) % group.q
    return ReEncryptionKey(
        rk1=rk1,
        wrapped_r=wrap_scalar(group, pk_to, r, entropy),
        from_fp=fingerprint(group, group.base_exp(sk_from)),
        to_fp=fingerprint(group, pk_to),
    )


def weak_blinding(group: GroupParams, sk_from: int, r: int) -> bool:
    """True when ``rk1`` or its inverse would itself decrypt something.

    That happens for ``r = 1`` (rk1 = 1/a), ``r = a^2`` (1/rk1 = 1/a) and
    ``r^2 = a`` (rk1 = 1/r). Negligible on a real group, common on TOY.
    """
    a = sk_from % group.q
    return r == 1 or r == a * a % group.q or r * r % group.q == a


def generate_rekey(group: GroupParams, sk_from: int, pk_to: int, entropy=None) -> ReEncryptionKey:
    entropy = entropy or system_entropy
    while True:
        r = group.random_scalar(entropy)
        if not weak_blinding(group, sk_from, r):
            return rekeygen(group, sk_from, pk_to, r, entropy)


def reencrypt(group: GroupParams, ct: PreCiphertext, rk: ReEncryptionKey | int) -> PreCiphertext:
    """Proxy transform; needs no secret key and never sees ``m``."""
    rk1 = rk.rk1 if isinstance(rk, ReEncryptionKey) else rk
    _check_ct(group, ct, Level.SECOND)
    group.check_scalar(rk1)
    return PreCiphertext(ct.c1, group.exp(ct.c2, rk1), Level.FIRST)


def decrypt_first(group: GroupParams, sk_to: int, ct: PreCiphertext, wrapped_r: WrappedScalar) -> int:
    _check_ct(group, ct, Level.FIRST)
    r = unwrap_scalar(group, sk_to, wrapped_r)
    return _strip(group, ct.c1, ct.c2, group.scalar_inv(r))


# -- blinding-scalar transport ----------------------------------------------


def _wrap_key(group: GroupParams, shared: int) -> bytes:
    return kdf("wrap", group.encode_element(shared))


def wrap_scalar(group: GroupParams, pk_to: int, r: int, entropy=None) -> WrappedScalar:
    entropy = entropy or system_entropy
    group.check_element(pk_to)
    e = group.random_scalar(entropy)
    eph = group.base_exp(e)
    nonce = entropy.randbytes(NONCE_SIZE)
    ct = AESGCM(_wrap_key(group, group.exp(pk_to, e))).encrypt(
        nonce, group.encode_scalar(r), group.encode_element(eph)
    )
    return WrappedScalar(eph_pk=eph, sealed=nonce + ct)


def unwrap_scalar(group: GroupParams, sk_to: int, ws: WrappedScalar) -> int:
    if not group.is_element(ws.eph_pk) or len(ws.sealed) <= NONCE_SIZE:
        raise NotDelegatee("malformed wrapped scalar")
    key = _wrap_key(group, group.exp(ws.eph_pk, sk_to))
    try:
        raw = AESGCM(key).decrypt(
            ws.sealed[:NONCE_SIZE], ws.sealed[NONCE_SIZE:], group.encode_element(ws.eph_pk)
        )
        return group.decode_scalar(raw)
    except (InvalidTag, InvalidScalar):
        raise NotDelegatee("wrapped scalar does not open under this key") from None


# -- record sealing (KEM/DEM) -----------------------------------------------


def derive_dek(group: GroupParams, m: int, context: bytes) -> bytes:
    return kdf("dek", group.encode_element(m) + context)


def seal_record(
    group: GroupParams, pk_stream: int, payload: bytes, context: bytes, entropy=None
) -> SealedRecord:
    if not payload:
        raise InvalidPayload("payload must be non-empty")
    entropy = entropy or system_entropy
    m = group.base_exp(group.random_scalar(entropy))
    encapsulation = encrypt(group, pk_stream, m, entropy)
    nonce = entropy.randbytes(NONCE_SIZE)
    body = AESGCM(derive_dek(group, m, context)).encrypt(nonce, payload, context)
    return SealedRecord(encapsulation, nonce, body, context)


def open_record(group: GroupParams, sk: int, sealed: SealedRecord, context: bytes | None = None) -> bytes:
    """Recover the payload as the stream owner, or as the delegatee of a
    re-encrypted record (``sealed.wrapped_r`` set)."""
    if sealed.encapsulation.level == Level.SECOND:
        m = decrypt_second(group, sk, sealed.encapsulation)
    else:
        if sealed.wrapped_r is None:
            raise CorruptRecord("first-level record carries no wrapped blinding scalar")
        m = decrypt_first(group, sk, sealed.encapsulation, sealed.wrapped_r)
    ctx = sealed.context if context is None else context
    try:
        return AESGCM(derive_dek(group, m, ctx)).decrypt(sealed.nonce, sealed.body, ctx)
    except InvalidTag:
        raise CorruptRecord("record body failed authentication") from None


def reencrypt_record(group: GroupParams, sealed: SealedRecord, rk1: int, wrapped_r: WrappedScalar) -> SealedRecord:
    """Re-encrypt the encapsulation only; the body is copied as-is."""
    return SealedRecord(
        encapsulation=reencrypt(group, sealed.encapsulation, rk1),
        nonce=sealed.nonce,
        body=sealed.body,
        context=sealed.context,
        wrapped_r=wrapped_r,
    )


# -- blob encoding ------------------------------------------------------------


@dataclass(frozen=True)
class _SealedWire:
    group: str
    level: Level
    c1: bytes
    c2: bytes
    nonce: bytes
    body: bytes
    context: bytes
    wrapped: bool
    eph_pk: bytes
    wrapped_sealed: bytes


def encode_sealed(group: GroupParams, sealed: SealedRecord) -> bytes:
    enc = sealed.encapsulation
    ws = sealed.wrapped_r
    return codec.encode(
        _SealedWire(
            group=group.name,
            level=enc.level,
            c1=group.encode_element(enc.c1),
            c2=group.encode_element(enc.c2),
            nonce=sealed.nonce,
            body=sealed.body,
            context=sealed.context,
            wrapped=ws is not None,
            eph_pk=group.encode_element(ws.eph_pk) if ws else b"",
            wrapped_sealed=ws.sealed if ws else b"",
        )
    )


def decode_sealed(group: GroupParams, data: bytes) -> SealedRecord:
    """Parse a sealed-record blob; raises ``CorruptRecord`` on any defect."""
    try:
        w = codec.decode(_SealedWire, data)
        if w.group != group.name:
            raise CorruptRecord(f"record is for group {w.group!r}, not {group.name!r}")
        if len(w.nonce) != NONCE_SIZE:
            raise CorruptRecord("bad nonce length")
        enc = PreCiphertext(group.decode_element(w.c1), group.decode_element(w.c2), w.level)
        ws = None
        if w.wrapped:
            ws = WrappedScalar(group.decode_element(w.eph_pk), w.wrapped_sealed)
        elif w.eph_pk or w.wrapped_sealed:
            raise CorruptRecord("non-canonical wrapped-scalar fields")
        return SealedRecord(enc, w.nonce, w.body, w.context, ws)
    except CorruptRecord:
        raise
    except (codec.DecodeError, ValueError, CryptoError) as exc:
        raise CorruptRecord(f"malformed sealed record: {exc}") from exc
