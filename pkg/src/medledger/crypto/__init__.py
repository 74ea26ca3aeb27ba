"""Group arithmetic, proxy re-encryption and record sealing."""

from medledger.crypto.errors import (
    CorruptRecord,
    CryptoError,
    InvalidElement,
    InvalidPayload,
    InvalidScalar,
    NotDelegatee,
    WrongLevel,
)
from medledger.crypto.groups import PROD, TOY, GroupParams, group_by_name
from medledger.crypto.pre import (
    KeyPair,
    Level,
    PreCiphertext,
    ReEncryptionKey,
    SealedRecord,
    WrappedScalar,
    decode_sealed,
    decrypt_first,
    decrypt_second,
    encode_sealed,
    encrypt,
    encrypt_element,
    fingerprint,
    generate_rekey,
    keygen,
    open_record,
    reencrypt,
    reencrypt_record,
    rekeygen,
    seal_record,
    unwrap_scalar,
    wrap_scalar,
)

__all__ = [
    "CorruptRecord",
    "CryptoError",
    "GroupParams",
    "InvalidElement",
    "InvalidPayload",
    "InvalidScalar",
    "KeyPair",
    "Level",
    "NotDelegatee",
    "PROD",
    "PreCiphertext",
    "ReEncryptionKey",
    "SealedRecord",
    "TOY",
    "WrappedScalar",
    "WrongLevel",
    "decode_sealed",
    "decrypt_first",
    "decrypt_second",
    "encode_sealed",
    "encrypt",
    "encrypt_element",
    "fingerprint",
    "generate_rekey",
    "group_by_name",
    "keygen",
    "open_record",
    "reencrypt",
    "reencrypt_record",
    "rekeygen",
    "seal_record",
    "unwrap_scalar",
    "wrap_scalar",
]
