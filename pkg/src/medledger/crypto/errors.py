class CryptoError(Exception):
    pass


class InvalidElement(CryptoError):
    """Value is not a member of the working subgroup."""


class InvalidScalar(CryptoError):
    pass


class WrongLevel(CryptoError):
    """Ciphertext level does not fit the operation (single-hop enforcement)."""


class NotDelegatee(CryptoError):
    """Wrapped blinding scalar failed to authenticate under the given key."""


class CorruptRecord(CryptoError):
    pass


class InvalidPayload(CryptoError):
    pass
