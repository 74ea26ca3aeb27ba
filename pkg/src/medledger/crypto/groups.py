"""Prime-order subgroups of Z_p^* used by the re-encryption scheme."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import gmpy2

from medledger.crypto.errors import InvalidElement, InvalidScalar

# RFC 3526 2048-bit MODP group; a safe prime with p = 7 (mod 8), so 2 is a
# quadratic residue and generates the subgroup of order (p - 1) / 2.
_RFC3526_2048 = int(
    "FFFFFFFFFFFFFFFFC90FDAA22168C234C4C6628B80DC1CD129024E088A67CC74"
    "020BBEA63B139B22514A08798E3404DDEF9519B3CD3A431B302B0A6DF25F1437"
    "4FE1356D6D51C245E485B576625E7EC6F44C42E9A637ED6B0BFF5CB6F406B7ED"
    "EE386BFB5A899FA5AE9F24117C4B1FE649286651ECE45B3DC2007CB8A163BF05"
    "98DA48361C55D39A69163FA8FD24CF5F83655D23DCA3AD961C62F356208552BB"
    "9ED529077096966D670C354E4ABC9804F1746C08CA18217C32905E462E36CE3B"
    "E39E772C180E86039B2783A2EC07A28FB5C55DF06F4C52C9DE2BCBF695581718"
    "3995497CEA956AE515D2261898FA051015728E5A8AACAA68FFFFFFFFFFFFFFFF",
    16,
)

_WINDOW = 8


@dataclass(frozen=True)
class GroupParams:
    """Order-``q`` subgroup of Z_p^* generated by ``g``.

    Elements are plain ints in ``[1, p)``; scalars are ints mod ``q``.
    """

    name: str
    p: int
    q: int
    g: int
    _mp: object = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if (self.p - 1) % self.q != 0:
            raise ValueError("q must divide p - 1")
        if self.g == 1 or pow(self.g, self.q, self.p) != 1:
            raise ValueError("g must generate the order-q subgroup")
        object.__setattr__(self, "_mp", gmpy2.mpz(self.p))

    @property
    def element_size(self) -> int:
        return (self.p.bit_length() + 7) // 8

    @property
    def scalar_size(self) -> int:
        return (self.q.bit_length() + 7) // 8

    @property
    def safe_prime(self) -> bool:
        return self.p == 2 * self.q + 1

    # -- arithmetic ---------------------------------------------------------

    def exp(self, base: int, e: int) -> int:
        return int(gmpy2.powmod(base, e, self._mp))

    def base_exp(self, e: int) -> int:
        """``g^e mod p`` using a precomputed fixed-base window table."""
        table = self._table
        if table is None:
            return self.exp(self.g, e)
        e %= self.q
        acc = gmpy2.mpz(1)
        p = self._mp
        i = 0
        mask = (1 << _WINDOW) - 1
        while e:
            digit = e & mask
            if digit:
                acc = acc * table[i][digit] % p
            e >>= _WINDOW
            i += 1
        return int(acc)

    @cached_property
    def _table(self):
        if self.q.bit_length() < 64:
            return None
        rows = []
        base = gmpy2.mpz(self.g)
        for _ in range((self.q.bit_length() + _WINDOW - 1) // _WINDOW):
            row = [gmpy2.mpz(1)]
            for _ in range((1 << _WINDOW) - 1):
                row.append(row[-1] * base % self._mp)
            rows.append(row)
            base = row[-1] * base % self._mp
        return rows

    def mul(self, x: int, y: int) -> int:
        return x * y % self.p

    def inv(self, x: int) -> int:
        return int(gmpy2.invert(x, self._mp))

    def scalar_inv(self, s: int) -> int:
        if s % self.q == 0:
            raise InvalidScalar("zero has no inverse mod q")
        return int(gmpy2.invert(s, self.q))

    # -- validation ---------------------------------------------------------

    def is_element(self, x: int) -> bool:
        if not isinstance(x, int) or not 1 <= x < self.p:
            return False
        if self.safe_prime:
            return gmpy2.legendre(x, self._mp) == 1
        return self.exp(x, self.q) == 1

    def check_element(self, x: int) -> int:
        if not self.is_element(x):
            raise InvalidElement(f"{x!r} is not in the order-q subgroup of {self.name}")
        return x

    def check_scalar(self, s: int) -> int:
        if not isinstance(s, int) or not 1 <= s < self.q:
            raise InvalidScalar(f"scalar must be in [1, q-1], got {s!r}")
        return s

    def random_scalar(self, entropy) -> int:
        return entropy.randrange(1, self.q)

    # -- fixed-width encoding -----------------------------------------------

    def encode_element(self, x: int) -> bytes:
        return x.to_bytes(self.element_size, "big")

    def decode_element(self, data: bytes) -> int:
        if len(data) != self.element_size:
            raise InvalidElement(f"element must be {self.element_size} bytes, got {len(data)}")
        return self.check_element(int.from_bytes(data, "big"))

    def encode_scalar(self, s: int) -> bytes:
        return s.to_bytes(self.scalar_size, "big")

    def decode_scalar(self, data: bytes) -> int:
        if len(data) != self.scalar_size:
            raise InvalidScalar(f"scalar must be {self.scalar_size} bytes, got {len(data)}")
        return self.check_scalar(int.from_bytes(data, "big"))

    def elements(self) -> list[int]:
        """All subgroup elements; only sensible for tiny groups."""
        if self.q > 1 << 16:
            raise ValueError("refusing to enumerate a large group")
        return [self.exp(self.g, i) for i in range(self.q)]


TOY = GroupParams("toy", p=23, q=11, g=2)
PROD = GroupParams("prod", p=_RFC3526_2048, q=(_RFC3526_2048 - 1) // 2, g=2)

GROUPS = {TOY.name: TOY, PROD.name: PROD}


def group_by_name(name: str) -> GroupParams:
    try:
        return GROUPS[name]
    except KeyError:
        raise ValueError(f"unknown group parameter set {name!r}") from None
