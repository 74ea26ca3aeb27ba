"""Entropy sources.

Anything with ``randrange(start, stop)`` and ``randbytes(n)`` works, which
covers :class:`random.Random` (tests) and :class:`secrets.SystemRandom`.
"""

from __future__ import annotations

import hashlib
import secrets

system_entropy = secrets.SystemRandom()


class DerivedEntropy:
    """Deterministic stream keyed by a secret and a label.

    SHAKE-256 in counter mode. Used where repeated inputs must produce
    repeated outputs, e.g. a device re-sealing a reading it already sent.
    """

    def __init__(self, key: bytes, label: bytes) -> None:
        self._seed = hashlib.sha256(len(key).to_bytes(4, "big") + key + label).digest()
        self._counter = 0
        self._buf = b""

    def randbytes(self, n: int) -> bytes:
        while len(self._buf) < n:
            block = hashlib.shake_256(self._seed + self._counter.to_bytes(8, "big")).digest(64)
            self._counter += 1
            self._buf += block
        out, self._buf = self._buf[:n], self._buf[n:]
        return out

    def randrange(self, start: int, stop: int) -> int:
        width = stop - start
        if width <= 0:
            raise ValueError("empty range")
        nbytes = (width.bit_length() + 7) // 8 + 8
        # rejection sampling keeps the output exactly uniform
        limit = (1 << (8 * nbytes)) - ((1 << (8 * nbytes)) % width)
        while True:
            v = int.from_bytes(self.randbytes(nbytes), "big")
            if v < limit:
                return start + v % width
