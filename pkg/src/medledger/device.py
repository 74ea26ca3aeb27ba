"""Simulated bedside / wearable devices producing vital-sign readings.

Readings follow a seeded bounded random walk. A device seals each reading
under its patient's stream key and files it with a StoreRecord. Sealing
randomness is derived from a device secret and the reading bytes, so the same
reading always yields the same blob and record id and a resend is caught by
the contract as ``DuplicateId``.
"""

from __future__ import annotations

import json
import random
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from medledger import codec
from medledger.contracts import StoreRecord
from medledger.crypto.entropy import DerivedEntropy
from medledger.crypto.groups import GroupParams
from medledger.crypto.pre import encode_sealed, seal_record
from medledger.crypto.signing import SigningKey
from medledger.errors import Rejected
from medledger.ledger import make_tx


@dataclass(frozen=True)
class VitalsReading:
    device_id: str
    seq: int
    heart_rate_bpm: int
    systolic_mmHg: int
    diastolic_mmHg: int
    spo2_pct: int
    temp_mdegC: int
    ts: int

    def to_bytes(self) -> bytes:
        return codec.encode(self)

    @classmethod
    def from_bytes(cls, data: bytes) -> "VitalsReading":
        return codec.decode(cls, data)


# hard limits no profile may exceed
LIMITS = {
    "heart_rate_bpm": (20, 250),
    "systolic_mmHg": (50, 260),
    "diastolic_mmHg": (30, 160),
    "spo2_pct": (50, 100),
    "temp_mdegC": (30_000, 43_000),
}


@dataclass(frozen=True)
class VitalRange:
    lo: int
    hi: int
    step: int
    start: int | None = None

    def initial(self) -> int:
        return self.start if self.start is not None else (self.lo + self.hi) // 2


@dataclass(frozen=True)
class VitalsProfile:
    heart_rate_bpm: VitalRange = VitalRange(55, 110, 3, 72)
    systolic_mmHg: VitalRange = VitalRange(95, 150, 3, 120)
    diastolic_mmHg: VitalRange = VitalRange(55, 95, 2, 78)
    spo2_pct: VitalRange = VitalRange(90, 100, 1, 98)
    temp_mdegC: VitalRange = VitalRange(36_000, 38_500, 50, 36_800)
    interval_s: int = 60
    start_ts: int = 0

    def __post_init__(self) -> None:
        for name, (lo, hi) in LIMITS.items():
            r = getattr(self, name)
            if not lo <= r.lo <= r.hi <= hi:
                raise ValueError(f"{name} range [{r.lo}, {r.hi}] outside [{lo}, {hi}]")
            if r.step < 0 or not r.lo <= r.initial() <= r.hi:
                raise ValueError(f"{name}: bad step or start")
        if self.diastolic_mmHg.lo >= self.systolic_mmHg.hi:
            raise ValueError("diastolic range must sit below systolic")
        if self.interval_s <= 0:
            raise ValueError("interval_s must be positive")

    @classmethod
    def from_dict(cls, data: dict) -> "VitalsProfile":
        kwargs = {}
        for f in fields(cls):
            if f.name in data:
                v = data[f.name]
                kwargs[f.name] = VitalRange(**v) if isinstance(v, dict) else v
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown profile keys: {sorted(unknown)}")
        return cls(**kwargs)

    @classmethod
    def load(cls, path: str | Path) -> "VitalsProfile":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return asdict(self)


_VITALS = tuple(LIMITS)


def generate(profile: VitalsProfile, seed: int, n: int, device_id: str = "device", first_seq: int = 1) -> list[VitalsReading]:
    """``n`` readings; identical for identical ``(profile, seed, device_id)``."""
    rng = random.Random(f"vitals:{seed}:{device_id}")
    cur = {name: getattr(profile, name).initial() for name in _VITALS}
    out = []
    for i in range(n):
        if i:
            for name in _VITALS:
                r = getattr(profile, name)
                cur[name] = min(r.hi, max(r.lo, cur[name] + rng.randint(-r.step, r.step)))
        # keep a positive pulse pressure
        dia = min(cur["diastolic_mmHg"], cur["systolic_mmHg"] - 1)
        dia = max(dia, profile.diastolic_mmHg.lo)
        out.append(
            VitalsReading(
                device_id=device_id,
                seq=first_seq + i,
                heart_rate_bpm=cur["heart_rate_bpm"],
                systolic_mmHg=max(cur["systolic_mmHg"], dia + 1),
                diastolic_mmHg=dia,
                spo2_pct=cur["spo2_pct"],
                temp_mdegC=cur["temp_mdegC"],
                ts=profile.start_ts + (first_seq + i - 1) * profile.interval_s,
            )
        )
    return out


@dataclass
class Device:
    device_id: str
    signing_key: SigningKey
    secret: bytes
    owner: str
    stream_id: str
    stream_pk: int
    group: GroupParams
    nonce: int | None = None
    sent: list[bytes] = field(default_factory=list)

    @property
    def context(self) -> bytes:
        return self.stream_id.encode()

    def seal(self, reading: VitalsReading) -> bytes:
        data = reading.to_bytes()
        entropy = DerivedEntropy(self.secret, b"seal/" + data)
        return encode_sealed(self.group, seal_record(self.group, self.stream_pk, data, self.context, entropy))

    def ingest(self, readings, client) -> list[str]:
        """Seal, store and file each reading; returns record ids (blob hashes, hex).

        A rejected StoreRecord raises :class:`Rejected` with the contract's reason.
        """
        if self.nonce is None:
            self.nonce = client.next_nonce(self.device_id) - 1
        ids = []
        for reading in readings:
            blob = self.seal(reading)
            ref = client.put_blob(blob)
            body = StoreRecord(ref.hex, self.stream_id, self.owner, self.device_id, ref.size)
            tx = make_tx(self.signing_key, self.device_id, self.nonce + 1, body)
            try:
                client.submit(tx)
            except Rejected as exc:
                if exc.reason == "BadNonce":
                    self.nonce = None
                raise
            self.nonce += 1
            self.sent.append(tx.tx_id)
            ids.append(ref.hex)
        return ids
