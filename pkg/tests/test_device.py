import json

import pytest
from hypothesis import given, settings, strategies as st

from medledger.actors import open_blob
from medledger.crypto.pre import decode_sealed
from medledger.crypto.signing import SigningKey
from medledger.device import LIMITS, Device, VitalRange, VitalsProfile, VitalsReading, generate
from medledger.errors import Rejected

from scenes import STREAM, Scene


def test_generate_deterministic():
    p = VitalsProfile()
    assert generate(p, 5, 50) == generate(p, 5, 50)
    assert generate(p, 5, 50) != generate(p, 6, 50)
    assert generate(p, 5, 0) == []
    # a longer series extends a shorter one
    assert generate(p, 5, 80)[:50] == generate(p, 5, 50)


def test_ten_thousand_readings_stay_in_range():
    p = VitalsProfile()
    readings = generate(p, 42, 10_000, "d")
    for name in LIMITS:
        r = getattr(p, name)
        vals = [getattr(x, name) for x in readings]
        assert r.lo <= min(vals) and max(vals) <= r.hi, name
    assert all(x.diastolic_mmHg < x.systolic_mmHg for x in readings)
    assert [x.seq for x in readings] == list(range(1, 10_001))
    assert all(b.ts - a.ts == p.interval_s for a, b in zip(readings, readings[1:]))


@settings(max_examples=30)
@given(st.integers(min_value=0, max_value=2**31), st.integers(min_value=20, max_value=240), st.integers(min_value=0, max_value=10))
def test_walk_respects_any_valid_profile(seed, lo, width):
    hr = VitalRange(lo, min(250, lo + width), 5)
    p = VitalsProfile(heart_rate_bpm=hr)
    for x in generate(p, seed, 200):
        assert hr.lo <= x.heart_rate_bpm <= hr.hi


def test_profile_validation(tmp_path):
    with pytest.raises(ValueError):
        VitalsProfile(heart_rate_bpm=VitalRange(10, 100, 1))
    with pytest.raises(ValueError):
        VitalsProfile(spo2_pct=VitalRange(90, 101, 1))
    with pytest.raises(ValueError):
        VitalsProfile(interval_s=0)
    with pytest.raises(ValueError):
        VitalsProfile.from_dict({"bogus": 1})
    path = tmp_path / "profile.json"
    path.write_text(json.dumps({"heart_rate_bpm": {"lo": 60, "hi": 70, "step": 1}, "interval_s": 5}))
    p = VitalsProfile.load(path)
    assert p.heart_rate_bpm == VitalRange(60, 70, 1) and p.interval_s == 5
    assert VitalsProfile.from_dict(p.to_dict()) == p


def test_reading_round_trip():
    r = generate(VitalsProfile(), 1, 1, "dev")[0]
    assert VitalsReading.from_bytes(r.to_bytes()) == r


def test_ingest_one_reading_end_to_end():
    scene = Scene(seed=31)
    ids, readings = scene.ingest(1)
    (rid,) = ids
    meta = scene.state.records[rid]
    assert meta.blob_hash == rid and meta.device_id == "patient/monitor" and meta.stream_id == STREAM
    blob = scene.b.blobs.get(rid)
    assert meta.size == len(blob)
    assert readings[0].to_bytes() not in blob
    assert decode_sealed(scene.g, blob).context == STREAM.encode()
    assert VitalsReading.from_bytes(open_blob(scene.g, scene.stream.sk, blob)) == readings[0]


def test_duplicate_reading_rejected():
    scene = Scene(seed=32)
    reading = generate(VitalsProfile(), 1, 1, "patient/monitor")[0]
    assert scene.device.seal(reading) == scene.device.seal(reading)
    scene.device.ingest([reading], scene.client)
    scene.b.flush()
    with pytest.raises(Rejected) as info:
        scene.device.ingest([reading], scene.client)
    assert info.value.reason == "DuplicateId"
    # the device nonce did not advance, so the next fresh reading still lands
    nxt = generate(VitalsProfile(), 1, 2, "patient/monitor")[1]
    scene.device.ingest([nxt], scene.client)
    scene.b.flush()
    assert len(scene.state.records) == 2


def test_unregistered_device_rejected():
    scene = Scene(seed=33)
    rogue = Device("rogue", SigningKey.generate(scene.dep.rng), b"k" * 32, "patient", STREAM, scene.stream.pk, scene.g)
    with pytest.raises(Rejected) as info:
        rogue.ingest(generate(VitalsProfile(), 1, 1, "rogue"), scene.client)
    assert info.value.reason == "WrongSigner"


def test_ingest_sends_only_sealed_bytes():
    scene = Scene(seed=34)
    sent = []
    put = scene.client.put_blob
    scene.client.put_blob = lambda data: sent.append(data) or put(data)
    _, readings = scene.ingest(5)
    assert len(sent) == 5
    for blob, r in zip(sent, readings):
        assert r.to_bytes() not in blob
    chain = b"".join(blk.to_bytes() for blk in scene.b.blocks)
    assert not any(r.to_bytes() in chain for r in readings)
