import pytest
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from medledger.actors import open_blob, register_actor
from medledger.contracts import AccessRequest, GrantAccess, RegisterDevice, RevokeAccess, StoreRecord
from medledger.crypto import TOY, Level, SealedRecord, encrypt_element, fingerprint, keygen, rekeygen
from medledger.crypto import pre as pre_mod
from medledger.crypto.pre import decode_sealed, derive_dek, encode_sealed, reencrypt_record, seal_record
from medledger.device import VitalsReading
from medledger.proxy import ProxyService
from medledger.state import Decision, Role

from scenes import STREAM, Scene, blind_serve


def events(scene):
    return {e.request_id: e for e in scene.state.audit_log}


def test_empty_chain_scans_nothing():
    scene = Scene(seed=1)
    svc = scene.proxy_service()
    assert svc.scan() == [] and svc.denials() == []
    assert svc.step() == []


def test_scan_one_granted_one_denied():
    scene = Scene(seed=2)
    ids, _ = scene.ingest(1)
    scene.grant("g1", scene.doctor, "role:cardiologist")
    scene.grant("g2", scene.researcher, "role:cardiologist")
    q1 = scene.request(scene.doctor, "g1", ids[0])
    q2 = scene.request(scene.researcher, "g2", ids[0])
    svc = scene.proxy_service()
    svc.view.refresh()
    assert [r.request_id for r in svc.scan()] == [q1]
    assert [(r.request_id, why) for r, why in svc.denials()] == [(q2, "PolicyUnsatisfied")]
    svc.step()
    scene.b.flush()
    ev = events(scene)
    assert ev[q1].describe() == "GRANTED" and ev[q2].describe() == "DENIED(PolicyUnsatisfied)"
    svc.view.refresh()
    assert svc.scan() == [] and svc.denials() == []
    # no pending work, no transactions
    assert svc.step() == []


def test_served_result_opens_for_delegatee_only():
    scene = Scene(seed=3)
    ids, readings = scene.ingest(3)
    scene.grant("g1", scene.doctor, "role:cardiologist")
    reqs = [scene.request(scene.doctor, "g1", rid) for rid in ids]
    scene.proxy_service().step()
    scene.b.flush()
    ev = events(scene)
    for q, reading in zip(reqs, readings):
        blob = scene.b.blobs.get(ev[q].result_blob_hash)
        assert VitalsReading.from_bytes(open_blob(TOY, scene.doctor.pre.sk, blob)) == reading
        for sk in range(1, TOY.q):
            if sk != scene.doctor.pre.sk:
                with pytest.raises(pre_mod.CryptoError):
                    open_blob(TOY, sk, blob)


def test_revoked_request_is_never_served():
    scene = Scene(seed=4)
    ids, _ = scene.ingest(1)
    scene.grant("g1", scene.doctor, "role:cardiologist")
    q = scene.request(scene.doctor, "g1", ids[0])
    scene.block([scene.patient.tx(RevokeAccess("g1"))])
    svc = scene.proxy_service()
    svc.view.refresh()
    assert svc.scan() == []
    svc.step()
    scene.b.flush()
    assert events(scene)[q].describe() == "DENIED(Revoked)"
    assert svc.stats.served == 0


def test_missing_blob_is_logged():
    scene = Scene(seed=5)
    ids, _ = scene.ingest(1)
    scene.grant("g1", scene.doctor, "role:cardiologist")
    q = scene.request(scene.doctor, "g1", ids[0])
    del scene.b.blobs._blobs[bytes.fromhex(ids[0])]
    scene.proxy_service().step()
    scene.b.flush()
    assert events(scene)[q].describe() == "DENIED(MissingBlob)"


def _store_raw(scene, blob):
    ref = scene.b.blobs.put(blob)
    scene.block([scene.patient.tx(StoreRecord(ref.hex, STREAM, "patient", "", len(blob)))])
    return ref.hex


def test_malformed_records_are_logged():
    scene = Scene(seed=6)
    garbage = _store_raw(scene, b"not a sealed record")
    sealed = seal_record(TOY, scene.stream.pk, b"payload", STREAM.encode())
    first = reencrypt_record(TOY, sealed, 1, pre_mod.wrap_scalar(TOY, scene.doctor.pre.pk, 1))
    first_level = _store_raw(scene, encode_sealed(TOY, first))
    scene.grant("g1", scene.doctor, "role:cardiologist")
    q1 = scene.request(scene.doctor, "g1", garbage)
    q2 = scene.request(scene.doctor, "g1", first_level)
    scene.proxy_service().step()
    scene.b.flush()
    ev = events(scene)
    assert ev[q1].describe() == ev[q2].describe() == "DENIED(MalformedRecord)"


def test_toy_worked_vector_through_proxy():
    scene = Scene(seed=7)
    stream_kp = keygen(TOY, sk=3)
    assert stream_kp.pk == 8
    scene.block([scene.patient.tx(RegisterDevice("", b"", "toy/fixed", TOY.encode_element(8)))])
    ctx = b"toy/fixed"
    enc = encrypt_element(TOY, 8, 9, 2)
    assert (enc.c1, enc.c2) == (13, 18)
    nonce = bytes(12)
    body = AESGCM(derive_dek(TOY, 9, ctx)).encrypt(nonce, b"hr=72", ctx)
    blob = encode_sealed(TOY, SealedRecord(enc, nonce, body, ctx))
    ref = scene.b.blobs.put(blob)
    scene.block([scene.patient.tx(StoreRecord(ref.hex, "toy/fixed", "patient", "", len(blob)))])
    rk = rekeygen(TOY, 3, scene.doctor.pre.pk, 7, scene.dep.rng)
    assert rk.rk1 == 6
    grant = GrantAccess(
        "g-fixed", "toy/fixed", "doctor", "role:cardiologist",
        TOY.encode_scalar(rk.rk1), TOY.encode_element(rk.wrapped_r.eph_pk), rk.wrapped_r.sealed,
        fingerprint(TOY, 8), fingerprint(TOY, scene.doctor.pre.pk), "proxy",
    )
    scene.block([scene.patient.tx(grant)])
    q = scene.request(scene.doctor, "g-fixed", ref.hex)
    scene.proxy_service().step()
    scene.b.flush()
    result = decode_sealed(TOY, scene.b.blobs.get(events(scene)[q].result_blob_hash))
    assert (result.encapsulation.c1, result.encapsulation.c2, result.encapsulation.level) == (13, 8, Level.FIRST)
    assert result.body == body
    assert open_blob(TOY, scene.doctor.pre.sk, scene.b.blobs.get(events(scene)[q].result_blob_hash)) == b"hr=72"


def test_restart_mid_batch_no_duplicates():
    scene = Scene(seed=8)
    ids, _ = scene.ingest(4)
    scene.grant("g1", scene.doctor, "role:cardiologist")
    reqs = [scene.request(scene.doctor, "g1", rid) for rid in ids]
    first = scene.proxy_service()
    first.step()
    # crash before the logs are sealed; a fresh process starts over from the chain
    second = scene.proxy_service()
    second.step()
    assert len(second.stats.errors) == 4 and all(e.endswith("DuplicateId") for e in second.stats.errors)
    scene.b.flush()
    logged = [e.request_id for e in scene.state.audit_log]
    assert sorted(logged) == sorted(reqs)
    third = scene.proxy_service()
    assert third.step() == []


def test_in_flight_retry_after_lost_log():
    scene = Scene(seed=9)
    ids, _ = scene.ingest(1)
    scene.grant("g1", scene.doctor, "role:cardiologist")
    q = scene.request(scene.doctor, "g1", ids[0])
    svc = scene.proxy_service(retry_after=2)
    assert len(svc.step()) == 1
    # the node loses its pool
    scene.b.mirror.pool.txs.clear()
    scene.b.mirror.pool.on_new_tip()
    assert svc.step() == []
    assert len(svc.step()) == 1 and svc.stats.resubmitted == 1
    scene.b.flush()
    assert [e.request_id for e in scene.state.audit_log] == [q]


def test_two_proxies_disjoint_grants():
    scene = Scene(seed=10)
    proxy2 = scene.dep.identity("proxy2", Role.PROXY, with_pre=False)
    scene.block([scene.dep.admin.tx(register_actor(scene.g, proxy2))])
    ids, _ = scene.ingest(2)
    scene.grant("g1", scene.doctor, "role:cardiologist")
    scene.grant("g2", scene.doctor, "role:cardiologist", proxy_id="proxy2")
    q1 = scene.request(scene.doctor, "g1", ids[0])
    q2 = scene.request(scene.doctor, "g2", ids[1])
    p1 = scene.proxy_service()
    p2 = ProxyService("proxy2", proxy2.signing, scene.client, scene.dep.genesis)
    p1.step()
    p2.step()
    scene.b.flush()
    ev = events(scene)
    assert ev[q1].proxy_id == "proxy" and ev[q2].proxy_id == "proxy2"
    assert p1.stats.served == p2.stats.served == 1


def test_serve_path_never_holds_a_dek(monkeypatch):
    scene, reqs, payloads, svc, leaked = blind_serve(monkeypatch)
    assert svc.stats.served == 2 and not svc.stats.errors
    assert leaked == []
    for q, p in zip(reqs, payloads):
        blob = scene.b.blobs.get(events(scene)[q].result_blob_hash)
        assert open_blob(scene.g, scene.doctor.pre.sk, blob) == p


def test_run_loop_iterations():
    scene = Scene(seed=12)
    ids, _ = scene.ingest(1)
    scene.grant("g1", scene.doctor, "role:cardiologist")
    scene.block([scene.doctor.tx(AccessRequest("q", "g1", ids[0]))])
    svc = scene.proxy_service()
    svc.run_loop(interval=0, max_iterations=2)
    scene.b.flush()
    assert [e.describe() for e in scene.state.audit_log] == ["GRANTED"]
    assert scene.state.requests["q"].decision == Decision.GRANTED
