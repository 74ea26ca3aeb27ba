import hashlib
import random
import threading

import pytest
from hypothesis import given, settings, strategies as st

from medledger.blobstore import BlobRef, CorruptBlob, FileBlobStore, MemoryBlobStore, NotFound
from medledger.device import VitalsProfile, generate

EMPTY_SHA256 = "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"


@pytest.fixture(params=["memory", "file"])
def store(request, tmp_path):
    return MemoryBlobStore() if request.param == "memory" else FileBlobStore(tmp_path / "blobs")


def test_empty_blob_vector(store):
    ref = store.put(b"")
    assert ref.hex == EMPTY_SHA256 == hashlib.sha256(b"").hexdigest()
    assert ref.size == 0 and store.get(ref) == b""


def test_put_is_idempotent(store):
    assert store.put(b"abc") == store.put(b"abc")
    assert store.get(store.put(b"abc").hex) == b"abc"


def test_has_and_not_found(store):
    ref = BlobRef(hashlib.sha256(b"x").digest(), 1)
    assert not store.has(ref)
    with pytest.raises(NotFound):
        store.get(ref)
    with pytest.raises(NotFound):
        store.get("not hex")
    with pytest.raises(NotFound):
        store.get(b"short")
    store.put(b"x")
    assert store.has(ref) and store.has(ref.hex) and store.has(ref.hash)


def test_distinct_inputs_distinct_refs(store):
    rng = random.Random(3)
    corpus = {rng.randbytes(rng.randint(0, 64)) for _ in range(500)}
    refs = {store.put(x).hash for x in corpus}
    assert len(refs) == len(corpus)


@settings(max_examples=50)
@given(st.binary(max_size=2048))
def test_round_trip_memory(data):
    s = MemoryBlobStore()
    assert s.get(s.put(data)) == data


def test_fan_out_layout(tmp_path):
    s = FileBlobStore(tmp_path)
    ref = s.put(b"hello")
    h = ref.hex
    assert s.path_for(ref) == tmp_path / h[:2] / h[2:4] / h
    assert (tmp_path / h[:2] / h[2:4] / h).read_bytes() == b"hello"


def test_disk_mutation_is_corrupt(tmp_path):
    s = FileBlobStore(tmp_path)
    ref = s.put(b"sealed bytes")
    path = s.path_for(ref)
    raw = bytearray(path.read_bytes())
    for i in range(len(raw)):
        mutated = bytearray(raw)
        mutated[i] ^= 0x40
        path.write_bytes(bytes(mutated))
        with pytest.raises(CorruptBlob):
            s.get(ref)
    path.write_bytes(bytes(raw))
    assert s.get(ref) == b"sealed bytes"


def test_memory_mutation_is_corrupt():
    s = MemoryBlobStore()
    ref = s.put(b"abc")
    s._blobs[ref.hash] = b"abd"
    with pytest.raises(CorruptBlob):
        s.get(ref)


def test_delete_file_fault(tmp_path):
    s = FileBlobStore(tmp_path)
    ref = s.put(b"abc")
    s.path_for(ref).unlink()
    assert not s.has(ref)
    with pytest.raises(NotFound):
        s.get(ref)


def test_concurrent_identical_puts_converge(tmp_path):
    s = FileBlobStore(tmp_path)
    data = random.Random(1).randbytes(1 << 16)
    refs = []
    barrier = threading.Barrier(8)

    def worker():
        barrier.wait()
        refs.append(s.put(data))

    threads = [threading.Thread(target=worker) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(set(refs)) == 1 and s.get(refs[0]) == data
    leftovers = [p for p in tmp_path.rglob("*") if p.is_file() and p.name.startswith(".")]
    assert leftovers == []


def test_iteration(tmp_path):
    s = FileBlobStore(tmp_path)
    for x in (b"a", b"b", b"c"):
        s.put(x)
    assert sorted(s) == [b"a", b"b", b"c"]


def test_no_plaintext_in_store(fixture_chain_100):
    b = fixture_chain_100
    readings = generate(VitalsProfile(), 7, 20, "patient/monitor")
    payloads = [r.to_bytes() for r in readings]
    for blob in b.blobs:
        for p in payloads:
            assert p not in blob
