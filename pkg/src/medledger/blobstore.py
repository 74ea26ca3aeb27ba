"""Content-addressed storage for sealed records.

Blobs are keyed by the SHA-256 of their bytes and re-hashed on every read,
so at-rest tampering surfaces as :class:`CorruptBlob` instead of bad data.
"""

from __future__ import annotations

import hashlib
import os
import tempfile
import threading
from dataclasses import dataclass
from pathlib import Path


class BlobError(Exception):
    pass


class NotFound(BlobError, KeyError):
    pass


class CorruptBlob(BlobError):
    pass


@dataclass(frozen=True)
class BlobRef:
    hash: bytes
    size: int

    @property
    def hex(self) -> str:
        return self.hash.hex()

    @classmethod
    def from_hex(cls, digest: str, size: int = 0) -> "BlobRef":
        return cls(bytes.fromhex(digest), size)


def ref_for(data: bytes) -> BlobRef:
    return BlobRef(hashlib.sha256(data).digest(), len(data))


class MemoryBlobStore:
    def __init__(self) -> None:
        self._blobs: dict[bytes, bytes] = {}
        self._lock = threading.Lock()

    def put(self, data: bytes) -> BlobRef:
        ref = ref_for(data)
        with self._lock:
            self._blobs.setdefault(ref.hash, bytes(data))
        return ref

    def get(self, ref: BlobRef | bytes | str) -> bytes:
        key = _key(ref)
        try:
            data = self._blobs[key]
        except KeyError:
            raise NotFound(key.hex()) from None
        if hashlib.sha256(data).digest() != key:
            raise CorruptBlob(key.hex())
        return data

    def has(self, ref: BlobRef | bytes | str) -> bool:
        return _key(ref) in self._blobs

    def __iter__(self):
        return iter(list(self._blobs.values()))


class FileBlobStore:
    """One file per blob under ``root/aa/bb/<hex digest>``."""

    def __init__(self, root: str | Path) -> None:
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def path_for(self, ref: BlobRef | bytes | str) -> Path:
        h = _key(ref).hex()
        return self.root / h[:2] / h[2:4] / h

    def put(self, data: bytes) -> BlobRef:
        ref = ref_for(data)
        path = self.path_for(ref)
        if path.exists():
            return ref
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".put-")
        try:
            with os.fdopen(fd, "wb") as f:
                f.write(data)
                f.flush()
                os.fsync(f.fileno())
            # identical concurrent puts race to the same bytes; either rename wins
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        return ref

    def get(self, ref: BlobRef | bytes | str) -> bytes:
        path = self.path_for(ref)
        try:
            data = path.read_bytes()
        except FileNotFoundError:
            raise NotFound(path.name) from None
        if hashlib.sha256(data).hexdigest() != path.name:
            raise CorruptBlob(path.name)
        return data

    def has(self, ref: BlobRef | bytes | str) -> bool:
        return self.path_for(ref).is_file()

    def __iter__(self):
        for path in sorted(self.root.glob("??/??/*")):
            if not path.name.startswith("."):
                yield path.read_bytes()


def _key(ref: BlobRef | bytes | str) -> bytes:
    if isinstance(ref, BlobRef):
        return ref.hash
    if isinstance(ref, str):
        try:
            key = bytes.fromhex(ref)
        except ValueError:
            raise NotFound(ref) from None
    else:
        key = bytes(ref)
    if len(key) != 32:
        raise NotFound(key.hex())
    return key
