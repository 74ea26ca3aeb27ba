"""Clients for the node protocol, plus a verifying client-side chain replica.

:class:`LocalClient` calls a :class:`~medledger.net.node.Node` in-process and
:class:`TcpClient` talks to a served node; both speak the same frames and
share every method below.
"""

from __future__ import annotations

import hashlib
import socket
import threading
import time
from typing import Callable

from medledger.blobstore import BlobRef, CorruptBlob, NotFound
from medledger.errors import Rejected
from medledger.ledger import Block, Chain, Genesis, Transaction
from medledger.net.wire import (
    BlobData,
    BlobQuery,
    BlockRange,
    Empty,
    MsgKind,
    StateQuery,
    StateSummary,
    Tip,
    TxBatch,
    TxResult,
    WireError,
    decode_frame,
    encode_frame,
    read_frame,
)
from medledger.state import LedgerState


class NodeClient:
    """Typed calls on top of a raw ``frame -> frame`` exchange."""

    def exchange(self, frame: bytes) -> bytes:
        raise NotImplementedError

    def pump(self) -> None:
        """Let time pass while waiting for the network."""
        time.sleep(0.05)

    def request(self, kind: MsgKind, payload):
        rkind, rpayload = decode_frame(self.exchange(encode_frame(kind, payload)))
        if rkind == MsgKind.ERROR:
            if rpayload.reason == "NotFound":
                raise NotFound(rpayload.detail)
            if rpayload.reason == "CorruptBlob":
                raise CorruptBlob(rpayload.detail)
            raise Rejected(rpayload.reason, rpayload.detail)
        if rkind != MsgKind(kind | 0x80):
            raise WireError(f"expected a reply to {kind.name}, got {rkind.name}")
        return rpayload

    def submit(self, tx: Transaction) -> bytes:
        """Pool ``tx`` at the node; raises :class:`Rejected` with the contract reason."""
        self.request(MsgKind.SUBMIT_TX, TxBatch((tx,)))
        return tx.tx_id

    def submit_many(self, txs: list[Transaction]) -> list[TxResult]:
        if not txs:
            return []
        if len(txs) == 1:
            try:
                self.submit(txs[0])
                return [TxResult(txs[0].tx_id, True)]
            except Rejected as exc:
                return [TxResult(txs[0].tx_id, False, exc.reason, exc.detail)]
        return list(self.request(MsgKind.SUBMIT_TX, TxBatch(tuple(txs))).results)

    def tip(self) -> Tip:
        return self.request(MsgKind.GET_TIP, Empty())

    def blocks(self, start: int, count: int) -> list[Block]:
        return list(self.request(MsgKind.GET_BLOCK, BlockRange(start, count)).blocks)

    def summary(self, actor_id: str = "") -> StateSummary:
        return self.request(MsgKind.GET_STATE, StateQuery(actor_id))

    def next_nonce(self, actor_id: str) -> int:
        s = self.summary(actor_id)
        if not s.registered:
            raise Rejected("WrongSigner", f"unregistered sender {actor_id!r}")
        return s.pending_nonce + 1

    def put_blob(self, data: bytes) -> BlobRef:
        ref = self.request(MsgKind.PUT_BLOB, BlobData(data))
        if ref.hash != hashlib.sha256(data).digest():
            raise CorruptBlob("node returned the wrong content address")
        return BlobRef(ref.hash, ref.size)

    def get_blob(self, ref: BlobRef | bytes | str) -> bytes:
        key = ref.hash if isinstance(ref, BlobRef) else bytes.fromhex(ref) if isinstance(ref, str) else ref
        data = self.request(MsgKind.GET_BLOB, BlobQuery(key)).data
        if hashlib.sha256(data).digest() != key:
            raise CorruptBlob(key.hex())
        return data

    def wait(self, predicate: Callable[[], bool], timeout: float = 30.0) -> bool:
        """Pump until ``predicate()`` holds; False on timeout (wall seconds)."""
        deadline = time.monotonic() + timeout
        while not predicate():
            if time.monotonic() > deadline:
                return False
            self.pump()
        return True


class LocalClient(NodeClient):
    def __init__(self, node, pump: Callable[[], None] | None = None) -> None:
        self.node = node
        self._pump = pump

    def exchange(self, frame: bytes) -> bytes:
        return self.node.handle(frame)

    def pump(self) -> None:
        if self._pump is None:
            # a lone node: propose whatever is pending
            self.node.propose(int(time.time() * 1000), force=len(self.node.pool) > 0)
            self.node.drain_outbox()
        else:
            self._pump()


class TcpClient(NodeClient):
    """One persistent connection; reconnects once on a broken pipe."""

    def __init__(self, address: str | tuple[str, int], timeout: float = 30.0) -> None:
        if isinstance(address, str):
            host, _, port = address.rpartition(":")
            address = (host or "127.0.0.1", int(port))
        self.address = address
        self.timeout = timeout
        self._sock: socket.socket | None = None
        self._lock = threading.Lock()

    def _connect(self) -> socket.socket:
        sock = socket.create_connection(self.address, timeout=self.timeout)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        return sock

    def _read_exact(self, n: int) -> bytes:
        buf = bytearray()
        while len(buf) < n:
            chunk = self._sock.recv(n - len(buf))
            if not chunk:
                break
            buf += chunk
        return bytes(buf)

    def exchange(self, frame: bytes) -> bytes:
        with self._lock:
            for attempt in (0, 1):
                try:
                    if self._sock is None:
                        self._sock = self._connect()
                    self._sock.sendall(frame)
                    reply = read_frame(self._read_exact)
                    if reply is None:
                        raise ConnectionError("node closed the connection")
                    return reply
                except (OSError, ConnectionError):
                    self.close_locked()
                    if attempt:
                        raise
            raise AssertionError("unreachable")

    def close_locked(self) -> None:
        if self._sock is not None:
            try:
                self._sock.close()
            finally:
                self._sock = None

    def close(self) -> None:
        with self._lock:
            self.close_locked()


class ChainView:
    """Client-side replica: pulls blocks and re-validates every link and state root.

    Raises :class:`~medledger.errors.BadChain` naming the first bad height.
    """

    def __init__(self, client: NodeClient, genesis: Genesis) -> None:
        self.client = client
        self.chain = Chain(genesis)

    @property
    def state(self) -> LedgerState:
        return self.chain.state

    @property
    def height(self) -> int:
        return self.chain.height

    def refresh(self) -> "ChainView":
        target = self.client.tip().height
        while self.chain.height < target:
            blocks = self.client.blocks(self.chain.height + 1, 64)
            if not blocks:
                break
            for block in blocks:
                self.chain.append_or_raise(block)
        return self

    def find_tx(self, tx_id: bytes) -> int | None:
        return self.chain.tx_index.get(tx_id)

    def wait_for_txs(self, tx_ids, timeout: float = 60.0) -> bool:
        """Pump until every tx is in a block this view has verified."""
        pending = set(tx_ids)

        def done() -> bool:
            self.refresh()
            pending.difference_update([t for t in pending if t in self.chain.tx_index])
            return not pending

        return self.client.wait(done, timeout)
