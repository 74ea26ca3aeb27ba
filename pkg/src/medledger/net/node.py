"""Validator / full node runtime, independent of transport.

A :class:`Node` answers framed requests (:meth:`Node.handle`) and drives the
peer protocol through :meth:`Node.tick` and :meth:`Node.handle_response`.
Both only append to ``node.outbox``; the transport (in-process simulator or
TCP) drains it and delivers. Block application is serialized by
``node.lock``.
"""

from __future__ import annotations

import logging
import random
import threading
from dataclasses import dataclass
from pathlib import Path

from medledger.blobstore import BlobError, CorruptBlob, MemoryBlobStore, NotFound
from medledger.crypto.signing import SigningKey
from medledger.errors import BlockRejected, Rejected
from medledger.ledger import (
    Block,
    Chain,
    Genesis,
    Transaction,
    apply_tx,
    check_envelope,
    load_chain,
    propose_block,
    save_block,
    select_proposer,
)
from medledger.net.wire import (
    AnnounceResult,
    BlobData,
    BlobRefMsg,
    BlockRange,
    Blocks,
    Empty,
    MsgKind,
    StateSummary,
    SubmitResult,
    Tip,
    TxBatch,
    TxResult,
    WireError,
    decode_frame,
    encode_frame,
    error_frame,
)
from medledger.state import LedgerState

log = logging.getLogger(__name__)

MAX_HELD_PER_SENDER = 1024
MAX_BLOCKS_PER_REPLY = 64
MAX_FUTURE_BLOCKS = 256


@dataclass(frozen=True)
class Outgoing:
    dst: str
    kind: MsgKind
    payload: object


@dataclass
class NodeTiming:
    """Intervals in milliseconds. ``empty_block_ms = 0`` disables empty blocks."""

    sync_ms: int = 300
    regossip_ms: int = 600
    empty_block_ms: int = 0


class Mempool:
    """Pending txs plus the speculative state they produce on top of the tip.

    A tx whose nonce is ahead of its sender's next nonce is held until the
    gap closes, so out-of-order gossip never loses a tx.
    """

    def __init__(self, chain: Chain) -> None:
        self.chain = chain
        self.txs: dict[bytes, Transaction] = {}
        self.held: dict[tuple[str, int], Transaction] = {}
        self._reset_spec()

    def _reset_spec(self) -> None:
        self.spec: LedgerState = self.chain.state.copy()
        self.spec.height = self.chain.height + 1

    def __len__(self) -> int:
        return len(self.txs)

    def knows(self, tx: Transaction) -> bool:
        return (
            tx.tx_id in self.txs
            or self.held.get((tx.sender, tx.nonce), None) is tx
            or tx.tx_id in self.chain.tx_index
        )

    def pending_nonce(self, sender: str) -> int:
        known = self.spec.sender_key(sender)
        return known[1] if known else 0

    def add(self, tx: Transaction) -> bool:
        """Admit ``tx``; True if new. Raises :class:`Rejected` with the contract reason."""
        if self.knows(tx):
            return False
        held = self.held.get((tx.sender, tx.nonce))
        if held is not None and held.tx_id == tx.tx_id:
            return False
        known = self.spec.sender_key(tx.sender)
        if known is None:
            raise Rejected("WrongSigner", f"unregistered sender {tx.sender!r}")
        last = known[1]
        if tx.nonce <= last:
            raise Rejected("BadNonce", f"nonce {tx.nonce} already used (last {last})")
        if tx.nonce > last + 1:
            # check what can be checked now; the contract step waits for the gap
            probe = _NoncePinned(self.spec, tx.sender, tx.nonce - 1)
            check_envelope(probe, tx)
            if sum(1 for s, _ in self.held if s == tx.sender) >= MAX_HELD_PER_SENDER:
                raise Rejected("PoolFull", tx.sender)
            self.held[(tx.sender, tx.nonce)] = tx
            return True
        apply_tx(self.spec, tx, self.spec.height)
        self.txs[tx.tx_id] = tx
        self._promote(tx.sender, tx.nonce + 1)
        return True

    def _promote(self, sender: str, nonce: int) -> None:
        while (sender, nonce) in self.held:
            tx = self.held.pop((sender, nonce))
            try:
                apply_tx(self.spec, tx, self.spec.height)
            except Rejected as exc:
                log.debug("dropping held tx %s: %s", tx.tx_id.hex()[:12], exc)
                return
            self.txs[tx.tx_id] = tx
            nonce += 1

    def on_new_tip(self) -> None:
        old = list(self.txs.values()) + list(self.held.values())
        self.txs.clear()
        self.held.clear()
        self._reset_spec()
        for tx in sorted(old, key=lambda t: t.nonce):
            if tx.tx_id in self.chain.tx_index:
                continue
            try:
                self.add(tx)
            except Rejected:
                pass

    def pending(self) -> list[Transaction]:
        return list(self.txs.values())


class _NoncePinned:
    """State facade reporting a fixed last-nonce for one sender."""

    def __init__(self, state: LedgerState, sender: str, last: int) -> None:
        self._state, self._sender, self._last = state, sender, last

    def sender_key(self, sender: str):
        known = self._state.sender_key(sender)
        if known is None or sender != self._sender:
            return known
        return known[0], self._last


class Node:
    def __init__(
        self,
        node_id: str,
        genesis: Genesis,
        *,
        signing_key: SigningKey | None = None,
        blobs=None,
        chain_dir: str | Path | None = None,
        peers: list[str] | None = None,
        timing: NodeTiming | None = None,
        seed: int = 0,
    ) -> None:
        self.node_id = node_id
        self.genesis = genesis
        self.signing_key = signing_key
        self.blobs = blobs if blobs is not None else MemoryBlobStore()
        self.chain_dir = Path(chain_dir) if chain_dir else None
        self.peers = [p for p in (peers or []) if p != node_id]
        self.timing = timing or NodeTiming()
        self.rng = random.Random(f"{seed}:{node_id}")
        self.lock = threading.RLock()
        self.outbox: list[Outgoing] = []
        if self.chain_dir and (self.chain_dir / "HEAD").exists():
            self.chain = load_chain(self.chain_dir, genesis)
        else:
            self.chain = Chain(genesis)
            if self.chain_dir:
                save_block(self.chain_dir, self.chain.tip)
        self.pool = Mempool(self.chain)
        self.future: dict[int, Block] = {}
        self._fresh: list[Transaction] = []
        self._last_sync = 0
        self._last_gossip = 0
        self._last_block_ms = 0

    # -- status -------------------------------------------------------------------

    @property
    def is_validator(self) -> bool:
        return self.signing_key is not None and any(
            v.validator_id == self.node_id for v in self.genesis.validators
        )

    @property
    def height(self) -> int:
        return self.chain.height

    @property
    def state(self) -> LedgerState:
        return self.chain.state

    def state_root(self) -> bytes:
        return self.chain.tip.state_root

    # -- local operations ---------------------------------------------------------

    def submit(self, tx: Transaction) -> bool:
        with self.lock:
            new = self.pool.add(tx)
            if new:
                self._fresh.append(tx)
            return new

    def receive_block(self, block: Block) -> bool:
        """Apply the next block; True if applied, False if already known.

        Raises :class:`BlockRejected` for an invalid or conflicting block.
        """
        with self.lock:
            if block.height <= self.chain.height:
                if self.chain.blocks[block.height].hash == block.hash:
                    return False
                raise BlockRejected("Conflict", f"height {block.height} is already final")
            if block.height > self.chain.height + 1:
                if len(self.future) < MAX_FUTURE_BLOCKS:
                    self.future.setdefault(block.height, block)
                raise BlockRejected("Gap", f"tip is {self.chain.height}")
            self._append(block)
            self._drain_future()
            return True

    def _append(self, block: Block) -> None:
        self.chain.append(block)
        if self.chain_dir:
            save_block(self.chain_dir, block)
        self.pool.on_new_tip()

    def _drain_future(self) -> None:
        for h in sorted(self.future):
            if h <= self.chain.height:
                del self.future[h]
        while self.chain.height + 1 in self.future:
            block = self.future.pop(self.chain.height + 1)
            try:
                self._append(block)
            except BlockRejected as exc:
                log.warning("%s: dropping buffered block %d: %s", self.node_id, block.height, exc)
                self.future.clear()
                return

    def propose(self, now_ms: int, force: bool = False) -> Block | None:
        """Build, apply and announce the next block if it is our turn."""
        with self.lock:
            if not self.is_validator:
                return None
            height = self.chain.height + 1
            if select_proposer(self.genesis.validators, height) != self.node_id:
                return None
            empty_due = self.timing.empty_block_ms and now_ms - self._last_block_ms >= self.timing.empty_block_ms
            if not (len(self.pool) or force or empty_due):
                return None
            block, _ = propose_block(
                self.chain.state,
                self.chain.tip,
                self.pool.pending(),
                self.node_id,
                self.signing_key,
                now_ms // 1000,
            )
            self._append(block)
            self._last_block_ms = now_ms
            for peer in self.peers:
                self.outbox.append(Outgoing(peer, MsgKind.BLOCK_ANNOUNCE, Blocks((block,))))
            return block

    # -- peer protocol --------------------------------------------------------------

    def tick(self, now_ms: int) -> None:
        with self.lock:
            self.propose(now_ms)
            if self._fresh and self.peers:
                batch = TxBatch(tuple(self._fresh))
                for peer in self.peers:
                    self.outbox.append(Outgoing(peer, MsgKind.SUBMIT_TX, batch))
            self._fresh = []
            if self.peers and len(self.pool) + len(self.pool.held) and now_ms - self._last_gossip >= self.timing.regossip_ms:
                self._last_gossip = now_ms
                batch = TxBatch(tuple(sorted(
                    list(self.pool.txs.values()) + list(self.pool.held.values()),
                    key=lambda t: (t.sender, t.nonce),
                )))
                for peer in self.peers:
                    self.outbox.append(Outgoing(peer, MsgKind.SUBMIT_TX, batch))
            if self.peers and now_ms - self._last_sync >= self.timing.sync_ms:
                self._last_sync = now_ms
                self.outbox.append(Outgoing(self.rng.choice(self.peers), MsgKind.GET_TIP, Empty()))

    def handle_response(self, src: str, kind: MsgKind, payload) -> None:
        with self.lock:
            if kind == MsgKind.TIP:
                if payload.height > self.chain.height:
                    start = self.chain.height + 1
                    count = min(MAX_BLOCKS_PER_REPLY, payload.height - self.chain.height)
                    self.outbox.append(Outgoing(src, MsgKind.GET_BLOCK, BlockRange(start, count)))
            elif kind == MsgKind.BLOCKS:
                for block in payload.blocks:
                    try:
                        self.receive_block(block)
                    except BlockRejected as exc:
                        if exc.reason != "Gap":
                            log.warning("%s: block %d from %s rejected: %s", self.node_id, block.height, src, exc)
                        break
            elif kind == MsgKind.ANNOUNCE_RESULT:
                if payload.reason == "Gap":
                    self.outbox.append(Outgoing(src, MsgKind.GET_TIP, Empty()))

    def pull_missing(self, src: str) -> None:
        start = self.chain.height + 1
        self.outbox.append(Outgoing(src, MsgKind.GET_BLOCK, BlockRange(start, MAX_BLOCKS_PER_REPLY)))

    def drain_outbox(self) -> list[Outgoing]:
        with self.lock:
            out, self.outbox = self.outbox, []
            return out

    # -- request handling -----------------------------------------------------------

    def handle(self, frame: bytes, src: str | None = None) -> bytes:
        """Answer one request frame. Never raises; errors become ERROR frames."""
        try:
            kind, payload = decode_frame(frame)
        except WireError as exc:
            return error_frame("BadMessage", str(exc))
        if kind.is_response:
            return error_frame("BadMessage", f"{kind.name} is not a request")
        try:
            rkind, rpayload = self.dispatch(kind, payload, src)
        except Rejected as exc:
            return error_frame(exc.reason, exc.detail)
        except NotFound as exc:
            return error_frame("NotFound", str(exc))
        except CorruptBlob as exc:
            return error_frame("CorruptBlob", str(exc))
        except BlobError as exc:
            return error_frame("BlobError", str(exc))
        except Exception as exc:  # a request must never take the node down
            log.exception("%s: internal error on %s", self.node_id, kind.name)
            return error_frame("InternalError", repr(exc))
        return encode_frame(rkind, rpayload)

    def dispatch(self, kind: MsgKind, payload, src: str | None = None):
        if kind == MsgKind.SUBMIT_TX:
            if len(payload.txs) == 1:
                # a lone submission fails loudly; batches (gossip) report per tx
                self.submit(payload.txs[0])
                return MsgKind.SUBMIT_RESULT, SubmitResult((TxResult(payload.txs[0].tx_id, True),))
            results = []
            for tx in payload.txs:
                try:
                    self.submit(tx)
                    results.append(TxResult(tx.tx_id, True))
                except Rejected as exc:
                    results.append(TxResult(tx.tx_id, False, exc.reason, exc.detail))
            return MsgKind.SUBMIT_RESULT, SubmitResult(tuple(results))
        if kind == MsgKind.GET_TIP:
            with self.lock:
                tip = self.chain.tip
                return MsgKind.TIP, Tip(tip.height, tip.hash, tip.state_root)
        if kind == MsgKind.GET_BLOCK:
            with self.lock:
                count = max(0, min(payload.count, MAX_BLOCKS_PER_REPLY))
                blocks = tuple(self.chain.blocks[payload.start:payload.start + count])
            return MsgKind.BLOCKS, Blocks(blocks)
        if kind == MsgKind.GET_STATE:
            with self.lock:
                known = self.chain.state.sender_key(payload.actor_id) if payload.actor_id else None
                return MsgKind.STATE, StateSummary(
                    height=self.chain.height,
                    state_root=self.chain.tip.state_root,
                    registered=known is not None,
                    nonce=known[1] if known else 0,
                    pending_nonce=self.pool.pending_nonce(payload.actor_id) if known else 0,
                )
        if kind == MsgKind.PUT_BLOB:
            ref = self.blobs.put(payload.data)
            return MsgKind.BLOB_REF, BlobRefMsg(ref.hash, ref.size)
        if kind == MsgKind.GET_BLOB:
            return MsgKind.BLOB, BlobData(self.blobs.get(payload.hash))
        if kind == MsgKind.BLOCK_ANNOUNCE:
            accepted = 0
            reason = ""
            for block in payload.blocks:
                try:
                    accepted += self.receive_block(block)
                except BlockRejected as exc:
                    reason = exc.reason
                    if exc.reason == "Gap" and src is not None:
                        self.pull_missing(src)
                    break
            return MsgKind.ANNOUNCE_RESULT, AnnounceResult(accepted, reason, self.chain.height)
        raise Rejected("BadMessage", f"unsupported request {kind.name}")


def sync(node: Node, peer) -> int:
    """Pull blocks ``tip+1 ..`` from ``peer`` (a client) until caught up.

    Stops at the first invalid block, leaving the valid prefix applied.
    Returns the number of blocks applied.
    """
    applied = 0
    target = peer.tip().height
    while node.height < target:
        blocks = peer.blocks(node.height + 1, MAX_BLOCKS_PER_REPLY)
        if not blocks:
            break
        for block in blocks:
            try:
                applied += node.receive_block(block)
            except BlockRejected as exc:
                log.warning("%s: sync stopped at height %d: %s", node.node_id, block.height, exc)
                return applied
    return applied
