"""Seeded discrete-event network of in-process nodes.

Every peer message is a real wire frame. Each hop independently suffers a
uniform latency in ``[latency_min_ms, latency_max_ms]`` and is dropped with
probability ``drop_prob``; replies travel back the same way. Client calls
(:meth:`SimNetwork.client`) reach their node directly and are never dropped.
Time is virtual, so a run is a pure function of the config and inputs.
"""

from __future__ import annotations

import heapq
import json
import random
from dataclasses import dataclass, field
from pathlib import Path

from medledger.blobstore import MemoryBlobStore
from medledger.crypto.signing import SigningKey
from medledger.ledger import Genesis
from medledger.net.client import LocalClient
from medledger.net.node import Node, NodeTiming
from medledger.net.wire import MsgKind, WireError, decode_frame, encode_frame


@dataclass(frozen=True)
class NodeSpec:
    node_id: str
    address: str = ""


@dataclass
class NetConfig:
    nodes: list[NodeSpec]
    latency_min_ms: int = 5
    latency_max_ms: int = 50
    drop_prob: float = 0.0
    seed: int = 0
    tick_ms: int = 20
    timing: NodeTiming = field(default_factory=NodeTiming)

    def __post_init__(self) -> None:
        if not 0.0 <= self.drop_prob < 1.0:
            raise ValueError("drop_prob must be in [0, 1)")
        if not 0 <= self.latency_min_ms <= self.latency_max_ms:
            raise ValueError("need 0 <= latency_min_ms <= latency_max_ms")
        if self.tick_ms <= 0:
            raise ValueError("tick_ms must be positive")
        ids = [n.node_id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise ValueError("node ids must be unique")

    @classmethod
    def from_dict(cls, data: dict) -> "NetConfig":
        data = dict(data)
        data["nodes"] = [NodeSpec(**n) if isinstance(n, dict) else NodeSpec(n) for n in data["nodes"]]
        if "timing" in data:
            data["timing"] = NodeTiming(**data["timing"])
        return cls(**data)

    @classmethod
    def load(cls, path: str | Path) -> "NetConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


class SimNetwork:
    def __init__(
        self,
        config: NetConfig,
        genesis: Genesis,
        keys: dict[str, SigningKey],
        chain_dirs: dict[str, Path] | None = None,
        blobs=None,
    ) -> None:
        self.config = config
        # one off-chain store for the deployment; blobs are not replicated
        self.blobs = blobs if blobs is not None else MemoryBlobStore()
        self.genesis = genesis
        self.rng = random.Random(config.seed)
        self.now = 0
        self._queue: list = []
        self._seq = 0
        self.stats = {"sent": 0, "dropped": 0, "delivered": 0}
        ids = [n.node_id for n in config.nodes]
        self.nodes: dict[str, Node] = {
            nid: Node(
                nid,
                genesis,
                signing_key=keys.get(nid),
                blobs=self.blobs,
                peers=ids,
                timing=config.timing,
                seed=config.seed,
                chain_dir=(chain_dirs or {}).get(nid),
            )
            for nid in ids
        }
        for i, nid in enumerate(ids):
            # stagger ticks so nodes do not act in lockstep
            self._schedule(1 + (i * config.tick_ms) // max(1, len(ids)), self._tick, nid)

    # -- event loop -------------------------------------------------------------------

    def _schedule(self, at: int, fn, *args) -> None:
        self._seq += 1
        heapq.heappush(self._queue, (at, self._seq, fn, args))

    def _tick(self, nid: str) -> None:
        self.nodes[nid].tick(self.now)
        self._flush(nid)
        self._schedule(self.now + self.config.tick_ms, self._tick, nid)

    def _hop(self) -> int | None:
        """Latency for one hop, or None if the message is lost."""
        self.stats["sent"] += 1
        if self.rng.random() < self.config.drop_prob:
            self.stats["dropped"] += 1
            return None
        return self.rng.randint(self.config.latency_min_ms, self.config.latency_max_ms)

    def _flush(self, nid: str) -> None:
        for msg in self.nodes[nid].drain_outbox():
            delay = self._hop()
            if delay is not None:
                self._schedule(self.now + delay, self._deliver, nid, msg.dst, encode_frame(msg.kind, msg.payload))

    def _deliver(self, src: str, dst: str, frame: bytes) -> None:
        self.stats["delivered"] += 1
        reply = self.nodes[dst].handle(frame, src)
        self._flush(dst)
        delay = self._hop()
        if delay is not None:
            self._schedule(self.now + delay, self._reply, dst, src, reply)

    def _reply(self, src: str, dst: str, frame: bytes) -> None:
        try:
            kind, payload = decode_frame(frame)
        except WireError:
            return
        if kind != MsgKind.ERROR:
            self.nodes[dst].handle_response(src, kind, payload)
            self._flush(dst)

    def step(self) -> bool:
        if not self._queue:
            return False
        at, _, fn, args = heapq.heappop(self._queue)
        self.now = max(self.now, at)
        fn(*args)
        return True

    def run_for(self, ms: int) -> None:
        end = self.now + ms
        while self._queue and self._queue[0][0] <= end:
            self.step()
        self.now = end

    def run_until(self, predicate, max_ms: int = 600_000, check_every_ms: int = 50) -> bool:
        """Advance until ``predicate()`` holds; False if ``max_ms`` of virtual time pass."""
        deadline = self.now + max_ms
        while not predicate():
            if self.now >= deadline:
                return False
            self.run_for(check_every_ms)
        return True

    # -- observation ------------------------------------------------------------------

    def heights(self) -> dict[str, int]:
        return {nid: n.height for nid, n in self.nodes.items()}

    def state_roots(self) -> dict[str, bytes]:
        return {nid: n.state_root() for nid, n in self.nodes.items()}

    def converged(self) -> bool:
        return len(set(self.state_roots().values())) == 1 and len(set(self.heights().values())) == 1

    def idle(self) -> bool:
        """Converged with nothing left in any pool."""
        return self.converged() and all(len(n.pool) == 0 and not n.pool.held for n in self.nodes.values())

    def client(self, node_id: str | None = None, pump_ms: int = 50) -> LocalClient:
        node = self.nodes[node_id or next(iter(self.nodes))]
        return LocalClient(node, pump=lambda: self.run_for(pump_ms))

    def submit(self, tx, node_id: str | None = None) -> bytes:
        return self.client(node_id).submit(tx)
