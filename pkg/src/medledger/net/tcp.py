"""TCP transport: a threaded frame server plus a ticker that talks to peers."""

from __future__ import annotations

import logging
import socketserver
import threading
import time

from medledger.net.client import TcpClient
from medledger.net.node import Node
from medledger.net.wire import MsgKind, WireError, decode_frame, encode_frame, error_frame, read_frame

log = logging.getLogger(__name__)


class _Handler(socketserver.BaseRequestHandler):
    def _read_exact(self, n: int) -> bytes:
        buf = bytearray()
        while len(buf) < n:
            chunk = self.request.recv(n - len(buf))
            if not chunk:
                break
            buf += chunk
        return bytes(buf)

    def handle(self) -> None:
        node: Node = self.server.node
        while True:
            try:
                frame = read_frame(self._read_exact)
            except WireError:
                # framing is lost; answer once and drop the connection
                self.request.sendall(error_frame("BadMessage", "unreadable frame"))
                return
            except OSError:
                return
            if frame is None:
                return
            self.request.sendall(node.handle(frame, self.client_address[0]))


class NodeServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, node: Node, address: tuple[str, int], peers: dict[str, str], tick_ms: int = 50) -> None:
        super().__init__(address, _Handler)
        self.node = node
        self.tick_ms = tick_ms
        self.peer_clients = {pid: TcpClient(addr, timeout=5.0) for pid, addr in peers.items() if pid != node.node_id}
        node.peers = list(self.peer_clients)
        self._stop = threading.Event()
        self._workers: list[threading.Thread] = []

    @property
    def port(self) -> int:
        return self.server_address[1]

    def _ticker(self) -> None:
        while not self._stop.is_set():
            self.node.tick(int(time.time() * 1000))
            for msg in self.node.drain_outbox():
                client = self.peer_clients.get(msg.dst)
                if client is None:
                    continue
                try:
                    kind, payload = decode_frame(client.exchange(encode_frame(msg.kind, msg.payload)))
                except (OSError, ConnectionError, WireError) as exc:
                    log.debug("%s -> %s failed: %s", self.node.node_id, msg.dst, exc)
                    continue
                if kind != MsgKind.ERROR:
                    self.node.handle_response(msg.dst, kind, payload)
            self._stop.wait(self.tick_ms / 1000)

    def start(self) -> "NodeServer":
        for target in (self.serve_forever, self._ticker):
            t = threading.Thread(target=target, daemon=True, name=f"{self.node.node_id}-{target.__name__}")
            t.start()
            self._workers.append(t)
        return self

    def stop(self) -> None:
        if self._stop.is_set():
            return
        self._stop.set()
        self.shutdown()
        self.server_close()
        for c in self.peer_clients.values():
            c.close()


def serve_node(node: Node, host: str = "127.0.0.1", port: int = 0, peers: dict[str, str] | None = None, tick_ms: int = 50) -> NodeServer:
    """Start answering frames for ``node`` on ``host:port`` (0 picks a free port)."""
    return NodeServer(node, (host, port), peers or {}, tick_ms).start()
