"""Node runtime, wire protocol, clients and the simulated network."""

from medledger.net.client import ChainView, LocalClient, NodeClient, TcpClient
from medledger.net.harness import NetConfig, NodeSpec, SimNetwork
from medledger.net.node import Mempool, Node, NodeTiming, sync
from medledger.net.tcp import NodeServer, serve_node
from medledger.net.wire import MsgKind, WireError, decode_frame, encode_frame

__all__ = [
    "ChainView",
    "LocalClient",
    "Mempool",
    "MsgKind",
    "NetConfig",
    "Node",
    "NodeClient",
    "NodeServer",
    "NodeSpec",
    "NodeTiming",
    "SimNetwork",
    "TcpClient",
    "WireError",
    "decode_frame",
    "encode_frame",
    "serve_node",
    "sync",
]
