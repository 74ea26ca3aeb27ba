"""The command line against four validators served over loopback TCP."""

import json
import shlex
import socket

import pytest

from medledger import cli
from medledger.net.client import TcpClient
from medledger.net.tcp import serve_node
from medledger.net.wire import HEADER, MsgKind, decode_frame


def free_ports(n):
    socks = [socket.socket() for _ in range(n)]
    for s in socks:
        s.bind(("127.0.0.1", 0))
    ports = [s.getsockname()[1] for s in socks]
    for s in socks:
        s.close()
    return ports


class Cli:
    def __init__(self, capsys):
        self.capsys = capsys

    def __call__(self, *argv, expect=0):
        self.capsys.readouterr()
        code = cli.main([str(a) for a in argv])
        out = self.capsys.readouterr().out
        assert code == expect, f"{argv[0]} exited {code}:\n{out}"
        return [dict(kv.split("=", 1) for kv in shlex.split(line)) for line in out.splitlines()]


@pytest.fixture
def cluster(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("MEDLEDGER_HOME", str(tmp_path))
    run = Cli(capsys)
    run("init-genesis", "--validators", 4, "--group", "toy")
    ports = free_ports(4)
    net = {"nodes": [{"node_id": f"v{i}", "address": f"127.0.0.1:{p}"} for i, p in enumerate(ports)]}
    (tmp_path / "net.json").write_text(json.dumps(net))
    addresses = {n["node_id"]: n["address"] for n in net["nodes"]}
    servers = [serve_node(cli.open_node(f"v{i}"), "127.0.0.1", p, addresses, tick_ms=20) for i, p in enumerate(ports)]
    yield run, tmp_path, servers
    for s in servers:
        s.stop()


def test_cli_scenario(cluster):
    run, home, servers = cluster
    for who, role in (("patient", "patient"), ("doctor", "doctor"), ("researcher", "researcher"), ("proxy", "proxy")):
        run("keygen", "--actor-id", who, "--role", role)
        run("register-actor", "--key-file", "admin", "--public-key-file", home / "keys" / f"{who}.pub.json")
    run("issue-attr", "--key-file", "registrar", "--subject", "doctor", "--attr", "role:cardiologist")
    run("issue-attr", "--key-file", "registrar", "--subject", "researcher", "--attr", "role:researcher")
    run("new-stream", "--key-file", "patient", "--stream-id", "patient/vitals")
    run("register-device", "--key-file", "patient", "--device-id", "patient/monitor", "--stream-id", "patient/vitals")
    out = run("ingest", "--key-file", "patient_monitor", "--count", 3, "--seed", 4)
    records = [line["record"] for line in out if "record" in line]
    assert len(records) == 3

    out = run("grant", "--key-file", "patient", "--delegatee", "doctor", "--policy", "role:cardiologist", "--proxy", "proxy", "--grant-id", "g1")
    assert out[0]["policy"] == "role:cardiologist" and out[0]["delegatee"] == "doctor"
    run("grant", "--key-file", "patient", "--delegatee", "researcher", "--policy", "role:cardiologist", "--proxy", "proxy", "--grant-id", "g2")
    out = run("request-access", "--key-file", "doctor", "--grant-id", "g1", "--record-id", records[0], "--request-id", "q1")
    assert out[-1]["decision"] == "GRANTED"
    out = run("request-access", "--key-file", "researcher", "--grant-id", "g2", "--record-id", records[0], "--request-id", "q2", expect=2)
    assert out[-1]["decision"] == "DENIED(PolicyUnsatisfied)"
    out = run("run-proxy", "--key-file", "proxy", "--iterations", 1)
    assert {line["request"]: line["decision"] for line in out if "request" in line} == {
        "q1": "GRANTED",
        "q2": "DENIED(PolicyUnsatisfied)",
    }
    out = run("fetch", "--key-file", "doctor", "--request-id", "q1")
    assert out[-1]["decision"] == "GRANTED" and out[0]["device_id"] == "patient/monitor"
    out = run("audit", "--decision", "granted")
    assert out[-1]["events"] == "1" and out[0]["request"] == "q1" and out[0]["decision"] == "GRANTED"

    run("revoke", "--key-file", "patient", "--grant-id", "g1")
    out = run("fetch", "--key-file", "doctor", "--grant-id", "g1", "--record-id", records[1], "--request-id", "q3", expect=2)
    assert out[-1]["decision"] == "DENIED(Revoked)"
    out = run("audit")
    assert out[-1]["events"] == "2"

    run("verify-chain", "--node", f"127.0.0.1:{servers[1].port}")
    out = run("verify-chain", "--chain-dir", home / "nodes" / "v2" / "chain")
    assert out[0]["verify"] == "OK"
    height = int(out[0]["height"])
    assert height >= 10

    for s in servers:
        s.stop()
    target = home / "nodes" / "v2" / "chain" / f"{5:08d}"
    raw = bytearray(target.read_bytes())
    raw[-1] ^= 1
    target.write_bytes(bytes(raw))
    out = run("verify-chain", "--chain-dir", home / "nodes" / "v2" / "chain", expect=3)
    assert out[0] == {"verify": "FAILED", "height": "5", "reason": "BadSignature"}


def test_cli_errors(cluster, capsys):
    run, home, servers = cluster
    out = run("grant", "--key-file", "admin", "--delegatee", "nobody", "--policy", "x", "--proxy", "proxy", "--stream-id", "s", expect=2)
    assert out[0]["error"] == "UnknownActor"
    out = run("revoke", "--key-file", "no-such-key", "--grant-id", "g", expect=1)
    assert out[0]["error"] == "CliError" and out[0]["detail"].startswith("no key file")
    run("init-genesis", "--group", "toy", expect=1)


def test_tcp_garbage_gets_error_and_connection_survives(cluster):
    _, _, servers = cluster
    with socket.create_connection(("127.0.0.1", servers[0].port)) as sock:
        sock.sendall(HEADER.pack(0, 0x42))
        header = sock.recv(HEADER.size)
        length, kind = HEADER.unpack(header)
        body = sock.recv(length) if length else b""
        assert decode_frame(header + body)[1].reason == "BadMessage"
        assert kind == MsgKind.ERROR
        sock.sendall(HEADER.pack(0, MsgKind.GET_TIP))
        header = sock.recv(HEADER.size)
        length, kind = HEADER.unpack(header)
        assert kind == MsgKind.TIP
    client = TcpClient(f"127.0.0.1:{servers[0].port}")
    assert client.tip().height == 0
    client.close()
