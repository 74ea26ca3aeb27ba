"""Command line for every role: admin, registrar, patient, device, doctor, proxy, auditor.

Data lives under ``$MEDLEDGER_HOME`` (default ``./.medledger``)::

    genesis.bin        canonical genesis config
    net.json           node ids and addresses
    keys/<id>.json     secret key files (``.pub.json`` for the public half)
    nodes/<id>/chain   one file per block plus HEAD
    blobs/             shared content-addressed store

Output is one ``key=value`` line per fact. Exit codes: 0 success, 1 usage or
I/O error, 2 rejected or denied (the reason is printed verbatim), 3 a chain
that fails verification.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import signal
import sys
import threading
import time
from pathlib import Path

from medledger.actors import (
    Identity,
    grant_access,
    issue_attribute,
    open_blob,
    revoke_attribute,
)
from medledger.blobstore import BlobError, FileBlobStore
from medledger.contracts import AccessRequest, RegisterActor, RegisterDevice, RevokeAccess, query_audit
from medledger.crypto import CryptoError, group_by_name
from medledger.crypto.entropy import system_entropy
from medledger.crypto.pre import keygen
from medledger.crypto.signing import SigningKey
from medledger.device import Device, VitalsProfile, VitalsReading, generate
from medledger.errors import BadChain, Rejected
from medledger.ledger import ActorKey, Genesis, Transaction, load_blocks, replay
from medledger.net.client import ChainView, TcpClient
from medledger.net.harness import NetConfig, NodeSpec
from medledger.net.node import Node
from medledger.net.tcp import serve_node
from medledger.proxy import ProxyService
from medledger.state import Decision, Role, ValidatorInfo

EXIT_OK, EXIT_ERROR, EXIT_DENIED, EXIT_BAD_CHAIN = 0, 1, 2, 3


class CliError(Exception):
    pass


def home() -> Path:
    return Path(os.environ.get("MEDLEDGER_HOME", ".medledger"))


def emit(**fields) -> None:
    print(" ".join(f"{k}={_quote(str(v))}" for k, v in fields.items()), flush=True)


def _quote(v: str) -> str:
    # values with spaces or quotes are JSON strings, so a line splits like a shell word list
    return json.dumps(v) if not v or any(c.isspace() or c in "\"'\\" for c in v) else v


# -- deployment files -----------------------------------------------------------


def load_genesis() -> Genesis:
    path = home() / "genesis.bin"
    if not path.exists():
        raise CliError(f"no genesis at {path}; run init-genesis first")
    return Genesis.from_bytes(path.read_bytes())


def load_net() -> NetConfig:
    return NetConfig.load(home() / "net.json")


def key_path(name: str) -> Path:
    p = Path(name)
    if p.suffix == ".json" or p.exists():
        return p
    return home() / "keys" / f"{name}.json"


def load_identity(args) -> tuple[Identity, dict]:
    path = key_path(args.key_file)
    if not path.exists():
        raise CliError(f"no key file {path}")
    data = json.loads(path.read_text())
    return Identity.from_json(data, group_by_name(load_genesis().group)), data


def save_identity(ident: Identity, extra: dict | None = None) -> Path:
    group = group_by_name(load_genesis().group)
    path = home() / "keys" / f"{ident.actor_id.replace('/', '_')}.json"
    data = ident.to_json(group)
    data.update(extra or {})
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2) + "\n")
    path.chmod(0o600)
    return path


def connect(args) -> TcpClient:
    if args.node:
        return TcpClient(args.node, timeout=args.timeout)
    for spec in load_net().nodes:
        if spec.address:
            return TcpClient(spec.address, timeout=args.timeout)
    raise CliError("no node address; pass --node host:port")


def commit(args, client: TcpClient, txs: list[Transaction]) -> ChainView:
    """Submit ``txs`` and wait until a verified view contains all of them."""
    for tx in txs:
        client.submit(tx)
    view = ChainView(client, load_genesis())
    if not view.wait_for_txs([t.tx_id for t in txs], args.wait):
        raise CliError(f"timed out after {args.wait}s waiting for finality")
    return view


def signed(args, client, ident: Identity, bodies) -> tuple[list[Transaction], ChainView]:
    ident.resync(client)
    txs = [ident.tx(b) for b in bodies]
    view = commit(args, client, txs)
    return txs, view


# -- commands -------------------------------------------------------------------


def cmd_init_genesis(args) -> int:
    root = home()
    if (root / "genesis.bin").exists() and not args.force:
        raise CliError(f"{root / 'genesis.bin'} exists; pass --force to overwrite")
    group = group_by_name(args.group)
    (root / "keys").mkdir(parents=True, exist_ok=True)
    validators, specs = [], []
    for i in range(args.validators):
        vid = f"v{i}"
        key = SigningKey.generate()
        validators.append(ValidatorInfo(vid, key.public_bytes))
        specs.append(NodeSpec(vid, f"{args.host}:{args.base_port + i}"))
        _write_key(root / "keys" / f"{vid}.json", Identity(vid, key).to_json(group))
    admin = Identity("admin", SigningKey.generate(), Role.ADMIN)
    registrar = Identity("registrar", SigningKey.generate(), Role.REGISTRAR)
    _write_key(root / "keys" / "admin.json", admin.to_json(group))
    _write_key(root / "keys" / "registrar.json", registrar.to_json(group))
    genesis = Genesis(
        validators=tuple(validators),
        registrar=ActorKey(registrar.actor_id, registrar.pk_sig),
        admin=ActorKey(admin.actor_id, admin.pk_sig),
        group=group.name,
        timestamp=int(time.time()),
    )
    (root / "genesis.bin").write_bytes(genesis.to_bytes())
    net = {"nodes": [{"node_id": s.node_id, "address": s.address} for s in specs]}
    (root / "net.json").write_text(json.dumps(net, indent=2) + "\n")
    emit(genesis=genesis.block.hash.hex(), validators=len(validators), group=group.name, home=root)
    return EXIT_OK


def _write_key(path: Path, data: dict) -> None:
    path.write_text(json.dumps(data, indent=2) + "\n")
    path.chmod(0o600)


def open_node(node_id: str, genesis: Genesis | None = None) -> Node:
    """The node ``node_id`` over its chain directory and the shared blob store."""
    key_file = home() / "keys" / f"{node_id}.json"
    key = Identity.load(key_file).signing if key_file.exists() else None
    return Node(
        node_id,
        genesis or load_genesis(),
        signing_key=key,
        blobs=FileBlobStore(home() / "blobs"),
        chain_dir=home() / "nodes" / node_id / "chain",
    )


def cmd_run_node(args) -> int:
    genesis = load_genesis()
    net = load_net()
    addresses = {s.node_id: s.address for s in net.nodes}
    if args.node_id not in addresses and not args.listen:
        raise CliError(f"unknown node {args.node_id!r}")
    listen = args.listen or addresses[args.node_id]
    host, _, port = listen.rpartition(":")
    node = open_node(args.node_id, genesis)
    server = serve_node(node, host, int(port), peers=addresses, tick_ms=args.tick_ms)
    emit(node=args.node_id, listen=f"{host}:{server.port}", height=node.height, validator=node.is_validator)
    stop = threading.Event()
    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, lambda *_: stop.set())
    stop.wait(args.duration if args.duration else None)
    server.stop()
    emit(node=args.node_id, stopped=True, height=node.height)
    return EXIT_OK


def cmd_run_proxy(args) -> int:
    ident, _ = load_identity(args)
    client = connect(args)
    service = ProxyService(ident.actor_id, ident.signing, client, load_genesis())
    for i in range(args.iterations or sys.maxsize):
        if i:
            time.sleep(args.interval)
        for tx in service.step():
            body = tx.decoded()
            emit(request=body.request_id, decision=_verdict(body.decision, body.reason), tx=tx.tx_id.hex())
    emit(proxy=ident.actor_id, served=service.stats.served, denied=service.stats.denied)
    return EXIT_OK


def cmd_keygen(args) -> int:
    group = group_by_name(load_genesis().group)
    role = Role[args.role.upper()]
    ident = Identity.create(args.actor_id, role, group if role not in (Role.PROXY,) else None)
    path = save_identity(ident)
    pub = {"actor_id": ident.actor_id, "role": role.name.lower(), "pk_sig": ident.pk_sig.hex()}
    if ident.pre:
        pub["pk_pre"] = group.encode_element(ident.pre.pk).hex()
    pub_path = path.with_suffix(".pub.json")
    pub_path.write_text(json.dumps(pub, indent=2) + "\n")
    emit(actor=ident.actor_id, role=role.name.lower(), key_file=path, public_file=pub_path)
    return EXIT_OK


def cmd_register_actor(args) -> int:
    admin, _ = load_identity(args)
    pub = json.loads(Path(args.public_key_file).read_text())
    body = RegisterActor(
        pub["actor_id"], Role[pub["role"].upper()], bytes.fromhex(pub["pk_sig"]), bytes.fromhex(pub.get("pk_pre", ""))
    )
    client = connect(args)
    txs, view = signed(args, client, admin, [body])
    emit(actor=body.actor_id, role=body.role.name.lower(), height=view.find_tx(txs[0].tx_id))
    return EXIT_OK


def cmd_new_stream(args) -> int:
    patient, data = load_identity(args)
    group = group_by_name(load_genesis().group)
    kp = keygen(group)
    client = connect(args)
    body = RegisterDevice("", b"", args.stream_id, group.encode_element(kp.pk))
    patient.streams[args.stream_id] = kp
    txs, view = signed(args, client, patient, [body])
    data.setdefault("streams", {})[args.stream_id] = format(kp.sk, "x")
    _write_key(key_path(args.key_file), data)
    emit(stream=args.stream_id, owner=patient.actor_id, height=view.find_tx(txs[0].tx_id))
    return EXIT_OK


def cmd_register_device(args) -> int:
    patient, _ = load_identity(args)
    if args.stream_id not in patient.streams:
        raise CliError(f"{patient.actor_id} holds no key for stream {args.stream_id!r}")
    group = group_by_name(load_genesis().group)
    device = Identity(args.device_id, SigningKey.generate())
    client = connect(args)
    body = RegisterDevice(args.device_id, device.pk_sig, args.stream_id)
    txs, view = signed(args, client, patient, [body])
    path = save_identity(
        device,
        {
            "device_secret": system_entropy.randbytes(32).hex(),
            "owner": patient.actor_id,
            "stream_id": args.stream_id,
            "stream_pk": group.encode_element(patient.streams[args.stream_id].pk).hex(),
        },
    )
    emit(device=args.device_id, stream=args.stream_id, key_file=path, height=view.find_tx(txs[0].tx_id))
    return EXIT_OK


def cmd_issue_attr(args) -> int:
    registrar, _ = load_identity(args)
    client = connect(args)
    if args.revoke:
        body = revoke_attribute(args.subject, args.attr)
    else:
        body = issue_attribute(registrar, args.subject, args.attr, client.tip().height)
    txs, view = signed(args, client, registrar, [body])
    emit(subject=args.subject, attr=args.attr, action="revoke" if args.revoke else "issue", height=view.find_tx(txs[0].tx_id))
    return EXIT_OK


def cmd_ingest(args) -> int:
    ident, data = load_identity(args)
    group = group_by_name(load_genesis().group)
    device = Device(
        device_id=ident.actor_id,
        signing_key=ident.signing,
        secret=bytes.fromhex(data["device_secret"]),
        owner=data["owner"],
        stream_id=data["stream_id"],
        stream_pk=group.decode_element(bytes.fromhex(data["stream_pk"])),
        group=group,
    )
    profile = VitalsProfile.load(args.profile) if args.profile else VitalsProfile()
    readings = generate(profile, args.seed, args.count, device.device_id, first_seq=args.first_seq)
    client = connect(args)
    ids = device.ingest(readings, client)
    view = ChainView(client, load_genesis())
    if not view.wait_for_txs(device.sent, args.wait):
        raise CliError(f"timed out after {args.wait}s waiting for finality")
    for seq, rid in zip((r.seq for r in readings), ids):
        emit(record=rid, seq=seq)
    emit(ingested=len(ids), height=view.height)
    return EXIT_OK


def cmd_grant(args) -> int:
    patient, _ = load_identity(args)
    group = group_by_name(load_genesis().group)
    client = connect(args)
    state = ChainView(client, load_genesis()).refresh().state
    stream_id = args.stream_id or _only(patient.streams, "stream")
    delegatee = state.actors.get(args.delegatee)
    if delegatee is None:
        raise Rejected("UnknownActor", args.delegatee)
    if not delegatee.pk_pre:
        raise Rejected("KeyMismatch", f"{args.delegatee} has no re-encryption key")
    grant_id = args.grant_id or f"{stream_id}->{args.delegatee}@{state.height}"
    body = grant_access(
        group,
        patient.streams[stream_id],
        grant_id,
        stream_id,
        args.delegatee,
        group.decode_element(delegatee.pk_pre),
        args.policy,
        args.proxy,
        args.expiry_height,
    )
    txs, view = signed(args, client, patient, [body])
    g = view.state.grants[grant_id]
    emit(grant=grant_id, delegatee=g.delegatee, policy=g.policy, expiry=g.expiry, height=view.find_tx(txs[0].tx_id))
    return EXIT_OK


def cmd_revoke(args) -> int:
    patient, _ = load_identity(args)
    client = connect(args)
    txs, view = signed(args, client, patient, [RevokeAccess(args.grant_id)])
    emit(grant=args.grant_id, status="REVOKED", height=view.find_tx(txs[0].tx_id))
    return EXIT_OK


def _request(args, client, who: Identity) -> tuple[str, ChainView]:
    request_id = args.request_id or f"{who.actor_id}:{args.grant_id}:{args.record_id[:16]}:{time.time_ns()}"
    _, view = signed(args, client, who, [AccessRequest(request_id, args.grant_id, args.record_id)])
    return request_id, view


def cmd_request_access(args) -> int:
    who, _ = load_identity(args)
    client = connect(args)
    request_id, view = _request(args, client, who)
    req = view.state.requests[request_id]
    verdict = _verdict(req.decision, req.reason)
    emit(request=request_id, decision=verdict, height=req.height)
    return EXIT_OK if req.decision == Decision.GRANTED else EXIT_DENIED


def cmd_fetch(args) -> int:
    who, _ = load_identity(args)
    group = group_by_name(load_genesis().group)
    client = connect(args)
    if args.request_id and not args.grant_id:
        request_id = args.request_id
        view = ChainView(client, load_genesis()).refresh()
    elif args.grant_id and args.record_id:
        request_id, view = _request(args, client, who)
    else:
        raise CliError("pass --request-id, or --grant-id with --record-id")
    req = view.state.requests.get(request_id)
    if req is None:
        raise Rejected("UnknownRequest", request_id)
    if req.decision == Decision.DENIED:
        emit(request=request_id, decision=_verdict(req.decision, req.reason))
        return EXIT_DENIED

    def logged() -> bool:
        view.refresh()
        return any(e.request_id == request_id for e in view.state.audit_log)

    if not client.wait(logged, args.wait):
        raise CliError(f"no proxy logged {request_id} within {args.wait}s")
    ev = next(e for e in view.state.audit_log if e.request_id == request_id)
    if ev.decision != Decision.GRANTED:
        emit(request=request_id, decision=ev.describe(), height=ev.height)
        return EXIT_DENIED
    payload = open_blob(group, who.pre.sk, client.get_blob(ev.result_blob_hash))
    if args.out:
        Path(args.out).write_bytes(payload)
    else:
        try:
            reading = VitalsReading.from_bytes(payload)
            emit(**{k: v for k, v in vars(reading).items()})
        except ValueError:
            emit(payload=payload.hex())
    emit(request=request_id, decision="GRANTED", size=len(payload), height=ev.height)
    return EXIT_OK


def cmd_audit(args) -> int:
    client = connect(args)
    view = ChainView(client, load_genesis()).refresh()
    decision = Decision[args.decision.upper()] if args.decision else None
    events = query_audit(view.state, decision=decision, requester=args.requester, grant_id=args.grant_id, record_id=args.record_id)
    for ev in events:
        emit(
            height=ev.height,
            request=ev.request_id,
            grant=ev.grant_id,
            record=ev.record_id,
            requester=ev.requester,
            decision=ev.describe(),
            proxy=ev.proxy_id,
            result=ev.result_blob_hash or "-",
        )
    emit(events=len(events), verified_height=view.height)
    return EXIT_OK


def cmd_verify_chain(args) -> int:
    genesis = load_genesis()
    if args.node:
        client = connect(args)
        view = ChainView(client, genesis)
        view.refresh()
        emit(verify="OK", height=view.height, tip=view.chain.tip.hash.hex())
        return EXIT_OK
    chain_dir = Path(args.chain_dir) if args.chain_dir else home() / "nodes" / _only_dir() / "chain"
    blocks = load_blocks(chain_dir)
    if not blocks:
        raise CliError(f"no chain at {chain_dir}")
    state = replay(genesis, blocks)
    emit(verify="OK", height=len(blocks) - 1, tip=blocks[-1].hash.hex(), state_root=blocks[-1].state_root.hex(), records=len(state.records))
    return EXIT_OK


def _only_dir() -> str:
    nodes = sorted(p.name for p in (home() / "nodes").iterdir()) if (home() / "nodes").exists() else []
    if not nodes:
        raise CliError("no local chain; pass --chain-dir")
    return nodes[0]


def _only(d: dict, what: str) -> str:
    if len(d) != 1:
        raise CliError(f"hold {len(d)} {what}s; choose one explicitly")
    return next(iter(d))


def _verdict(decision: Decision, reason: str) -> str:
    return "GRANTED" if decision == Decision.GRANTED else f"DENIED({reason})"


# -- parser -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="medledger", description=__doc__.split("\n")[0])
    p.add_argument("--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def cmd(name, fn, help, key=True, node=True):
        sp = sub.add_parser(name, help=help)
        sp.set_defaults(fn=fn)
        if key:
            sp.add_argument("--key-file", required=True, help="key file path or actor id under $MEDLEDGER_HOME/keys")
        if node:
            sp.add_argument("--node", help="host:port of a node (default: first in net.json)")
            sp.add_argument("--timeout", type=float, default=30.0, help="socket timeout, seconds")
            sp.add_argument("--wait", type=float, default=60.0, help="seconds to wait for finality")
        return sp

    sp = cmd("init-genesis", cmd_init_genesis, "create validator, admin and registrar keys and the genesis", key=False, node=False)
    sp.add_argument("--validators", type=int, default=4)
    sp.add_argument("--group", choices=["toy", "prod"], default="prod")
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--base-port", type=int, default=7600)
    sp.add_argument("--force", action="store_true")

    sp = cmd("run-node", cmd_run_node, "serve a node over TCP", key=False, node=False)
    sp.add_argument("--node-id", required=True)
    sp.add_argument("--listen", help="host:port (default: address in net.json)")
    sp.add_argument("--tick-ms", type=int, default=50)
    sp.add_argument("--duration", type=float, default=0.0, help="seconds to run; 0 runs until interrupted")

    sp = cmd("run-proxy", cmd_run_proxy, "poll the chain and serve access requests")
    sp.add_argument("--interval", type=float, default=1.0)
    sp.add_argument("--iterations", type=int, default=0, help="0 runs forever")

    sp = cmd("keygen", cmd_keygen, "create an actor key file", key=False, node=False)
    sp.add_argument("--actor-id", required=True)
    sp.add_argument("--role", required=True, choices=[r.name.lower() for r in Role])

    sp = cmd("register-actor", cmd_register_actor, "admin: register an actor from its public key file")
    sp.add_argument("--public-key-file", required=True)

    sp = cmd("new-stream", cmd_new_stream, "patient: open a data stream with a fresh key")
    sp.add_argument("--stream-id", required=True)

    sp = cmd("register-device", cmd_register_device, "patient: bind a new device to a stream")
    sp.add_argument("--device-id", required=True)
    sp.add_argument("--stream-id", required=True)

    sp = cmd("issue-attr", cmd_issue_attr, "registrar: issue or revoke an attribute")
    sp.add_argument("--subject", required=True)
    sp.add_argument("--attr", required=True)
    sp.add_argument("--revoke", action="store_true")

    sp = cmd("ingest", cmd_ingest, "device: generate, seal and store readings")
    sp.add_argument("--count", type=int, default=1)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--first-seq", type=int, default=1)
    sp.add_argument("--profile", help="JSON vitals profile")

    sp = cmd("grant", cmd_grant, "patient: grant a delegatee access to a stream")
    sp.add_argument("--delegatee", required=True)
    sp.add_argument("--policy", required=True)
    sp.add_argument("--proxy", required=True)
    sp.add_argument("--expiry-height", type=int, default=0, help="last valid height; 0 never expires")
    sp.add_argument("--stream-id")
    sp.add_argument("--grant-id")

    sp = cmd("revoke", cmd_revoke, "patient: revoke a grant")
    sp.add_argument("--grant-id", required=True)

    for name, fn, help in (
        ("request-access", cmd_request_access, "delegatee: request one record under a grant"),
        ("fetch", cmd_fetch, "delegatee: fetch and decrypt a served record"),
    ):
        sp = cmd(name, fn, help)
        sp.add_argument("--grant-id")
        sp.add_argument("--record-id")
        sp.add_argument("--request-id")
        if name == "fetch":
            sp.add_argument("--out", help="write the payload here instead of printing it")

    sp = cmd("audit", cmd_audit, "list access events from a verified chain", key=False)
    sp.add_argument("--decision", choices=["granted", "denied"])
    sp.add_argument("--requester")
    sp.add_argument("--grant-id")
    sp.add_argument("--record-id")

    sp = cmd("verify-chain", cmd_verify_chain, "replay a chain and check every link and state root", key=False)
    sp.add_argument("--chain-dir", help="block directory (default: the local node's)")
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, stream=sys.stderr)
    if args.command == "request-access" and not (args.grant_id and args.record_id):
        parser.error("request-access needs --grant-id and --record-id")
    try:
        return args.fn(args)
    except BadChain as exc:
        emit(verify="FAILED", height=exc.height, reason=exc.reason)
        return EXIT_BAD_CHAIN
    except Rejected as exc:
        emit(error=exc.reason, detail=exc.detail)
        return EXIT_DENIED
    except (CliError, BlobError, CryptoError, OSError, ValueError) as exc:
        emit(error=type(exc).__name__, detail=str(exc))
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
