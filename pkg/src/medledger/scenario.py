"""Seeded deployments and the reference end-to-end workflow.

Used by the experiment scripts and the test suite. Everything derives from
one integer seed, so two runs with the same arguments produce the same
chain, byte for byte.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from medledger.actors import (
    Identity,
    grant_access,
    issue_attribute,
    open_blob,
    open_stream,
    register_actor,
    register_device,
)
from medledger.contracts import AccessRequest, RevokeAccess
from medledger.crypto import group_by_name
from medledger.crypto.groups import GroupParams
from medledger.crypto.signing import SigningKey
from medledger.device import Device, VitalsProfile, VitalsReading, generate
from medledger.blobstore import MemoryBlobStore
from medledger.ledger import ActorKey, Block, Chain, Genesis, Transaction, build_block, select_proposer
from medledger.net.client import ChainView, LocalClient
from medledger.net.harness import NetConfig, NodeSpec, SimNetwork
from medledger.net.node import Node, NodeTiming
from medledger.proxy import ProxyService
from medledger.state import Role, ValidatorInfo


@dataclass
class Deployment:
    genesis: Genesis
    group: GroupParams
    validator_keys: dict[str, SigningKey]
    admin: Identity
    registrar: Identity
    rng: random.Random

    @classmethod
    def create(cls, n_validators: int = 4, group: str = "toy", seed: int = 0) -> "Deployment":
        rng = random.Random(f"deployment:{seed}")
        keys = {f"v{i}": SigningKey.generate(rng) for i in range(n_validators)}
        admin = Identity("admin", SigningKey.generate(rng), Role.ADMIN)
        registrar = Identity("registrar", SigningKey.generate(rng), Role.REGISTRAR)
        genesis = Genesis(
            validators=tuple(ValidatorInfo(vid, k.public_bytes) for vid, k in keys.items()),
            registrar=ActorKey(registrar.actor_id, registrar.pk_sig),
            admin=ActorKey(admin.actor_id, admin.pk_sig),
            group=group,
        )
        return cls(genesis, group_by_name(group), keys, admin, registrar, rng)

    def identity(self, actor_id: str, role: Role, with_pre: bool = True) -> Identity:
        return Identity.create(actor_id, role, self.group if with_pre else None, self.rng)

    def network(
        self,
        drop_prob: float = 0.0,
        seed: int = 0,
        latency_ms: tuple[int, int] = (5, 50),
        timing: NodeTiming | None = None,
        tick_ms: int = 20,
    ) -> SimNetwork:
        config = NetConfig(
            nodes=[NodeSpec(v) for v in self.validator_keys],
            latency_min_ms=latency_ms[0],
            latency_max_ms=latency_ms[1],
            drop_prob=drop_prob,
            seed=seed,
            tick_ms=tick_ms,
            timing=timing or NodeTiming(),
        )
        return SimNetwork(config, self.genesis, self.validator_keys)


@dataclass
class Workflow:
    """Patient, cardiologist, researcher, proxy and one device on a simulated network."""

    dep: Deployment
    net: SimNetwork
    entry: str = "v0"
    patient: Identity = None
    doctor: Identity = None
    researcher: Identity = None
    proxy: Identity = None
    device: Device = None
    stream_id: str = "patient/vitals"
    timeout: float = 120.0
    view: ChainView = None
    proxy_service: ProxyService = None
    grants: dict[str, str] = field(default_factory=dict)
    requests: list[str] = field(default_factory=list)
    record_ids: list[str] = field(default_factory=list)

    @classmethod
    def build(cls, seed: int = 0, group: str = "toy", n_validators: int = 4, drop_prob: float = 0.0) -> "Workflow":
        dep = Deployment.create(n_validators, group, seed)
        wf = cls(dep, dep.network(drop_prob=drop_prob, seed=seed))
        wf.view = ChainView(wf.client, dep.genesis)
        return wf

    @property
    def client(self):
        return self.net.client(self.entry)

    @property
    def state(self):
        return self.view.refresh().state

    def commit(self, txs: list[Transaction]) -> None:
        """Submit and wait until every tx is final; raises on rejection or timeout."""
        client = self.client
        for tx in txs:
            client.submit(tx)
        if not self.view.wait_for_txs([t.tx_id for t in txs], self.timeout):
            raise TimeoutError(f"{len(txs)} txs did not finalize")

    def height(self) -> int:
        return self.view.refresh().height

    # -- setup ------------------------------------------------------------------------

    def setup(self) -> "Workflow":
        dep, g = self.dep, self.dep.group
        self.patient = dep.identity("patient", Role.PATIENT)
        self.doctor = dep.identity("doctor", Role.DOCTOR)
        self.researcher = dep.identity("researcher", Role.RESEARCHER)
        self.proxy = dep.identity("proxy", Role.PROXY, with_pre=False)
        self.commit([dep.admin.tx(register_actor(g, a)) for a in (self.patient, self.doctor, self.researcher, self.proxy)])
        h = self.height()
        self.commit([
            dep.registrar.tx(issue_attribute(dep.registrar, "doctor", "role:cardiologist", h)),
            dep.registrar.tx(issue_attribute(dep.registrar, "researcher", "role:researcher", h)),
        ])
        dev_key = SigningKey.generate(dep.rng)
        self.commit([
            self.patient.tx(open_stream(g, self.patient, self.stream_id, dep.rng)),
            self.patient.tx(register_device("patient/monitor", dev_key.public_bytes, self.stream_id)),
        ])
        self.device = Device(
            device_id="patient/monitor",
            signing_key=dev_key,
            secret=dep.rng.randbytes(32),
            owner="patient",
            stream_id=self.stream_id,
            stream_pk=self.patient.streams[self.stream_id].pk,
            group=g,
        )
        self.proxy_service = ProxyService("proxy", self.proxy.signing, self.client, dep.genesis)
        return self

    # -- steps ------------------------------------------------------------------------

    def ingest(self, n: int, seed: int = 0, profile: VitalsProfile | None = None) -> list[VitalsReading]:
        start = len(self.device.sent)
        readings = generate(profile or VitalsProfile(), seed, n, self.device.device_id, first_seq=start + 1)
        self.record_ids += self.device.ingest(readings, self.client)
        if not self.view.wait_for_txs(self.device.sent[start:], self.timeout):
            raise TimeoutError("readings did not finalize")
        return readings

    def grant(self, grant_id: str, delegatee: Identity, policy: str, expiry: int = 0) -> None:
        body = grant_access(
            self.dep.group,
            self.patient.streams[self.stream_id],
            grant_id,
            self.stream_id,
            delegatee.actor_id,
            delegatee.pre.pk,
            policy,
            "proxy",
            expiry,
            self.dep.rng,
        )
        self.commit([self.patient.tx(body)])
        self.grants[grant_id] = delegatee.actor_id

    def revoke(self, grant_id: str) -> None:
        self.commit([self.patient.tx(RevokeAccess(grant_id))])

    def request(self, who: Identity, grant_id: str, record_ids: list[str], prefix: str | None = None) -> list[str]:
        prefix = prefix or f"{who.actor_id}/{grant_id}/{len(self.requests)}"
        txs, ids = [], []
        for i, rid in enumerate(record_ids):
            req_id = f"{prefix}/{i}"
            txs.append(who.tx(AccessRequest(req_id, grant_id, rid)))
            ids.append(req_id)
        self.commit(txs)
        self.requests.extend(ids)
        return ids

    def run_proxy(self, request_ids: list[str]) -> None:
        """Poll the proxy until every listed request has an audit event."""
        want = set(request_ids)

        def done() -> bool:
            self.proxy_service.step()
            logged = {e.request_id for e in self.state.audit_log}
            return want <= logged

        if not self.client.wait(done, self.timeout):
            raise TimeoutError("proxy did not log every request")

    def fetch(self, who: Identity, request_id: str) -> bytes:
        """Decrypt the result for a logged, granted request as ``who``."""
        events = [e for e in self.state.audit_log if e.request_id == request_id]
        if len(events) != 1:
            raise LookupError(f"{request_id}: {len(events)} audit events")
        ev = events[0]
        if ev.result_blob_hash is None:
            raise PermissionError(ev.describe())
        return open_blob(self.dep.group, who.pre.sk, self.client.get_blob(ev.result_blob_hash))


class ChainBuilder:
    """Builds blocks directly, rotating through the validator keys.

    Actors submit to ``self.client``, an in-process non-validator mirror
    node; :meth:`flush` seals whatever that node has pooled into the next
    block. Block timestamps equal heights, so the output is reproducible.
    """

    def __init__(self, dep: Deployment) -> None:
        self.dep = dep
        self.chain = Chain(dep.genesis)
        self.blobs = MemoryBlobStore()
        self.mirror = Node("mirror", dep.genesis, blobs=self.blobs)
        self.client = LocalClient(self.mirror, pump=lambda: None)
        self.actors: dict[str, Identity] = {}

    @property
    def state(self):
        return self.chain.state

    @property
    def blocks(self) -> list[Block]:
        return self.chain.blocks

    def block(self, txs=()) -> Block:
        txs = list(txs)
        height = self.chain.height + 1
        proposer = select_proposer(self.dep.genesis.validators, height)
        blk = build_block(self.chain.state, self.chain.tip, txs, proposer, self.dep.validator_keys[proposer], height)
        if len(blk.txs) != len(txs):
            raise RuntimeError(f"block {height} dropped {len(txs) - len(blk.txs)} txs")
        self.chain.append(blk)
        self.mirror.receive_block(blk)
        return blk

    def flush(self) -> Block:
        return self.block(sorted(self.mirror.pool.pending(), key=lambda t: (t.sender, t.nonce)))


def build_fixture_chain(n_blocks: int, seed: int = 0, group: str = "toy") -> ChainBuilder:
    """A chain of exactly ``n_blocks`` blocks after genesis exercising every tx kind.

    The first four blocks register actors, attributes, a stream, a device and
    two grants; after that a repeating cycle stores readings, files requests
    (one granted, one denied), lets the proxy log them, and now and then
    revokes the doctor's grant and issues a fresh one.
    """
    if n_blocks < 4:
        raise ValueError("need at least 4 blocks for the setup phase")
    dep = Deployment.create(4, group, seed)
    b = ChainBuilder(dep)
    g = dep.group
    patient = dep.identity("patient", Role.PATIENT)
    doctor = dep.identity("doctor", Role.DOCTOR)
    researcher = dep.identity("researcher", Role.RESEARCHER)
    proxy = dep.identity("proxy", Role.PROXY, with_pre=False)
    b.block([dep.admin.tx(register_actor(g, a)) for a in (patient, doctor, researcher, proxy)])
    h = b.chain.height
    b.block([
        dep.registrar.tx(issue_attribute(dep.registrar, "doctor", "role:cardiologist", h)),
        dep.registrar.tx(issue_attribute(dep.registrar, "researcher", "role:researcher", h)),
    ])
    stream_id = "patient/vitals"
    dev_key = SigningKey.generate(dep.rng)
    b.block([
        patient.tx(open_stream(g, patient, stream_id, dep.rng)),
        patient.tx(register_device("patient/monitor", dev_key.public_bytes, stream_id)),
    ])
    stream = patient.streams[stream_id]

    def grant(grant_id: str, who: Identity, policy: str) -> Transaction:
        body = grant_access(g, stream, grant_id, stream_id, who.actor_id, who.pre.pk, policy, "proxy", 0, dep.rng)
        return patient.tx(body)

    doc_grant = "g/doctor/0"
    b.block([grant(doc_grant, doctor, "role:cardiologist"), grant("g/researcher", researcher, "role:cardiologist")])
    b.actors = dict(patient=patient, doctor=doctor, researcher=researcher, proxy=proxy)
    device = Device("patient/monitor", dev_key, dep.rng.randbytes(32), "patient", stream_id, stream.pk, g)
    service = ProxyService("proxy", proxy.signing, b.client, dep.genesis)
    readings = iter(generate(VitalsProfile(), seed, 10 * n_blocks, device.device_id))
    records: list[str] = []
    revoked: list[str] = []
    cycle = 0
    while b.chain.height < n_blocks:
        phase = b.chain.height % 5
        if phase == 0:
            records += device.ingest([next(readings), next(readings)], b.client)
        elif phase == 1 and records:
            n = len(b.state.requests)
            b.client.submit(doctor.tx(AccessRequest(f"r{n}", doc_grant, records[-1])))
            b.client.submit(researcher.tx(AccessRequest(f"r{n + 1}", "g/researcher", records[-1])))
            if revoked:
                b.client.submit(doctor.tx(AccessRequest(f"r{n + 2}", revoked[-1], records[-1])))
        elif phase == 2:
            service.step()
        elif phase == 4:
            cycle += 1
            if cycle % 3 == 0:
                b.client.submit(patient.tx(RevokeAccess(doc_grant)))
                revoked.append(doc_grant)
                doc_grant = f"g/doctor/{cycle}"
                b.client.submit(grant(doc_grant, doctor, "role:cardiologist OR role:researcher"))
        b.flush()
    return b
