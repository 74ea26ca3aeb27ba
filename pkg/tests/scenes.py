"""Small hand-driven chains shared by the contract, proxy and device tests."""

from medledger.actors import grant_access, issue_attribute, open_stream, register_actor, register_device
from medledger.contracts import AccessRequest
from medledger.crypto import pre as pre_mod
from medledger.crypto.pre import decode_sealed, derive_dek
from medledger.crypto.signing import SigningKey
from medledger.device import Device, VitalsProfile, generate
from medledger.errors import Rejected
from medledger.ledger import apply_tx, replay
from medledger.net.node import NodeTiming
from medledger.proxy import ProxyService
from medledger.scenario import ChainBuilder, Deployment
from medledger.state import Role, state_hash

from oracles import reachable

STREAM = "patient/vitals"


class Scene:
    """Patient, cardiologist, researcher, proxy, one stream and one device."""

    def __init__(self, seed=0, group="toy", extra_attrs=()):
        self.dep = dep = Deployment.create(4, group, seed)
        self.g = dep.group
        self.b = ChainBuilder(dep)
        self.patient = dep.identity("patient", Role.PATIENT)
        self.doctor = dep.identity("doctor", Role.DOCTOR)
        self.researcher = dep.identity("researcher", Role.RESEARCHER)
        self.proxy = dep.identity("proxy", Role.PROXY, with_pre=False)
        self.b.block([dep.admin.tx(register_actor(self.g, a)) for a in (self.patient, self.doctor, self.researcher, self.proxy)])
        h = self.height
        attrs = [("doctor", "role:cardiologist"), ("researcher", "role:researcher"), *extra_attrs]
        self.b.block([dep.registrar.tx(issue_attribute(dep.registrar, who, name, h)) for who, name in attrs])
        self.dev_key = SigningKey.generate(dep.rng)
        self.b.block([
            self.patient.tx(open_stream(self.g, self.patient, STREAM, dep.rng)),
            self.patient.tx(register_device("patient/monitor", self.dev_key.public_bytes, STREAM)),
        ])
        self.stream = self.patient.streams[STREAM]
        self.device = Device("patient/monitor", self.dev_key, dep.rng.randbytes(32), "patient", STREAM, self.stream.pk, self.g)
        self.requests = 0

    @property
    def state(self):
        return self.b.state

    @property
    def height(self):
        return self.b.chain.height

    @property
    def client(self):
        return self.b.client

    def block(self, txs=()):
        return self.b.block(txs)

    def reject_reason(self, tx):
        """Reason ``tx`` would be rejected with in the next block, or None."""
        try:
            apply_tx(self.state.copy(), tx, self.height + 1)
        except Rejected as exc:
            return exc.reason
        return None

    def ingest(self, n, seed=0):
        readings = generate(VitalsProfile(), seed, n, self.device.device_id, first_seq=len(self.device.sent) + 1)
        ids = self.device.ingest(readings, self.client)
        self.b.flush()
        return ids, readings

    def grant_body(self, grant_id, who, policy, expiry=0, proxy_id="proxy"):
        return grant_access(self.g, self.stream, grant_id, STREAM, who.actor_id, who.pre.pk, policy, proxy_id, expiry, self.dep.rng)

    def grant(self, grant_id, who, policy, expiry=0, proxy_id="proxy"):
        return self.block([self.patient.tx(self.grant_body(grant_id, who, policy, expiry, proxy_id))])

    def request(self, who, grant_id, record_id):
        self.requests += 1
        req_id = f"q{self.requests}"
        self.block([who.tx(AccessRequest(req_id, grant_id, record_id))])
        return req_id

    def proxy_service(self, **kw):
        return ProxyService("proxy", self.proxy.signing, self.client, self.dep.genesis, **kw)


SECRET_OPS = ("derive_dek", "open_record", "decrypt_second", "decrypt_first", "unwrap_scalar")


def blind_serve(monkeypatch, seed=11, n=2):
    """Serve ``n`` PROD requests with every secret-key operation trapped.

    Returns the scene, the request ids, the served proxy, and a list of
    secret values (ints and byte strings) reachable from it; it should be
    empty.
    """
    scene = Scene(seed=seed, group="prod")
    ids, readings = scene.ingest(n)
    scene.grant("g1", scene.doctor, "role:cardiologist")
    reqs = [scene.request(scene.doctor, "g1", rid) for rid in ids]
    g = scene.g
    # ground truth computed before the trap is set
    deks = []
    for rid in ids:
        sealed = decode_sealed(g, scene.b.blobs.get(rid))
        m = pre_mod.decrypt_second(g, scene.stream.sk, sealed.encapsulation)
        deks.append(derive_dek(g, m, sealed.context))
    payloads = [r.to_bytes() for r in readings]

    def trap(*_a, **_k):
        raise AssertionError("secret-key operation on the proxy path")

    with monkeypatch.context() as mp:
        for name in SECRET_OPS:
            mp.setattr(pre_mod, name, trap)
        svc = scene.proxy_service()
        svc.step()
    secrets = {scene.stream.sk, scene.doctor.pre.sk, scene.patient.pre.sk}
    leaked = []
    for v in reachable(svc):
        if isinstance(v, int):
            if v in secrets:
                leaked.append(v)
        elif v in deks or any(p in v for p in payloads):
            leaked.append(v)
    scene.b.flush()
    return scene, reqs, payloads, svc, leaked


# -- simulated networks --------------------------------------------------------


def run_to(net, height, max_ms=600_000):
    """Produce blocks until every node has ``height``, then let sync quiesce."""
    assert net.run_until(lambda: min(net.heights().values()) >= height, max_ms=max_ms)
    net.config.timing.empty_block_ms = 0
    assert net.run_until(net.idle, max_ms=max_ms)


def converge(seed, drop, height, n_txs=0):
    dep = Deployment.create(4, "toy", seed)
    net = dep.network(drop_prob=drop, seed=seed, timing=NodeTiming(empty_block_ms=100))
    ids = []
    for i in range(n_txs):
        who = dep.identity(f"actor{i}", Role.PATIENT)
        ids.append(net.submit(dep.admin.tx(register_actor(dep.group, who)), f"v{i % 4}"))
    run_to(net, height)
    return dep, net, ids


def check_replicas(dep, net):
    roots = net.state_roots()
    assert len(set(roots.values())) == 1
    chains = [n.chain.blocks for n in net.nodes.values()]
    assert all(c == chains[0] for c in chains)
    # each replica is reproduced by an independent replay from genesis
    for node in net.nodes.values():
        assert state_hash(replay(dep.genesis, node.chain.blocks)) == node.state_root()
