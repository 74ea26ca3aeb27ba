"""Re-encryption proxy service.

Polls a node, and for every request routed to it posts exactly one signed
AccessLog. Granted requests are served by re-encrypting the stored record's
encapsulation with the grant's ``rk1``; the AEAD body is copied unchanged.
Nothing on this path can open a record: no secret key, no data key.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

from medledger.blobstore import BlobError
from medledger.contracts import MALFORMED_RECORD, MISSING_BLOB, AccessLog, allowed_log_reasons
from medledger.crypto import CryptoError, group_by_name
from medledger.crypto.pre import WrappedScalar, decode_sealed, encode_sealed, reencrypt_record
from medledger.crypto.signing import SigningKey
from medledger.errors import Rejected
from medledger.ledger import Genesis, Transaction, make_tx
from medledger.net.client import ChainView, NodeClient
from medledger.state import Decision, LedgerState, RequestEntry

log = logging.getLogger(__name__)


@dataclass
class ProxyStats:
    served: int = 0
    denied: int = 0
    resubmitted: int = 0
    errors: list[str] = field(default_factory=list)


class ProxyService:
    """One proxy identity. ``retry_after`` steps without finality re-serve a request."""

    def __init__(
        self,
        proxy_id: str,
        signing_key: SigningKey,
        client: NodeClient,
        genesis: Genesis,
        retry_after: int = 20,
    ) -> None:
        self.proxy_id = proxy_id
        self.signing_key = signing_key
        self.client = client
        self.view = ChainView(client, genesis)
        self.group = group_by_name(genesis.group)
        self.retry_after = retry_after
        self.in_flight: dict[str, int] = {}  # request_id -> step submitted
        self.nonce: int | None = None
        self.steps = 0
        self.stats = ProxyStats()

    # -- selection ------------------------------------------------------------------

    def _mine(self, state: LedgerState):
        for req in state.requests.values():
            if req.logged or req.request_id in self.in_flight:
                continue
            grant = state.grants.get(req.grant_id)
            if grant is not None and grant.proxy_id == self.proxy_id:
                yield req

    def scan(self, state: LedgerState | None = None) -> list[RequestEntry]:
        """Unlogged requests for this proxy that the contract grants, as of the tip."""
        state = state or self.view.state
        out = []
        for req in self._mine(state):
            now, _ = allowed_log_reasons(state, req, state.height + 1)
            if req.decision == Decision.GRANTED and now.granted:
                out.append(req)
        return sorted(out, key=lambda r: (r.height, r.request_id))

    def denials(self, state: LedgerState | None = None) -> list[tuple[RequestEntry, str]]:
        """Unlogged requests for this proxy that are denied, with the reason to log."""
        state = state or self.view.state
        out = []
        for req in self._mine(state):
            now, _ = allowed_log_reasons(state, req, state.height + 1)
            if req.decision == Decision.DENIED:
                out.append((req, req.reason))
            elif not now.granted:
                out.append((req, now.reason))
        return sorted(out, key=lambda p: (p[0].height, p[0].request_id))

    # -- serving --------------------------------------------------------------------

    def serve(self, req: RequestEntry, state: LedgerState | None = None) -> AccessLog:
        """Re-encrypt the record for ``req`` and store the result; returns the log body."""
        state = state or self.view.state
        grant = state.grants[req.grant_id]
        record = state.records[req.record_id]
        try:
            blob = self.client.get_blob(record.blob_hash)
        except BlobError:
            return AccessLog(req.request_id, Decision.DENIED, MISSING_BLOB)
        try:
            sealed = decode_sealed(self.group, blob)
            result = reencrypt_record(
                self.group,
                sealed,
                self.group.decode_scalar(grant.rk1),
                WrappedScalar(self.group.decode_element(grant.wrapped_eph), grant.wrapped_sealed),
            )
        except CryptoError:
            return AccessLog(req.request_id, Decision.DENIED, MALFORMED_RECORD)
        ref = self.client.put_blob(encode_sealed(self.group, result))
        return AccessLog(req.request_id, Decision.GRANTED, "", ref.hex)

    def _submit(self, body: AccessLog) -> Transaction | None:
        if self.nonce is None:
            self.nonce = self.client.next_nonce(self.proxy_id) - 1
        for attempt in (0, 1):
            tx = make_tx(self.signing_key, self.proxy_id, self.nonce + 1, body)
            try:
                self.client.submit(tx)
            except Rejected as exc:
                if exc.reason == "BadNonce" and not attempt:
                    self.nonce = self.client.next_nonce(self.proxy_id) - 1
                    continue
                # DuplicateId means another attempt already logged it
                log.info("%s: log for %s rejected: %s", self.proxy_id, body.request_id, exc)
                self.stats.errors.append(f"{body.request_id}:{exc.reason}")
                return None
            self.nonce += 1
            self.in_flight[body.request_id] = self.steps
            return tx
        return None

    def step(self) -> list[Transaction]:
        """One poll: refresh, serve what is pending, log denials."""
        self.steps += 1
        self.view.refresh()
        state = self.view.state
        for rid, at in list(self.in_flight.items()):
            req = state.requests.get(rid)
            if req is None or req.logged:
                del self.in_flight[rid]
            elif self.steps - at >= self.retry_after:
                # the log never landed; serving again is safe, the contract dedups
                del self.in_flight[rid]
                self.nonce = None
                self.stats.resubmitted += 1
        sent = []
        for req, reason in self.denials(state):
            tx = self._submit(AccessLog(req.request_id, Decision.DENIED, reason))
            if tx is not None:
                self.stats.denied += 1
                sent.append(tx)
        for req in self.scan(state):
            body = self.serve(req, state)
            tx = self._submit(body)
            if tx is not None:
                if body.decision == Decision.GRANTED:
                    self.stats.served += 1
                else:
                    self.stats.denied += 1
                sent.append(tx)
        return sent

    def run_loop(self, interval: float = 1.0, max_iterations: int | None = None, stop=None) -> None:
        """Poll every ``interval`` seconds until ``stop`` is set or the iteration cap."""
        i = 0
        while max_iterations is None or i < max_iterations:
            if stop is not None and stop.is_set():
                return
            try:
                self.step()
            except (Rejected, OSError) as exc:
                log.warning("%s: poll failed: %s", self.proxy_id, exc)
            i += 1
            if stop is not None:
                stop.wait(interval)
            else:
                time.sleep(interval)
