"""Permissioned chain: signed transactions, hash-linked blocks, replay.

The validator set is fixed at genesis and proposers rotate round-robin by
height. Blocks are final once accepted; a node never accepts a second block
at an occupied height.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

from medledger import codec
from medledger.contracts import KIND_OF, TxKind, apply_body, decode_body
from medledger.crypto.signing import SigningKey, verify
from medledger.errors import BadChain, BlockRejected, Rejected
from medledger.state import ActorEntry, LedgerState, Role, ValidatorInfo, state_hash

ZERO_HASH = bytes(32)
MAX_BLOCK_TXS = 1024

_TX_DOMAIN = b"medledger/v1/tx"
_BLOCK_DOMAIN = b"medledger/v1/block"


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


# -- transactions -------------------------------------------------------------


@dataclass(frozen=True)
class _TxCore:
    kind: TxKind
    body: bytes
    sender: str
    nonce: int


@dataclass(frozen=True)
class Transaction:
    tx_id: bytes
    kind: TxKind
    body: bytes
    sender: str
    nonce: int
    signature: bytes

    def core_bytes(self) -> bytes:
        return codec.encode(_TxCore(self.kind, self.body, self.sender, self.nonce))

    def decoded(self):
        return decode_body(self.kind, self.body)


def make_tx(key: SigningKey, sender: str, nonce: int, body) -> Transaction:
    kind = KIND_OF[type(body)]
    raw = codec.encode(body)
    core = codec.encode(_TxCore(kind, raw, sender, nonce))
    return Transaction(sha256(core), kind, raw, sender, nonce, key.sign(_TX_DOMAIN + core))


def check_envelope(state: LedgerState, tx: Transaction) -> None:
    core = tx.core_bytes()
    if tx.tx_id != sha256(core):
        raise Rejected("BadTxId", tx.tx_id.hex())
    known = state.sender_key(tx.sender)
    if known is None:
        raise Rejected("WrongSigner", f"unregistered sender {tx.sender!r}")
    pk, last = known
    if not verify(pk, tx.signature, _TX_DOMAIN + core):
        raise Rejected("BadSignature", f"tx {tx.tx_id.hex()[:16]}")
    if tx.nonce != last + 1:
        raise Rejected("BadNonce", f"expected {last + 1}, got {tx.nonce}")


def apply_tx(state: LedgerState, tx: Transaction, height: int) -> None:
    """Envelope checks, contract step and nonce bump, in place."""
    check_envelope(state, tx)
    apply_body(state, tx.kind, tx.decoded(), tx.sender, height)
    state.bump_nonce(tx.sender, tx.nonce)


# -- genesis ------------------------------------------------------------------


@dataclass(frozen=True)
class ActorKey:
    actor_id: str
    pk_sig: bytes


@dataclass(frozen=True)
class Genesis:
    validators: tuple[ValidatorInfo, ...]
    registrar: ActorKey
    admin: ActorKey
    group: str
    timestamp: int = 0

    def __post_init__(self) -> None:
        ids = [v.validator_id for v in self.validators]
        if not ids:
            raise ValueError("validator set must be non-empty")
        if len(set(ids)) != len(ids):
            raise ValueError("validator ids must be unique")

    def to_bytes(self) -> bytes:
        return codec.encode(self)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Genesis":
        return codec.decode(cls, data)

    @cached_property
    def block(self) -> "Block":
        return Block(
            height=0,
            prev_hash=ZERO_HASH,
            timestamp=self.timestamp,
            proposer_id=self.validators[0].validator_id,
            txs=(),
            state_root=state_hash(genesis_state(self)),
            proposer_sig=b"",
        )


def genesis_state(genesis: Genesis) -> LedgerState:
    state = LedgerState(
        group=genesis.group,
        validators=genesis.validators,
        admin_id=genesis.admin.actor_id,
        registrar_id=genesis.registrar.actor_id,
        registrar_pk=genesis.registrar.pk_sig,
    )
    state.actors[genesis.admin.actor_id] = ActorEntry(Role.ADMIN, genesis.admin.pk_sig, b"")
    state.actors[genesis.registrar.actor_id] = ActorEntry(Role.REGISTRAR, genesis.registrar.pk_sig, b"")
    return state


# -- blocks -------------------------------------------------------------------


@dataclass(frozen=True)
class BlockHeader:
    height: int
    prev_hash: bytes
    timestamp: int
    proposer_id: str
    tx_root: bytes
    state_root: bytes


@dataclass(frozen=True)
class Block:
    height: int
    prev_hash: bytes
    timestamp: int
    proposer_id: str
    txs: tuple[Transaction, ...]
    state_root: bytes
    proposer_sig: bytes

    @property
    def header(self) -> BlockHeader:
        tx_root = sha256(codec.encode(self.txs, tuple[Transaction, ...]))
        return BlockHeader(self.height, self.prev_hash, self.timestamp, self.proposer_id, tx_root, self.state_root)

    @cached_property
    def hash(self) -> bytes:
        return sha256(codec.encode(self.header))

    def to_bytes(self) -> bytes:
        return codec.encode(self)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Block":
        return codec.decode(cls, data)


def select_proposer(validators: Sequence[ValidatorInfo], height: int) -> str:
    return validators[height % len(validators)].validator_id


def _apply_txs(state: LedgerState, txs: Iterable[Transaction], height: int, strict: bool):
    """Apply ``txs`` to a copy of ``state``; returns (post-state, included)."""
    post = state.copy()
    post.height = height
    included = []
    for i, tx in enumerate(txs):
        try:
            apply_tx(post, tx, height)
        except Rejected as exc:
            if strict:
                raise BlockRejected("BadTx", exc.detail, index=i, cause=exc.reason) from exc
            continue
        included.append(tx)
        if len(included) == MAX_BLOCK_TXS:
            break
    return post, included


def propose_block(
    state: LedgerState,
    parent: Block,
    pending: Iterable[Transaction],
    proposer_id: str,
    proposer_key: SigningKey,
    timestamp: int,
) -> tuple[Block, LedgerState]:
    height = parent.height + 1
    if proposer_id != select_proposer(state.validators, height):
        raise Rejected("WrongProposer", f"height {height} belongs to {select_proposer(state.validators, height)}")
    post, included = _apply_txs(state, pending, height, strict=False)
    unsigned = Block(
        height=height,
        prev_hash=parent.hash,
        timestamp=max(timestamp, parent.timestamp),
        proposer_id=proposer_id,
        txs=tuple(included),
        state_root=state_hash(post),
        proposer_sig=b"",
    )
    sig = proposer_key.sign(_BLOCK_DOMAIN + unsigned.hash)
    return _with_sig(unsigned, sig), post


def _with_sig(block: Block, sig: bytes) -> Block:
    return Block(
        block.height, block.prev_hash, block.timestamp, block.proposer_id, block.txs, block.state_root, sig
    )


def build_block(
    state: LedgerState,
    parent: Block,
    pending: Iterable[Transaction],
    proposer_id: str,
    proposer_key: SigningKey,
    timestamp: int = 0,
) -> Block:
    """Next block on ``parent``; invalid pending txs are left out, not failed."""
    return propose_block(state, parent, pending, proposer_id, proposer_key, timestamp)[0]


def validate_block(state: LedgerState, block: Block, parent: Block) -> LedgerState:
    """Check ``block`` against the state at ``parent``; returns the post-state.

    Raises :class:`BlockRejected` with reason ``BadLink``, ``WrongProposer``,
    ``BadSignature``, ``BadTimestamp``, ``TooManyTxs``, ``BadTx`` or
    ``BadStateRoot``.
    """
    if block.height != parent.height + 1 or block.prev_hash != parent.hash:
        raise BlockRejected("BadLink", f"block {block.height} does not extend {parent.height}")
    expected = select_proposer(state.validators, block.height)
    if block.proposer_id != expected:
        raise BlockRejected("WrongProposer", f"expected {expected}, got {block.proposer_id}")
    pk = next(v.pk_sig for v in state.validators if v.validator_id == expected)
    if not verify(pk, block.proposer_sig, _BLOCK_DOMAIN + block.hash):
        raise BlockRejected("BadSignature", f"block {block.height}")
    if block.timestamp < parent.timestamp:
        raise BlockRejected("BadTimestamp", f"{block.timestamp} < {parent.timestamp}")
    if len(block.txs) > MAX_BLOCK_TXS:
        raise BlockRejected("TooManyTxs", str(len(block.txs)))
    post, _ = _apply_txs(state, block.txs, block.height, strict=True)
    if state_hash(post) != block.state_root:
        raise BlockRejected("BadStateRoot", f"block {block.height}")
    return post


def replay(genesis: Genesis, blocks: Sequence[Block]) -> LedgerState:
    """Deterministic state after ``blocks``; raises :class:`BadChain`.

    ``blocks`` may start with the genesis block or with height 1.
    """
    chain = Chain(genesis)
    for block in blocks:
        if block.height == 0 and chain.height == 0:
            if block != genesis.block:
                raise BadChain(0, "BadGenesis")
            continue
        chain.append_or_raise(block)
    return chain.state


# -- chain ----------------------------------------------------------------------


@dataclass
class Chain:
    """An accepted chain and its tip state."""

    genesis: Genesis
    blocks: list[Block] = field(default_factory=list)
    state: LedgerState | None = None
    tx_index: dict[bytes, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.blocks:
            self.blocks = [self.genesis.block]
            self.state = genesis_state(self.genesis)

    @property
    def height(self) -> int:
        return len(self.blocks) - 1

    @property
    def tip(self) -> Block:
        return self.blocks[-1]

    def append(self, block: Block) -> LedgerState:
        """Validate and accept ``block``; raises :class:`BlockRejected`."""
        post = validate_block(self.state, block, self.tip)
        self.blocks.append(block)
        self.state = post
        for tx in block.txs:
            self.tx_index[tx.tx_id] = block.height
        return post

    def append_or_raise(self, block: Block) -> None:
        expected = self.height + 1
        if block.height != expected:
            raise BadChain(expected, "BadLink", f"got height {block.height}")
        try:
            self.append(block)
        except BlockRejected as exc:
            raise BadChain(expected, exc.reason, exc.detail) from exc


# -- persistence --------------------------------------------------------------


def block_filename(height: int) -> str:
    return f"{height:08d}"


def save_block(chain_dir: Path, block: Block) -> None:
    chain_dir = Path(chain_dir)
    chain_dir.mkdir(parents=True, exist_ok=True)
    _atomic_write(chain_dir / block_filename(block.height), block.to_bytes())
    _atomic_write(chain_dir / "HEAD", f"{block.height}\n".encode())


def load_blocks(chain_dir: Path) -> list[Block]:
    """Read blocks ``0..HEAD``; raises :class:`BadChain` on unreadable files."""
    chain_dir = Path(chain_dir)
    head_file = chain_dir / "HEAD"
    if not head_file.exists():
        return []
    head = int(head_file.read_text().strip())
    blocks = []
    for h in range(head + 1):
        path = chain_dir / block_filename(h)
        if not path.exists():
            raise BadChain(h, "BadLink", f"missing {path.name}")
        try:
            blocks.append(Block.from_bytes(path.read_bytes()))
        except (codec.DecodeError, ValueError) as exc:
            raise BadChain(h, "Malformed", str(exc)) from exc
    return blocks


def load_chain(chain_dir: Path, genesis: Genesis) -> Chain:
    blocks = load_blocks(chain_dir)
    if blocks and blocks[0] != genesis.block:
        raise BadChain(0, "BadGenesis")
    chain = Chain(genesis)
    for block in blocks[1:]:
        chain.append_or_raise(block)
    return chain


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)
