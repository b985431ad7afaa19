"""Proof-of-work chain carrying contract calls.

One canonical chain, no forks. A block is mined by searching nonces upward
from 0 until ``sha256(header)`` has at least ``difficulty`` leading zero bits,
so mining is a pure function of its inputs. Timestamps are logical ticks.
"""
from __future__ import annotations

import hashlib
import json
import struct
import threading
from dataclasses import dataclass, field, replace
from enum import IntEnum
from pathlib import Path

from . import contract as sc
from .contract import ContractError, ContractState

DEFAULT_DIFFICULTY = 12
DEFAULT_CAPACITY = 64
DEFAULT_NONCE_BUDGET = 1 << 32
ZERO_HASH = bytes(32)


class LedgerError(Exception):
    pass


class DuplicateTransaction(LedgerError):
    pass


class BadNonce(LedgerError):
    pass


class NonceBudgetExhausted(LedgerError):
    pass


class EmptyMempool(LedgerError):
    pass


class TxKind(IntEnum):
    UPDATE_MODEL_HASH = 1
    PUBLISH_GLOBAL_MODEL = 2
    TOKEN_TRANSFER = 3


def miner_id(j: int) -> bytes:
    return sc.address_from_label(f"miner-{j}")


def _sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


@dataclass(frozen=True)
class Transaction:
    kind: TxKind
    sender: bytes
    nonce: int
    payload: bytes
    tx_id: bytes = b""

    def __post_init__(self):
        if not self.tx_id:
            object.__setattr__(self, "tx_id", self.compute_id())

    def canonical_bytes(self) -> bytes:
        return (
            struct.pack("<B", int(self.kind)) + self.sender + struct.pack("<QI", self.nonce, len(self.payload))
            + self.payload
        )

    def compute_id(self) -> bytes:
        return _sha256(self.canonical_bytes())

    @classmethod
    def update_model_hash(cls, sender: bytes, nonce: int, ciphertext: bytes) -> Transaction:
        return cls(TxKind.UPDATE_MODEL_HASH, sender, nonce, bytes(ciphertext))

    @classmethod
    def publish_global(cls, sender: bytes, nonce: int, cid: str) -> Transaction:
        return cls(TxKind.PUBLISH_GLOBAL_MODEL, sender, nonce, cid.encode())

    @classmethod
    def token_transfer(
        cls, sender: bytes, nonce: int, to: bytes, amount: int, mint: bool = False
    ) -> Transaction:
        return cls(TxKind.TOKEN_TRANSFER, sender, nonce, to + struct.pack("<QB", amount, int(mint)))

    def transfer_fields(self) -> tuple[bytes, int, bool]:
        if self.kind != TxKind.TOKEN_TRANSFER or len(self.payload) != sc.ADDRESS_LEN + 9:
            raise sc.InvalidPayload("malformed token transfer payload")
        amount, mint = struct.unpack("<QB", self.payload[sc.ADDRESS_LEN:])
        return self.payload[:sc.ADDRESS_LEN], amount, bool(mint)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.name,
            "sender": sc.render_address(self.sender),
            "nonce": self.nonce,
            "payload": self.payload.hex(),
            "tx_id": self.tx_id.hex(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> Transaction:
        return cls(
            TxKind[d["kind"]], sc.parse_address(d["sender"]), int(d["nonce"]),
            bytes.fromhex(d["payload"]), bytes.fromhex(d["tx_id"]),
        )


def tx_root(txs) -> bytes:
    return _sha256(b"".join(tx.tx_id for tx in txs))


@dataclass(frozen=True)
class BlockHeader:
    height: int
    prev_hash: bytes
    tx_root: bytes
    miner: bytes
    timestamp: int
    difficulty: int
    nonce: int = 0

    def prefix_bytes(self) -> bytes:
        return (
            struct.pack("<Q", self.height) + self.prev_hash + self.tx_root + self.miner
            + struct.pack("<QB", self.timestamp, self.difficulty)
        )

    def to_bytes(self) -> bytes:
        return self.prefix_bytes() + struct.pack("<Q", self.nonce)

    def block_hash(self) -> bytes:
        return _sha256(self.to_bytes())


def leading_zero_bits(digest: bytes) -> int:
    value = int.from_bytes(digest, "big")
    return len(digest) * 8 - value.bit_length()


def meets_difficulty(digest: bytes, difficulty: int) -> bool:
    return leading_zero_bits(digest) >= difficulty


def solve_pow(header: BlockHeader, budget: int = DEFAULT_NONCE_BUDGET) -> BlockHeader:
    """Return ``header`` with the lowest nonce whose hash meets its difficulty."""
    base = hashlib.sha256(header.prefix_bytes())
    target = 1 << (256 - header.difficulty)
    pack = struct.Struct("<Q").pack
    for nonce in range(min(budget, 1 << 64)):
        h = base.copy()
        h.update(pack(nonce))
        if int.from_bytes(h.digest(), "big") < target:
            return replace(header, nonce=nonce)
    raise NonceBudgetExhausted(
        f"no nonce below {budget} meets difficulty {header.difficulty} at height {header.height}"
    )


@dataclass(frozen=True)
class Block:
    header: BlockHeader
    transactions: tuple[Transaction, ...]
    receipts: tuple[bool, ...]
    hash: bytes

    @property
    def height(self) -> int:
        return self.header.height

    def to_dict(self) -> dict:
        h = self.header
        return {
            "hash": self.hash.hex(),
            "header": {
                "height": h.height,
                "prev_hash": h.prev_hash.hex(),
                "tx_root": h.tx_root.hex(),
                "miner": sc.render_address(h.miner),
                "timestamp": h.timestamp,
                "difficulty": h.difficulty,
                "nonce": h.nonce,
            },
            "transactions": [tx.to_dict() for tx in self.transactions],
            "receipts": ["ok" if r else "failed" for r in self.receipts],
        }

    @classmethod
    def from_dict(cls, d: dict) -> Block:
        h = d["header"]
        header = BlockHeader(
            int(h["height"]), bytes.fromhex(h["prev_hash"]), bytes.fromhex(h["tx_root"]),
            sc.parse_address(h["miner"]), int(h["timestamp"]), int(h["difficulty"]), int(h["nonce"]),
        )
        txs = tuple(Transaction.from_dict(t) for t in d["transactions"])
        receipts = tuple({"ok": True, "failed": False}[r] for r in d["receipts"])
        return cls(header, txs, receipts, bytes.fromhex(d["hash"]))


def apply_transaction(state: ContractState, tx: Transaction, height: int) -> None:
    """Dispatch one contract call; raises ``ContractError`` on a guard violation."""
    if tx.kind == TxKind.UPDATE_MODEL_HASH:
        sc.apply_update_model_hash(state, tx.sender, tx.payload, height)
    elif tx.kind == TxKind.PUBLISH_GLOBAL_MODEL:
        try:
            cid = tx.payload.decode("ascii")
        except UnicodeDecodeError:
            raise sc.InvalidPayload("global model hash is not ascii") from None
        sc.apply_publish_global(state, tx.sender, cid, height)
    elif tx.kind == TxKind.TOKEN_TRANSFER:
        to, amount, mint = tx.transfer_fields()
        sc.apply_token_transfer(state, tx.sender, to, amount, height, mint=mint)
    else:  # pragma: no cover - IntEnum construction already rejects others
        raise sc.InvalidPayload(f"unknown transaction kind {tx.kind}")


@dataclass
class ValidationReport:
    valid: bool
    height: int | None = None
    reason: str = ""

    def __bool__(self) -> bool:
        return self.valid


@dataclass
class Chain:
    """Blocks, mempool and the contract state they produce.

    Mutation (``submit``/``mine_block``) is serialized through one lock.
    """

    difficulty: int = DEFAULT_DIFFICULTY
    capacity: int = DEFAULT_CAPACITY
    nonce_budget: int = DEFAULT_NONCE_BUDGET
    treasury: bytes = sc.TREASURY_ADDRESS
    publisher: bytes = sc.MONITOR_ADDRESS
    blocks: list[Block] = field(default_factory=list)
    mempool: list[Transaction] = field(default_factory=list)
    state: ContractState = None
    _next_nonce: dict[bytes, int] = field(default_factory=dict, repr=False)
    _seen: set[bytes] = field(default_factory=set, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def __post_init__(self):
        if self.state is None:
            self.state = self.fresh_state()
        if not self.blocks:
            self._append(self._mine([], sc.ZERO_ADDRESS, self.difficulty))

    def fresh_state(self) -> ContractState:
        return ContractState(treasury=self.treasury, publisher=self.publisher)

    @property
    def height(self) -> int:
        return len(self.blocks) - 1

    @property
    def tip(self) -> Block:
        return self.blocks[-1]

    def expected_nonce(self, sender: bytes) -> int:
        return self._next_nonce.get(sender, 0)

    def submit(self, tx: Transaction) -> bytes:
        with self._lock:
            if tx.tx_id in self._seen:
                raise DuplicateTransaction(tx.tx_id.hex())
            expected = self.expected_nonce(tx.sender)
            if tx.nonce != expected:
                raise BadNonce(
                    f"{sc.render_address(tx.sender)} sent nonce {tx.nonce}, expected {expected}"
                )
            self._next_nonce[tx.sender] = expected + 1
            self._seen.add(tx.tx_id)
            self.mempool.append(tx)
        return tx.tx_id

    def _mine(self, txs: list[Transaction], miner: bytes, difficulty: int) -> BlockHeader:
        height = len(self.blocks)
        header = BlockHeader(
            height=height,
            prev_hash=self.blocks[-1].hash if self.blocks else ZERO_HASH,
            tx_root=tx_root(txs),
            miner=miner,
            timestamp=height,
            difficulty=difficulty,
        )
        return solve_pow(header, self.nonce_budget)

    def _append(self, header: BlockHeader, txs=(), receipts=()) -> Block:
        block = Block(header, tuple(txs), tuple(receipts), header.block_hash())
        self.blocks.append(block)
        return block

    def mine_block(self, miner: bytes, difficulty: int | None = None, allow_empty: bool = True) -> Block:
        """Drain up to ``capacity`` mempool txs (FIFO), mine, append, apply.

        Transactions that violate a contract guard are kept in the block with a
        failed receipt and leave the state untouched.
        """
        difficulty = self.difficulty if difficulty is None else difficulty
        with self._lock:
            if not self.mempool and not allow_empty:
                raise EmptyMempool("mempool is empty and empty blocks are disabled")
            txs = self.mempool[:self.capacity]
            header = self._mine(txs, miner, difficulty)
            del self.mempool[:len(txs)]
            receipts = []
            for tx in txs:
                try:
                    apply_transaction(self.state, tx, header.height)
                    receipts.append(True)
                except ContractError:
                    receipts.append(False)
            return self._append(header, txs, receipts)

    def validate(self) -> ValidationReport:
        return validate_blocks(self.blocks, self.capacity, self.fresh_state())

    def replay(self) -> ContractState:
        """Rebuild contract state from genesis, ignoring validity."""
        state = self.fresh_state()
        for block in self.blocks:
            for tx in block.transactions:
                try:
                    apply_transaction(state, tx, block.height)
                except ContractError:
                    pass
        return state

    # -- export / import ------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format": "fedchain-chain/1",
            "difficulty": self.difficulty,
            "capacity": self.capacity,
            "treasury": sc.render_address(self.treasury),
            "publisher": sc.render_address(self.publisher),
            "blocks": [b.to_dict() for b in self.blocks],
            "mempool": [tx.to_dict() for tx in self.mempool],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def from_dict(cls, doc: dict) -> Chain:
        """Rebuild a chain from an export without validating it.

        Contract state is replayed from the blocks; call ``validate()`` to check
        the result.
        """
        chain = cls(
            difficulty=int(doc["difficulty"]),
            capacity=int(doc["capacity"]),
            treasury=sc.parse_address(doc["treasury"]),
            publisher=sc.parse_address(doc["publisher"]),
            blocks=[Block.from_dict(b) for b in doc["blocks"]],
        )
        chain.state = chain.replay()
        for block in chain.blocks:
            for tx in block.transactions:
                chain._seen.add(tx.tx_id)
                chain._next_nonce[tx.sender] = max(chain.expected_nonce(tx.sender), tx.nonce + 1)
        for tx in doc.get("mempool", []):
            chain.submit(Transaction.from_dict(tx))
        return chain

    @classmethod
    def from_json(cls, text: str) -> Chain:
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path: str | Path) -> Chain:
        return cls.from_json(Path(path).read_text())


def validate_blocks(blocks: list[Block], capacity: int, state: ContractState) -> ValidationReport:
    """Check linkage, PoW, roots, tx ids and contract replay; report first failure.

    ``state`` must be a fresh contract state; it is consumed by the replay.
    """
    if not blocks:
        return ValidationReport(False, None, "chain has no genesis block")
    nonces: dict[bytes, int] = {}
    prev = ZERO_HASH
    for h, block in enumerate(blocks):
        hdr = block.header

        def fail(reason: str) -> ValidationReport:
            return ValidationReport(False, h, reason)

        if hdr.height != h:
            return fail(f"header height {hdr.height} at position {h}")
        if hdr.prev_hash != prev:
            return fail("prev_hash does not link to the previous block")
        if hdr.timestamp != h:
            return fail(f"timestamp {hdr.timestamp} is not the logical tick {h}")
        recomputed = hdr.block_hash()
        if recomputed != block.hash:
            return fail("stored block hash does not match header")
        if not meets_difficulty(recomputed, hdr.difficulty):
            return fail(f"block hash misses difficulty {hdr.difficulty}")
        if len(block.transactions) > capacity:
            return fail(f"{len(block.transactions)} transactions exceed capacity {capacity}")
        if len(block.receipts) != len(block.transactions):
            return fail("receipt count differs from transaction count")
        for i, tx in enumerate(block.transactions):
            if tx.compute_id() != tx.tx_id:
                return fail(f"transaction {i} id does not match its contents")
        if tx_root(block.transactions) != hdr.tx_root:
            return fail("tx_root does not match transactions")
        for i, (tx, ok) in enumerate(zip(block.transactions, block.receipts)):
            expected = nonces.get(tx.sender, 0)
            if tx.nonce != expected:
                return fail(f"transaction {i} nonce {tx.nonce}, expected {expected}")
            nonces[tx.sender] = expected + 1
            try:
                apply_transaction(state, tx, h)
                replayed = True
            except ContractError:
                replayed = False
            if replayed != ok:
                return fail(f"transaction {i} receipt disagrees with contract replay")
        prev = block.hash
    return ValidationReport(True)


def submit_transaction(chain: Chain, tx: Transaction) -> bytes:
    return chain.submit(tx)


def mine_block(chain: Chain, miner: bytes, difficulty: int | None = None, allow_empty: bool = True) -> Block:
    return chain.mine_block(miner, difficulty, allow_empty)


def validate_chain(chain: Chain) -> ValidationReport:
    return chain.validate()
