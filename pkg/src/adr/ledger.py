"""BlockDAG ledger: blocks, acyclic insertion, tip tracking, ordering and layers.

The ledger is single-writer. Read-only queries (ordering, layer classification,
conflict scans) never mutate it and may run on a snapshot.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional, Sequence

from .hashing import (
    ZERO_HASH,
    check_parent_hashes,
    double_sha256,
    serialize_header,
    serialize_transaction,
)

MAX_PARENTS = 8


class LedgerError(ValueError):
    pass


class UnknownParentError(LedgerError):
    pass


class DuplicateInputError(LedgerError):
    pass


class EmptyLedgerError(LedgerError):
    pass


class InsertResult(Enum):
    ACCEPTED = "accepted"
    PENDING = "pending"
    REJECTED = "rejected"


@dataclass(frozen=True)
class Transaction:
    tx_id: bytes
    sender: bytes
    inputs: tuple[bytes, ...]
    payload_size: int
    submit_time: int  # simulated microseconds
    signature: bytes

    @classmethod
    def create(
        cls,
        sender: bytes,
        inputs: Sequence[bytes],
        payload_size: int,
        submit_time: int,
        signature: bytes = b"",
    ) -> "Transaction":
        refs = tuple(sorted(inputs))
        if not refs:
            raise LedgerError("spend transaction needs at least one input")
        if len(set(refs)) != len(refs):
            raise DuplicateInputError("duplicate input reference within transaction")
        raw = serialize_transaction(sender, refs, payload_size, submit_time, signature)
        return cls(double_sha256(raw), sender, refs, payload_size, submit_time, signature)

    def serialize(self) -> bytes:
        return serialize_transaction(
            self.sender, self.inputs, self.payload_size, self.submit_time, self.signature
        )


@dataclass(frozen=True)
class BlockHeader:
    version: int
    parent_hashes: tuple[bytes, ...]
    merkle_root: bytes
    timestamp: int  # simulated microseconds
    producer: bytes
    nonce: int

    def serialize(self) -> bytes:
        return serialize_header(
            self.version,
            self.parent_hashes,
            self.merkle_root,
            self.timestamp,
            self.producer,
            self.nonce,
        )


@dataclass(frozen=True)
class Block:
    header: BlockHeader
    body: tuple[Transaction, ...]
    block_hash: bytes

    @property
    def parents(self) -> tuple[bytes, ...]:
        return self.header.parent_hashes

    @property
    def producer(self) -> bytes:
        return self.header.producer


def hash_block(header: BlockHeader) -> bytes:
    """Double SHA-256 over the canonical header serialization."""
    return double_sha256(header.serialize())


def merkle_root(txs: Sequence[Transaction]) -> bytes:
    """Binary Merkle root over double-SHA256 leaves; unpaired nodes are duplicated.

    An empty transaction list hashes to the all-zero digest; a single leaf is
    the root itself.
    """
    if not txs:
        return ZERO_HASH
    level = [double_sha256(tx.serialize()) for tx in txs]
    while len(level) > 1:
        if len(level) % 2:
            level.append(level[-1])
        level = [double_sha256(level[i] + level[i + 1]) for i in range(0, len(level), 2)]
    return level[0]


def create_block(
    producer: bytes,
    tips: Iterable[bytes],
    txs: Sequence[Transaction],
    now: int,
    nonce: int = 0,
    ledger: Optional["DagLedger"] = None,
    parent_limit: int = MAX_PARENTS,
) -> Block:
    """Assemble a block over the given tips. Genesis is the only parentless block.

    The caller is responsible for scheduling the broadcast (the production jitter
    lives in the simulator, not here).
    """
    parents = check_parent_hashes(sorted(set(tips)))
    if len(parents) > parent_limit:
        raise LedgerError(f"block references {len(parents)} parents, limit {parent_limit}")
    if ledger is not None:
        for p in parents:
            if p not in ledger.blocks:
                raise UnknownParentError(f"unknown tip {p.hex()}")
    if parents and not txs:
        raise LedgerError("non-genesis block requires at least one transaction")
    header = BlockHeader(
        version=1,
        parent_hashes=parents,
        merkle_root=merkle_root(txs),
        timestamp=now,
        producer=producer,
        nonce=nonce,
    )
    return Block(header=header, body=tuple(txs), block_hash=hash_block(header))


@dataclass(frozen=True)
class LayerAssignment:
    """Partition of accepted blocks into secured (S-Layer) and unsecured (U-Layer)."""

    secured: frozenset[bytes]
    unsecured: frozenset[bytes]
    k_conf: int


@dataclass(frozen=True)
class BlockOrder:
    """Topological visit order plus the confirmed/unconfirmed partition of it."""

    visit: tuple[bytes, ...]
    confirmed: tuple[bytes, ...]
    unconfirmed: tuple[bytes, ...]


@dataclass
class Conflict:
    spend_ref: bytes
    winner: bytes  # tx_id
    losers: tuple[bytes, ...]
    provisional: bool  # every involved block still in the U-Layer

    def pair_key(self) -> tuple[bytes, ...]:
        return tuple(sorted((self.winner, *self.losers)))


class DagLedger:
    """Append-only block DAG with tip tracking and orphan buffering.

    Parents must be accepted before a child is accepted, so the graph is acyclic
    by construction; blocks with unknown parents wait in ``pending``.
    """

    def __init__(self) -> None:
        self.blocks: dict[bytes, Block] = {}
        self.children: dict[bytes, list[bytes]] = {}
        self.tips: set[bytes] = set()
        self.genesis: Optional[bytes] = None
        self.pending: dict[bytes, Block] = {}
        self._waiting_on: dict[bytes, set[bytes]] = {}  # missing parent -> pending hashes

    def __len__(self) -> int:
        return len(self.blocks)

    def insert_block(self, block: Block) -> InsertResult:
        h = block.block_hash
        if h in self.blocks or h in self.pending:
            return InsertResult.REJECTED
        if hash_block(block.header) != h:
            return InsertResult.REJECTED
        if h in block.parents:
            return InsertResult.REJECTED
        if not block.parents:
            if self.genesis is not None:
                return InsertResult.REJECTED  # second parentless block
            self._accept(block)
            self._drain_pending(h)
            return InsertResult.ACCEPTED
        if self.genesis is None:
            # No genesis yet: everything waits.
            self._buffer(block)
            return InsertResult.PENDING
        missing = [p for p in block.parents if p not in self.blocks]
        if missing:
            self._buffer(block, missing)
            return InsertResult.PENDING
        self._accept(block)
        self._drain_pending(h)
        return InsertResult.ACCEPTED

    def _buffer(self, block: Block, missing: Optional[list[bytes]] = None) -> None:
        self.pending[block.block_hash] = block
        for p in missing if missing is not None else block.parents:
            self._waiting_on.setdefault(p, set()).add(block.block_hash)

    def _accept(self, block: Block) -> None:
        h = block.block_hash
        self.blocks[h] = block
        self.children[h] = []
        if not block.parents:
            self.genesis = h
        for p in block.parents:
            self.children[p].append(h)
            self.tips.discard(p)
        self.tips.add(h)

    def _drain_pending(self, newly_accepted: bytes) -> None:
        frontier = [newly_accepted]
        while frontier:
            parent = frontier.pop()
            waiters = self._waiting_on.pop(parent, None)
            if not waiters:
                continue
            for wh in sorted(waiters):
                blk = self.pending.get(wh)
                if blk is None:
                    continue
                if all(p in self.blocks for p in blk.parents):
                    del self.pending[wh]
                    for p in blk.parents:
                        deps = self._waiting_on.get(p)
                        if deps:
                            deps.discard(wh)
                    self._accept(blk)
                    frontier.append(wh)

    def recompute_tips(self) -> set[bytes]:
        """Tips derived from scratch; used by tests to audit the maintained set."""
        referenced: set[bytes] = set()
        for blk in self.blocks.values():
            referenced.update(blk.parents)
        return set(self.blocks) - referenced


def classify_layers(ledger: DagLedger, k_conf: int) -> LayerAssignment:
    """Blocks with at least ``k_conf`` distinct descendants form the S-Layer."""
    if k_conf < 1:
        raise LedgerError("k_conf must be >= 1")
    order = _topo_order(ledger)
    index = {h: i for i, h in enumerate(order)}
    # Reverse topological pass accumulating descendant bitsets.
    masks = [0] * len(order)
    for h in reversed(order):
        i = index[h]
        m = 0
        for c in ledger.children[h]:
            j = index[c]
            m |= masks[j] | (1 << j)
        masks[i] = m
    secured = frozenset(h for h in order if masks[index[h]].bit_count() >= k_conf)
    unsecured = frozenset(set(ledger.blocks) - secured)
    return LayerAssignment(secured=secured, unsecured=unsecured, k_conf=k_conf)


def _topo_order(ledger: DagLedger) -> list[bytes]:
    """Hash-lexicographic topological order: repeatedly emit the smallest-hash
    block all of whose parents were already emitted."""
    if not ledger.blocks:
        raise EmptyLedgerError("ledger has no accepted blocks")
    remaining_parents = {
        h: sum(1 for p in blk.parents if p in ledger.blocks)
        for h, blk in ledger.blocks.items()
    }
    heap = [h for h, n in remaining_parents.items() if n == 0]
    heapq.heapify(heap)
    out: list[bytes] = []
    while heap:
        h = heapq.heappop(heap)
        out.append(h)
        for c in sorted(ledger.children[h]):
            remaining_parents[c] -= 1
            if remaining_parents[c] == 0:
                heapq.heappush(heap, c)
    if len(out) != len(ledger.blocks):
        raise LedgerError("cycle detected in block graph")
    return out


def order_blocks(ledger: DagLedger, layers: LayerAssignment) -> BlockOrder:
    """Topological order from genesis, children explored in ascending hash order,
    partitioned into confirmed (S-Layer) and unconfirmed (U-Layer) lists that
    each preserve the visit order."""
    visit = _topo_order(ledger)
    confirmed = tuple(h for h in visit if h in layers.secured)
    unconfirmed = tuple(h for h in visit if h not in layers.secured)
    return BlockOrder(visit=tuple(visit), confirmed=confirmed, unconfirmed=unconfirmed)


def transactions_in_order(ledger: DagLedger, order: BlockOrder) -> list[Transaction]:
    """Block order induces transaction order: block by block, then body order."""
    out: list[Transaction] = []
    for h in order.visit:
        out.extend(ledger.blocks[h].body)
    return out


def detect_double_spend(ledger: DagLedger, order: BlockOrder) -> list[Conflict]:
    """Conflicts are transactions sharing a spend reference; the earlier one in
    the confirmed-then-unconfirmed sequence wins. Duplicate inclusions of the
    same tx_id are not conflicts."""
    sequence = list(order.confirmed) + list(order.unconfirmed)
    confirmed_set = set(order.confirmed)
    spenders: dict[bytes, list[tuple[bytes, bytes]]] = {}  # ref -> [(tx_id, block)]
    seen_tx: set[bytes] = set()
    for h in sequence:
        for tx in ledger.blocks[h].body:
            if tx.tx_id in seen_tx:
                continue
            seen_tx.add(tx.tx_id)
            for ref in tx.inputs:
                spenders.setdefault(ref, []).append((tx.tx_id, h))
    conflicts: list[Conflict] = []
    for ref in sorted(spenders):
        entries = spenders[ref]
        if len(entries) < 2:
            continue
        winner, winner_block = entries[0]
        losers = tuple(tx for tx, _ in entries[1:])
        provisional = all(blk not in confirmed_set for _, blk in entries)
        conflicts.append(
            Conflict(spend_ref=ref, winner=winner, losers=losers, provisional=provisional)
        )
    return conflicts


def confirmed_transactions(ledger: DagLedger, order: BlockOrder) -> list[Transaction]:
    """Executed confirmed ledger: walk confirmed blocks in order, first spend of
    each input wins, duplicate tx_ids and losing spends are skipped."""
    spent: set[bytes] = set()
    seen: set[bytes] = set()
    out: list[Transaction] = []
    for h in order.confirmed:
        for tx in ledger.blocks[h].body:
            if tx.tx_id in seen:
                continue
            seen.add(tx.tx_id)
            if any(ref in spent for ref in tx.inputs):
                continue
            spent.update(tx.inputs)
            out.append(tx)
    return out


def select_tips(ledger: DagLedger, k: int, rng) -> tuple[bytes, ...]:
    """Uniform sample of min(k, |tips|) distinct tips; deterministic under seed."""
    if not ledger.tips:
        raise EmptyLedgerError("ledger has no tips")
    pool = sorted(ledger.tips)
    n = min(k, len(pool))
    return tuple(sorted(rng.sample(pool, n)))


class Mempool:
    """Transactions awaiting inclusion, ordered by (submit_time, tx_id).

    A transaction leaves the pool exactly when it is first included in an
    accepted block; drafts handed to a producer are marked in flight so two
    producers in one epoch do not pick the same transactions.
    """

    def __init__(self) -> None:
        self._txs: dict[bytes, Transaction] = {}
        self._inflight: set[bytes] = set()

    def __len__(self) -> int:
        return len(self._txs)

    def add(self, tx: Transaction) -> None:
        if tx.tx_id not in self._txs:
            self._txs[tx.tx_id] = tx

    def available(self) -> list[Transaction]:
        txs = [t for h, t in self._txs.items() if h not in self._inflight]
        txs.sort(key=lambda t: (t.submit_time, t.tx_id))
        return txs

    def draw(self, n: int) -> list[Transaction]:
        picked = self.available()[:n]
        self._inflight.update(t.tx_id for t in picked)
        return picked

    def settle(self, accepted_tx_ids: Iterable[bytes]) -> None:
        for h in accepted_tx_ids:
            self._txs.pop(h, None)
        self._inflight &= set(self._txs)

    def release_inflight(self) -> None:
        self._inflight.clear()
