from __future__ import annotations

import random
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from adr.hashing import sha256
from adr.ledger import DagLedger, Transaction, create_block


def make_tx(tag: bytes, inputs=None, submit_time=0, payload_size=100) -> Transaction:
    sender = sha256(b"sender|" + tag)
    refs = inputs if inputs is not None else (sha256(b"input|" + tag),)
    return Transaction.create(
        sender=sender,
        inputs=refs,
        payload_size=payload_size,
        submit_time=submit_time,
        signature=b"sig-" + tag,
    )


def build_ledger(parent_sets: list[tuple[int, ...]]) -> tuple[DagLedger, list[bytes]]:
    """Build a ledger from index-based parent sets; entry 0 must be the genesis
    (empty parents). Returns the ledger and block hashes by index."""
    ledger = DagLedger()
    hashes: list[bytes] = []
    for i, parents in enumerate(parent_sets):
        tips = tuple(hashes[p] for p in parents)
        txs = () if not parents else (make_tx(b"blk%d" % i),)
        block = create_block(sha256(b"producer"), tips, txs, now=i, nonce=i)
        ledger.insert_block(block)
        hashes.append(block.block_hash)
    return ledger, hashes


@pytest.fixture
def rng() -> random.Random:
    return random.Random(12345)
