"""Canonical byte layouts and double-SHA256 digests for blocks and transactions.

Every hash in the system is SHA256 applied twice over a fixed little-endian
serialization, so two processes that agree on the field values agree on the
digest. The layouts here are the wire/golden-file contract; changing them
invalidates every committed fixture.
"""

from __future__ import annotations

import hashlib
import struct
from collections.abc import Iterable, Sequence

HASH_LEN = 32
ZERO_HASH = b"\x00" * HASH_LEN

# Header fields: version u32 | parent_count u16 | parents (32B each, ascending)
# | merkle_root 32B | timestamp u64 | producer 32B | nonce u64, all little-endian.
_HEADER_FIXED = struct.Struct("<IH")
_HEADER_TAIL = struct.Struct("<Q32sQ")

# Transaction fields (tx_id omitted): sender 32B | input_count u16
# | inputs (32B each, ascending) | payload_size u32 | submit_time u64
# | sig_len u16 | signature bytes.
_TX_HEAD = struct.Struct("<32sH")
_TX_MID = struct.Struct("<IQH")


class MalformedHeaderError(ValueError):
    """Header fields violate the canonical layout (bad lengths, unsorted parents)."""


def double_sha256(data: bytes) -> bytes:
    return hashlib.sha256(hashlib.sha256(data).digest()).digest()


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def to_hex(digest: bytes) -> str:
    return digest.hex()


def _require_hash(value: bytes, what: str) -> bytes:
    if not isinstance(value, (bytes, bytearray)) or len(value) != HASH_LEN:
        raise MalformedHeaderError(f"{what} must be {HASH_LEN} bytes, got {value!r}")
    return bytes(value)


def check_parent_hashes(parent_hashes: Sequence[bytes]) -> tuple[bytes, ...]:
    """Validate the parent list: 32-byte entries, strictly ascending, no duplicates."""
    parents = tuple(_require_hash(p, "parent hash") for p in parent_hashes)
    for a, b in zip(parents, parents[1:]):
        if a == b:
            raise MalformedHeaderError("duplicate parent hash")
        if a > b:
            raise MalformedHeaderError("parent hashes not sorted ascending")
    return parents


def serialize_header(
    version: int,
    parent_hashes: Sequence[bytes],
    merkle_root: bytes,
    timestamp: int,
    producer: bytes,
    nonce: int,
) -> bytes:
    parents = check_parent_hashes(parent_hashes)
    if version < 0 or timestamp < 0 or nonce < 0:
        raise MalformedHeaderError("header integer fields must be non-negative")
    buf = bytearray(_HEADER_FIXED.pack(version, len(parents)))
    for p in parents:
        buf += p
    buf += _require_hash(merkle_root, "merkle_root")
    buf += _HEADER_TAIL.pack(timestamp, _require_hash(producer, "producer"), nonce)
    return bytes(buf)


def serialize_transaction(
    sender: bytes,
    inputs: Iterable[bytes],
    payload_size: int,
    submit_time: int,
    signature: bytes,
) -> bytes:
    refs = sorted(_require_hash(r, "input reference") for r in inputs)
    buf = bytearray(_TX_HEAD.pack(_require_hash(sender, "sender"), len(refs)))
    for r in refs:
        buf += r
    buf += _TX_MID.pack(payload_size, submit_time, len(signature))
    buf += bytes(signature)
    return bytes(buf)
