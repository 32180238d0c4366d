"""Session Control Protocol: validated entry/exit of committee members.

Tickets never carry private keys; possession is proven by signing a
primary-issued challenge (entry) or the leave payload (exit). Evictions are
signed by the primary instead of the leaving node.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

from .hashing import sha256
from .ranking import default_new_rank


class ScpError(ValueError):
    pass


class AdmissionError(ScpError):
    pass


class ExitError(ScpError):
    pass


class LeaveReason(Enum):
    VOLUNTARY = "voluntary"
    LOW_RANK_EVICTION = "low-rank-eviction"


class KeyPair:
    """Ed25519 keypair with deterministic generation from a seeded RNG."""

    def __init__(self, private: Ed25519PrivateKey) -> None:
        self._private = private
        self.public_key = private.public_key().public_bytes_raw()

    @classmethod
    def generate(cls, rng: random.Random) -> "KeyPair":
        return cls(Ed25519PrivateKey.from_private_bytes(rng.randbytes(32)))

    @property
    def node_id(self) -> bytes:
        return node_id_from_key(self.public_key)

    def sign(self, message: bytes) -> bytes:
        return self._private.sign(message)


def node_id_from_key(public_key: bytes) -> bytes:
    return sha256(public_key)


def verify_signature(public_key: bytes, signature: bytes, message: bytes) -> bool:
    try:
        Ed25519PublicKey.from_public_bytes(public_key).verify(signature, message)
        return True
    except (InvalidSignature, ValueError):
        return False


@dataclass(frozen=True)
class EntryTicket:
    public_key: bytes
    possession_proof: bytes  # signature over the committee challenge
    initial_rank: float

    def payload(self) -> bytes:
        return b"entry|" + self.public_key + b"|%.17g" % self.initial_rank


@dataclass(frozen=True)
class LeaveTicket:
    public_key: bytes
    possession_proof: bytes
    current_rank: float
    reason: LeaveReason

    def signed_message(self) -> bytes:
        return b"leave|" + self.public_key + b"|" + self.reason.value.encode()

    def payload(self) -> bytes:
        return self.signed_message() + b"|%.17g" % self.current_rank


@dataclass(frozen=True)
class PrepareMessage:
    """Confirmation broadcast for a membership change, signed by the primary
    (and additionally by the node itself for voluntary exits)."""

    kind: str  # "entry" | "exit"
    ticket_payload: bytes
    primary_signature: bytes
    node_signature: bytes = b""

    def verify(self, primary_key: bytes, node_key: bytes = b"") -> bool:
        ok = verify_signature(primary_key, self.primary_signature, self.ticket_payload)
        if self.node_signature:
            ok = ok and verify_signature(node_key, self.node_signature, self.ticket_payload)
        return ok


@dataclass
class CommitteeState:
    members: set[bytes] = field(default_factory=set)
    primary: bytes = b""
    f: int = 1
    waiting_pool: list[bytes] = field(default_factory=list)  # kept rank-descending
    exited: set[bytes] = field(default_factory=set)
    ranks: dict[bytes, float] = field(default_factory=dict)
    keys: dict[bytes, bytes] = field(default_factory=dict)  # node_id -> public key
    challenge: bytes = b"adr-challenge"
    join_phase: bool = False
    operational: bool = True
    log: list[str] = field(default_factory=list)

    @property
    def min_size(self) -> int:
        return 3 * self.f + 1

    def record(self, time_us: int, event: str, node_id: bytes) -> None:
        self.log.append(f"{time_us},{event},{node_id.hex()},{len(self.members)}")

    def sort_waiting(self) -> None:
        self.waiting_pool.sort(key=lambda n: (-self.ranks.get(n, 0.0), n))

    def rank_of(self, node_id: bytes) -> float:
        return self.ranks.get(node_id, 0.0)


def build_committee(
    members: Iterable[bytes],
    primary: bytes,
    f: int,
    ranks: dict[bytes, float],
    keys: dict[bytes, bytes],
) -> CommitteeState:
    committee = CommitteeState(
        members=set(members), primary=primary, f=f, ranks=dict(ranks), keys=dict(keys)
    )
    if primary not in committee.members:
        raise ScpError("primary must be a committee member")
    if len(committee.members) < committee.min_size:
        raise ScpError(
            f"initial committee of {len(committee.members)} below 3f+1={committee.min_size}"
        )
    return committee


def request_entry(keys: KeyPair, challenge: bytes, rng: random.Random) -> EntryTicket:
    return EntryTicket(
        public_key=keys.public_key,
        possession_proof=keys.sign(challenge),
        initial_rank=default_new_rank(rng),
    )


def admit(
    committee: CommitteeState,
    ticket: EntryTicket,
    primary_keys: KeyPair,
    now: int = 0,
) -> PrepareMessage:
    """Verified entrants join the waiting pool; seating happens via promotion."""
    node_id = node_id_from_key(ticket.public_key)
    if not verify_signature(ticket.public_key, ticket.possession_proof, committee.challenge):
        raise AdmissionError("possession proof does not verify")
    if node_id in committee.members or node_id in committee.waiting_pool:
        raise AdmissionError("identity already present")
    committee.exited.discard(node_id)
    committee.ranks[node_id] = ticket.initial_rank
    committee.keys[node_id] = ticket.public_key
    committee.waiting_pool.append(node_id)
    committee.sort_waiting()
    committee.record(now, "entry", node_id)
    committee.record(now, "admit", node_id)
    payload = ticket.payload()
    return PrepareMessage(
        kind="entry",
        ticket_payload=payload,
        primary_signature=primary_keys.sign(payload),
    )


def request_leave(
    keys: KeyPair,
    committee: CommitteeState,
    rank: float,
    reason: LeaveReason = LeaveReason.VOLUNTARY,
) -> LeaveTicket:
    node_id = keys.node_id
    if node_id not in committee.members:
        raise ExitError("leave requested by non-member")
    ticket = LeaveTicket(
        public_key=keys.public_key,
        possession_proof=b"",
        current_rank=rank,
        reason=reason,
    )
    return LeaveTicket(
        public_key=ticket.public_key,
        possession_proof=keys.sign(ticket.signed_message()),
        current_rank=rank,
        reason=reason,
    )


def make_eviction_ticket(
    primary_keys: KeyPair, node_public_key: bytes, rank: float
) -> LeaveTicket:
    ticket = LeaveTicket(
        public_key=node_public_key,
        possession_proof=b"",
        current_rank=rank,
        reason=LeaveReason.LOW_RANK_EVICTION,
    )
    return LeaveTicket(
        public_key=node_public_key,
        possession_proof=primary_keys.sign(ticket.signed_message()),
        current_rank=rank,
        reason=ticket.reason,
    )


def process_exit(
    committee: CommitteeState,
    ticket: LeaveTicket,
    primary_keys: KeyPair,
    now: int = 0,
    demote_to_waiting: bool = False,
) -> tuple[PrepareMessage, bool]:
    """Remove a member; below 3f+1 the join phase starts and waiting nodes are
    promoted. Evicted low-rank nodes may be demoted to the waiting pool instead
    of leaving the system entirely, so they can re-earn rank."""
    node_id = node_id_from_key(ticket.public_key)
    if node_id not in committee.members:
        raise ExitError(f"exit for unknown member {node_id.hex()}")
    if ticket.reason is LeaveReason.VOLUNTARY:
        signer = ticket.public_key
    else:
        signer = committee.keys.get(committee.primary, primary_keys.public_key)
    if not verify_signature(signer, ticket.possession_proof, ticket.signed_message()):
        raise ExitError("leave ticket signature does not verify")

    committee.members.discard(node_id)
    event = "evict" if ticket.reason is LeaveReason.LOW_RANK_EVICTION else "leave"
    committee.record(now, event, node_id)
    if demote_to_waiting and ticket.reason is LeaveReason.LOW_RANK_EVICTION:
        committee.waiting_pool.append(node_id)
        committee.sort_waiting()
    else:
        committee.exited.add(node_id)

    if node_id == committee.primary and committee.members:
        committee.primary = min(
            committee.members, key=lambda n: (-committee.rank_of(n), n)
        )

    # Broadcast the exact bytes the leaving node signed so both signatures in
    # the confirmation cover the same payload.
    payload = ticket.signed_message()
    node_sig = (
        ticket.possession_proof if ticket.reason is LeaveReason.VOLUNTARY else b""
    )
    message = PrepareMessage(
        kind="exit",
        ticket_payload=payload,
        primary_signature=primary_keys.sign(payload),
        node_signature=node_sig,
    )

    join_phase = len(committee.members) < committee.min_size
    if join_phase:
        committee.join_phase = True
        committee.record(now, "join-phase", node_id)
        promote_waiting(committee, now=now)
    return message, join_phase


def promote_waiting(committee: CommitteeState, now: int = 0) -> list[bytes]:
    """Seat the highest-ranked waiting nodes until 3f+1 is met; never seats a
    node with negative rank. An unfillable deficit flags the system
    non-operational."""
    promoted: list[bytes] = []
    committee.sort_waiting()
    while len(committee.members) < committee.min_size:
        candidate = None
        for node_id in committee.waiting_pool:
            if committee.rank_of(node_id) >= 0.0:
                candidate = node_id
                break
        if candidate is None:
            committee.operational = False
            committee.record(now, "non-operational", b"")
            break
        committee.waiting_pool.remove(candidate)
        committee.members.add(candidate)
        promoted.append(candidate)
        committee.record(now, "promote", candidate)
    if len(committee.members) >= committee.min_size:
        committee.join_phase = False
        committee.operational = True
    return promoted
