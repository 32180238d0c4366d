"""Deterministic discrete-event network layer.

Simulated time is integer microseconds so event ordering never depends on
floating-point rounding. A single run seed fans out into named substreams
(delays, election, workload, ...) so enabling an adversary does not perturb the
honest nodes' draws.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass
from enum import Enum
from heapq import heappop, heappush
from typing import Callable, Iterable, Optional

US_PER_SECOND = 1_000_000

BROADCAST = b"*"


class SimError(ValueError):
    pass


def seconds_to_us(seconds: float) -> int:
    return int(round(seconds * US_PER_SECOND))


def substream(seed: int, name: str) -> random.Random:
    """Independent deterministic RNG stream derived from the run seed."""
    digest = hashlib.sha256(f"{seed}/{name}".encode()).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


class EventKind(Enum):
    PRODUCE_BLOCK = "produce-block"
    DELIVER_BLOCK = "deliver-block"
    DELIVER_TX = "deliver-tx"
    SCP_MESSAGE = "scp-message"
    DIGEST_EXCHANGE = "digest-exchange"
    PRODUCER_TIMEOUT = "producer-timeout"


@dataclass(frozen=True)
class SimEvent:
    fire_time: int  # microseconds
    sequence: int
    kind: EventKind
    payload: object
    source: bytes = b""
    destination: bytes = BROADCAST


@dataclass(frozen=True)
class DelayModel:
    """Per-message delay distribution: fixed, uniform(lo, hi) or exponential(mean),
    all in seconds."""

    kind: str = "uniform"
    lo: float = 0.1
    hi: float = 1.0
    mean: float = 0.5
    fixed: float = 0.2

    def sample_us(self, rng: random.Random) -> int:
        if self.kind == "fixed":
            delay = self.fixed
        elif self.kind == "uniform":
            delay = rng.uniform(self.lo, self.hi)
        elif self.kind == "exponential":
            delay = rng.expovariate(1.0 / self.mean)
        else:
            raise SimError(f"unknown delay model {self.kind!r}")
        return max(0, seconds_to_us(delay))


@dataclass(frozen=True)
class AdversaryProfile:
    node_id: bytes
    double_spend: bool = False
    withhold_blocks: bool = False
    equivocate: bool = False
    garbage_signature: bool = False
    double_spend_pairs: int = 2  # conflicting twins fabricated per block
    double_spend_budget: Optional[int] = None  # total twins cap; None = unlimited
    active_epochs: Optional[frozenset[int]] = None  # None = always active

    def active(self, epoch: int) -> bool:
        return self.active_epochs is None or epoch in self.active_epochs


class EventQueue:
    """Min-heap of events keyed by (fire_time, sequence); sequence breaks ties
    in schedule order."""

    def __init__(self) -> None:
        self._heap: list[tuple[int, int, SimEvent]] = []
        self._seq = 0
        self.now = 0
        self.trace: list[str] = []
        self.dispatched = 0

    def __len__(self) -> int:
        return len(self._heap)

    def schedule(
        self,
        fire_time: int,
        kind: EventKind,
        payload: object,
        source: bytes = b"",
        destination: bytes = BROADCAST,
    ) -> SimEvent:
        if fire_time < self.now:
            raise SimError(f"event scheduled in the past ({fire_time} < {self.now})")
        event = SimEvent(fire_time, self._seq, kind, payload, source, destination)
        heappush(self._heap, (fire_time, self._seq, event))
        self._seq += 1
        return event

    def broadcast(
        self,
        now: int,
        kind: EventKind,
        payload: object,
        source: bytes,
        destinations: Iterable[bytes],
        delays: DelayModel,
        rng: random.Random,
    ) -> int:
        """One delivery per destination (excluding the sender), each with an
        independently sampled delay."""
        count = 0
        for dest in destinations:
            if dest == source:
                continue
            self.schedule(now + delays.sample_us(rng), kind, payload, source, dest)
            count += 1
        return count

    def run_until(
        self,
        t_end: Optional[int],
        handler: Callable[[SimEvent], None],
        payload_digest: Optional[Callable[[object], str]] = None,
    ) -> None:
        """Dispatch in (fire_time, sequence) order until the queue empties or the
        next event lies beyond t_end."""
        while self._heap:
            fire_time, _, event = self._heap[0]
            if t_end is not None and fire_time > t_end:
                break
            heappop(self._heap)
            self.now = fire_time
            self.dispatched += 1
            if payload_digest is not None:
                digest = payload_digest(event.payload)
                dest = "broadcast" if event.destination == BROADCAST else event.destination.hex()
                src = event.source.hex() if event.source else "-"
                self.trace.append(
                    f"{event.fire_time},{event.sequence},{event.kind.value},{src},{dest},{digest}"
                )
            handler(event)
