"""Reputation engine: endorsement-graph node ranks, composite scores and the
event-driven rank update state machine.

The recursive rank is a power iteration over the endorsement graph (who
confirmed whose blocks). The initial-factor scalar cancels under the per-sweep
L1 normalization, so the normalized output depends only on the link structure.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional

DEFAULT_ITERATIONS = 50
TIE_EPSILON = 1e-9

# Reward/penalty magnitudes; see RankDeltas. The penalty roughly matches the
# block reward so a demoted producer needs many epochs to climb back.
DEFAULT_BLOCK_REWARD = 0.05
DEFAULT_VERIFY_REWARD = 0.01
DEFAULT_MISBEHAVIOR_PENALTY = 0.05


class RankingError(ValueError):
    pass


class NodeStatus(Enum):
    WAITING = "waiting"
    CONSENSUS = "consensus"
    EXITED = "exited"


class RankEvent(Enum):
    NEW_NODE = "new-node"
    BLOCK_CONFIRMED = "block-confirmed"
    TX_VERIFIED = "tx-verified"
    MISBEHAVIOR = "misbehavior"
    KEY_INVALID = "key-invalid"


@dataclass(frozen=True)
class RankWeights:
    """Composite weights for authentication (P), resource usage (U) and the
    current rank (R); must sum to one."""

    c1: float = 0.3
    c2: float = 0.2
    c3: float = 0.5

    def __post_init__(self) -> None:
        if min(self.c1, self.c2, self.c3) < 0:
            raise RankingError("weights must be non-negative")
        if abs(self.c1 + self.c2 + self.c3 - 1.0) > 1e-9:
            raise RankingError("weights must sum to 1")


@dataclass(frozen=True)
class RankDeltas:
    block_reward: float = DEFAULT_BLOCK_REWARD
    verify_reward: float = DEFAULT_VERIFY_REWARD
    misbehavior_penalty: float = DEFAULT_MISBEHAVIOR_PENALTY


@dataclass
class NodeRecord:
    node_id: bytes
    public_key: bytes = b""
    rank: float = 0.0
    join_time: int = 0
    participations: int = 0
    processed_tx_sizes: list[int] = field(default_factory=list)
    status: NodeStatus = NodeStatus.CONSENSUS
    outbound_links: int = 0
    misbehavior_count: int = 0
    key_valid: bool = True
    resource_score: float = 0.0  # U, refreshed each epoch
    composite: float = 0.0  # c1*P + c2*U + c3*R

    @property
    def auth_score(self) -> float:
        return 1.0 if self.key_valid else 0.0


@dataclass(frozen=True)
class ScpReferral:
    node_id: bytes
    reason: str  # "negative-rank" | "key-invalid"
    rank: float


class EndorsementGraph:
    """Directed endorsement edges; an edge a -> b means a's block confirmed b's
    block. Self-endorsements are dropped."""

    def __init__(self, nodes: Iterable[bytes] = ()) -> None:
        self.nodes: set[bytes] = set(nodes)
        self.edges: dict[bytes, set[bytes]] = {}

    def add_edge(self, endorser: bytes, endorsed: bytes) -> None:
        if endorser == endorsed:
            return
        self.nodes.add(endorser)
        self.nodes.add(endorsed)
        self.edges.setdefault(endorser, set()).add(endorsed)

    def out_degree(self, node: bytes) -> int:
        return len(self.edges.get(node, ()))


class RankingTable:
    """Replicated per-node metadata pool. All simulated nodes share one table
    object because the event stream is what defines its contents."""

    def __init__(
        self,
        weights: Optional[RankWeights] = None,
        deltas: Optional[RankDeltas] = None,
        init_factor: float = 0.5,
    ) -> None:
        self.records: dict[bytes, NodeRecord] = {}
        self.weights = weights or RankWeights()
        self.deltas = deltas or RankDeltas()
        self.init_factor = init_factor

    def __contains__(self, node_id: bytes) -> bool:
        return node_id in self.records

    def get(self, node_id: bytes) -> NodeRecord:
        try:
            return self.records[node_id]
        except KeyError:
            raise RankingError(f"unknown node {node_id.hex()}") from None

    def ranking_list(self) -> list[NodeRecord]:
        return sorted(self.records.values(), key=lambda r: (-r.rank, r.node_id))

    def refresh_composite(self, node_id: bytes) -> None:
        rec = self.get(node_id)
        rec.composite = rank_score(
            rec.auth_score, rec.resource_score, rec.rank, self.weights
        )

    def export_lines(self) -> list[str]:
        lines = []
        for rec in self.ranking_list():
            lines.append(
                f"{rec.node_id.hex()} {rec.rank:.17g} {rec.status.value} "
                f"{rec.participations} {rec.misbehavior_count}"
            )
        return lines


def init_ranks(
    nodes: Iterable[bytes],
    weights: Optional[RankWeights] = None,
    deltas: Optional[RankDeltas] = None,
    init_factor: float = 0.5,
    initial_rank: Optional[float] = None,
) -> RankingTable:
    """Every founding node starts at 1/N (or an explicit override) with
    consensus status."""
    ids = sorted(set(nodes))
    if not ids:
        raise RankingError("cannot initialize ranks for an empty node set")
    rank0 = initial_rank if initial_rank is not None else 1.0 / len(ids)
    table = RankingTable(weights=weights, deltas=deltas, init_factor=init_factor)
    for nid in ids:
        table.records[nid] = NodeRecord(node_id=nid, rank=rank0, status=NodeStatus.CONSENSUS)
        table.refresh_composite(nid)
    return table


def node_rank(
    graph: EndorsementGraph,
    i: float = 0.5,
    iterations: int = DEFAULT_ITERATIONS,
) -> dict[bytes, float]:
    """Power iteration over the endorsement graph.

    Each sweep distributes every node's rank equally over its outbound links,
    normalizes, then lifts nodes with no inbound endorsements to the floor
    1/(10*N) and normalizes again. The i/(1-i) scalar cancels under the
    normalization and is validated only for range.
    """
    if not (0.0 < i < 1.0):
        raise RankingError("initial rank factor must lie strictly inside (0, 1)")
    if iterations < 1:
        raise RankingError("iterations must be >= 1")
    nodes = sorted(graph.nodes)
    if not nodes:
        return {}
    n = len(nodes)
    floor = 1.0 / (10.0 * n)
    has_inbound = {v for targets in graph.edges.values() for v in targets}
    ranks = {v: 1.0 / n for v in nodes}
    for _ in range(iterations):
        nxt = dict.fromkeys(nodes, 0.0)
        for src in nodes:
            targets = graph.edges.get(src)
            if not targets:
                continue
            share = ranks[src] / len(targets)
            for dst in sorted(targets):
                nxt[dst] += share
        total = sum(nxt.values())
        if total > 0.0:
            for v in nodes:
                nxt[v] /= total
        for v in nodes:
            if v not in has_inbound:
                nxt[v] = floor
        total = sum(nxt.values())
        for v in nodes:
            nxt[v] /= total
        ranks = nxt
    return ranks


def rank_score(P: float, U: float, R: float, w: Optional[RankWeights] = None) -> float:
    w = w or RankWeights()
    return w.c1 * P + w.c2 * U + w.c3 * R


def break_rank_ties(table: RankingTable) -> RankingTable:
    """Perturb bitwise-equal ranks by epsilon * position (node_id ascending within
    the tied group) so the ranking list is a strict order. Idempotent."""
    by_rank: dict[float, list[NodeRecord]] = {}
    for rec in table.records.values():
        by_rank.setdefault(rec.rank, []).append(rec)
    for recs in by_rank.values():
        if len(recs) < 2:
            continue
        recs.sort(key=lambda r: r.node_id)
        for pos, rec in enumerate(recs):
            rec.rank += TIE_EPSILON * pos
            table.refresh_composite(rec.node_id)
    return table


def default_new_rank(rng: random.Random) -> float:
    """Uniform draw strictly inside (0.1, 0.5)."""
    while True:
        x = rng.uniform(0.1, 0.5)
        if 0.1 < x < 0.5:
            return x


def update_ranks(
    table: RankingTable,
    node_id: bytes,
    event: RankEvent,
    rng: Optional[random.Random] = None,
    scale: float = 1.0,
    public_key: bytes = b"",
    join_time: int = 0,
) -> Optional[ScpReferral]:
    """Apply one rank event; returns an SCP referral when the node must leave
    (invalid key, or rank driven negative)."""
    if event is RankEvent.NEW_NODE:
        if node_id in table.records:
            raise RankingError(f"node {node_id.hex()} already registered")
        if rng is None:
            raise RankingError("new-node event requires a seeded generator")
        rec = NodeRecord(
            node_id=node_id,
            public_key=public_key,
            rank=default_new_rank(rng),
            join_time=join_time,
            status=NodeStatus.WAITING,
        )
        table.records[node_id] = rec
        table.refresh_composite(node_id)
        return None

    rec = table.get(node_id)
    referral: Optional[ScpReferral] = None
    if event is RankEvent.BLOCK_CONFIRMED:
        rec.rank += table.deltas.block_reward * scale
        rec.participations += 1
    elif event is RankEvent.TX_VERIFIED:
        rec.rank += table.deltas.verify_reward * scale
    elif event is RankEvent.MISBEHAVIOR:
        rec.rank -= table.deltas.misbehavior_penalty * scale
        rec.misbehavior_count += 1
        if rec.rank < 0.0:
            referral = ScpReferral(node_id, "negative-rank", rec.rank)
    elif event is RankEvent.KEY_INVALID:
        rec.key_valid = False
        referral = ScpReferral(node_id, "key-invalid", rec.rank)
    table.refresh_composite(node_id)
    return referral
