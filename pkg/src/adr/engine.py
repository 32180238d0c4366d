"""Epoch loop composing ledger, ranking, SCP and the event-driven network.

One World instance is a full simulated deployment: every node keeps its own
DAG replica, blocks travel through the event queue with sampled delays, and
settlement at the end of each epoch applies rank rewards/penalties, processes
evictions and cross-checks ledger digests.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Optional

from .hashing import double_sha256, sha256
from .ledger import (
    Block,
    DagLedger,
    InsertResult,
    Mempool,
    Transaction,
    classify_layers,
    confirmed_transactions,
    create_block,
    detect_double_spend,
    order_blocks,
    select_tips,
)
from .ranking import (
    NodeStatus,
    RankDeltas,
    RankEvent,
    RankingTable,
    RankWeights,
    ScpReferral,
    break_rank_ties,
    init_ranks,
    update_ranks,
)
from .scp import (
    CommitteeState,
    KeyPair,
    build_committee,
    make_eviction_ticket,
    process_exit,
    verify_signature,
)
from .simnet import (
    AdversaryProfile,
    DelayModel,
    EventKind,
    EventQueue,
    SimEvent,
    substream,
    US_PER_SECOND,
)

DEFAULT_BLOCK_INTERVAL_S = 440.0
THETA_MAX = 1.0 / 3.0


class EngineError(RuntimeError):
    pass


class NonOperationalError(EngineError):
    """Committee fell below 3f+1 with an empty waiting pool."""


class ElectionError(EngineError):
    pass


@dataclass(frozen=True)
class EpochConfig:
    epoch_length_us: int = int(2 * DEFAULT_BLOCK_INTERVAL_S * US_PER_SECOND)
    block_interval_us: int = int(DEFAULT_BLOCK_INTERVAL_S * US_PER_SECOND)
    producers_per_epoch: int = 4
    k_conf: int = 6
    weights: RankWeights = field(default_factory=RankWeights)
    deltas: RankDeltas = field(default_factory=RankDeltas)
    theta_max: float = THETA_MAX
    max_block_txs: int = 100
    tip_count: int = 2
    capacity_bytes: int = 50_000
    jitter_mean_us: int = int(DEFAULT_BLOCK_INTERVAL_S * US_PER_SECOND)

    def __post_init__(self) -> None:
        if min(self.epoch_length_us, self.block_interval_us, self.producers_per_epoch) <= 0:
            raise EngineError("epoch configuration values must be positive")
        if not (0.0 < self.theta_max < 1.0):
            raise EngineError("theta_max must lie in (0, 1)")

    @property
    def blocks_per_producer(self) -> int:
        return max(1, self.epoch_length_us // self.block_interval_us)


@dataclass(frozen=True)
class NodePopulation:
    true_nodes: frozenset[bytes]
    malicious_nodes: frozenset[bytes]

    def __post_init__(self) -> None:
        if self.true_nodes & self.malicious_nodes:
            raise EngineError("a node cannot be both true and malicious")

    @property
    def all_nodes(self) -> frozenset[bytes]:
        return self.true_nodes | self.malicious_nodes


@dataclass(frozen=True)
class StateDigest:
    node_id: bytes
    epoch: int
    ledger_hash: bytes


@dataclass(frozen=True)
class ConsistencyResult:
    consistent: bool
    quorum: int
    majority_hash: bytes
    dissenting: tuple[bytes, ...]


def liveness_ratio(pop: NodePopulation) -> tuple[float, bool]:
    """Faulty fraction theta = |malicious| / |all|; live while theta <= 1/3."""
    total = len(pop.all_nodes)
    if total == 0:
        raise EngineError("population is empty")
    theta = len(pop.malicious_nodes) / total
    return theta, theta <= THETA_MAX


def consistency_quorum(theta: float, n_total: int) -> int:
    return max(math.floor((1.0 - theta) * n_total) + 1, 5)


def verify_consistency(
    digests: list[StateDigest], theta: float, n_total: int
) -> ConsistencyResult:
    seen: set[bytes] = set()
    for d in digests:
        if d.node_id in seen:
            raise EngineError(f"duplicate digest from {d.node_id.hex()}")
        seen.add(d.node_id)
    quorum = consistency_quorum(theta, n_total)
    counts: dict[bytes, int] = {}
    for d in digests:
        counts[d.ledger_hash] = counts.get(d.ledger_hash, 0) + 1
    majority = min(
        counts, key=lambda h: (-counts[h], h)
    ) if counts else b""
    dissenting = tuple(sorted(d.node_id for d in digests if d.ledger_hash != majority))
    consistent = counts.get(majority, 0) >= quorum
    return ConsistencyResult(consistent, quorum, majority, dissenting)


def elect_producers(
    table: RankingTable,
    committee: CommitteeState,
    count: int,
    rng: random.Random,
    exclude: frozenset[bytes] = frozenset(),
) -> list[bytes]:
    """Rank-proportional sample without replacement from eligible members
    (positive rank, valid key)."""
    if not committee.operational:
        raise ElectionError("committee is not operational")
    candidates = []
    for nid in sorted(committee.members):
        if nid in exclude:
            continue
        rec = table.records.get(nid)
        if rec is None or rec.rank <= 0.0 or not rec.key_valid:
            continue
        candidates.append((nid, rec.composite))
    if not candidates:
        raise ElectionError("no eligible members for election")
    chosen: list[bytes] = []
    pool = list(candidates)
    while pool and len(chosen) < count:
        total = sum(w for _, w in pool)
        r = rng.random() * total
        acc = 0.0
        pick = len(pool) - 1
        for idx, (_, w) in enumerate(pool):
            acc += w
            if r < acc:
                pick = idx
                break
        chosen.append(pool.pop(pick)[0])
    return chosen


@dataclass
class SimNode:
    node_id: bytes
    index: int
    keys: KeyPair
    capability: float = 1.0
    ledger: DagLedger = field(default_factory=DagLedger)
    adversary: Optional[AdversaryProfile] = None
    verified_blocks_epoch: int = 0
    processed_bytes_epoch: int = 0
    heartbeat_counter: int = 0


@dataclass(frozen=True)
class BlockMessage:
    block: Block
    signature: bytes


@dataclass(frozen=True)
class ProduceTask:
    producer: bytes
    epoch: int
    slot: int
    attempt: int = 0
    deadline: int = 0  # 0 = no deadline enforced


@dataclass(frozen=True)
class TimeoutCheck:
    producer: bytes
    epoch: int
    slot: int
    attempt: int
    failed: tuple[bytes, ...] = ()


@dataclass
class EpochMetrics:
    epoch: int
    confirmed_blocks: int
    new_confirmed_blocks: int
    confirmed_txs: int
    new_confirmed_txs: int
    tps: float
    mean_latency_s: Optional[float]
    committee_size: int
    theta: float
    live: bool
    consistency: str
    leader_capability: float
    producers: tuple[bytes, ...]


class World:
    def __init__(
        self,
        config: EpochConfig,
        node_count: int,
        seed: int,
        f: Optional[int] = None,
        default_reputation: float = 0.5,
        capabilities: Optional[list[float]] = None,
        faulty_indices: Optional[set[int]] = None,
        adversary_factory=None,
        delays: Optional[DelayModel] = None,
        tx_load_per_epoch: int = 200,
        tx_payload_range: tuple[int, int] = (100, 400),
    ) -> None:
        if node_count < 4:
            raise EngineError("need at least 4 nodes")
        self.config = config
        self.seed = seed
        self.delays = delays or DelayModel()
        self.tx_load = tx_load_per_epoch
        self.tx_payload_range = tx_payload_range

        self.rng_keys = substream(seed, "keys")
        self.rng_election = substream(seed, "election")
        self.rng_substitute = substream(seed, "substitute")
        self.rng_delays = substream(seed, "delays")
        self.rng_jitter = substream(seed, "jitter")
        self.rng_tips = substream(seed, "tips")
        self.rng_workload = substream(seed, "workload")
        self.rng_adversary = substream(seed, "adversary")

        self.nodes: dict[bytes, SimNode] = {}
        self.node_order: list[bytes] = []
        for i in range(node_count):
            keys = KeyPair.generate(self.rng_keys)
            cap = capabilities[i] if capabilities else 1.0
            node = SimNode(node_id=keys.node_id, index=i, keys=keys, capability=cap)
            self.nodes[node.node_id] = node
            self.node_order.append(node.node_id)

        faulty_indices = faulty_indices or set()
        malicious = frozenset(self.node_order[i] for i in faulty_indices)
        honest = frozenset(set(self.node_order) - malicious)
        self.population = NodePopulation(true_nodes=honest, malicious_nodes=malicious)
        if adversary_factory is not None:
            for nid in sorted(malicious):
                self.nodes[nid].adversary = adversary_factory(nid)

        self.table = init_ranks(
            self.node_order,
            weights=config.weights,
            deltas=config.deltas,
            initial_rank=default_reputation,
        )
        ranks = {nid: rec.rank for nid, rec in self.table.records.items()}
        keys_map = {nid: self.nodes[nid].keys.public_key for nid in self.node_order}
        if f is None:
            faulty = len(malicious)
            f = max(1, (node_count - faulty - 1) // 3)
        self.committee = build_committee(
            members=self.node_order,
            primary=self.node_order[0],
            f=f,
            ranks=ranks,
            keys=keys_map,
        )

        self.queue = EventQueue()
        self.mempool = Mempool()
        self.epoch = 0
        self.metrics: list[EpochMetrics] = []
        self.rank_history: list[dict[bytes, float]] = []
        self.latency: dict[bytes, tuple[int, Optional[int]]] = {}  # tx_id -> (submit, confirm)

        self.prev_secured: set[bytes] = set()
        self.prev_confirmed_txids: set[bytes] = set()
        self.seen_conflicts: set[tuple[bytes, ...]] = set()
        self.rewarded_blocks: set[bytes] = set()
        self.produced_slots: dict[tuple[bytes, int, int], int] = {}
        self.block_meta: dict[bytes, tuple[bytes, int, int]] = {}
        self.sig_cache: dict[bytes, bool] = {}
        self.garbage_offenders: set[bytes] = set()
        self.adversary_spent: dict[bytes, int] = {}
        self.timeout_offenders: list[bytes] = []
        self.epoch_digests: list[StateDigest] = []
        self.epoch_start = 0
        self.epoch_end = 0
        self.workload_counter = 0

        # Scenario hooks: force or exclude specific nodes in a given epoch's
        # election (used by the misbehaving-leader reproduction).
        self.force_producers: dict[int, tuple[bytes, ...]] = {}
        self.election_exclude: dict[int, set[bytes]] = {}
        self.designated_misbehaver: Optional[bytes] = None

        genesis = create_block(b"\x00" * 32, (), (), now=0)
        for node in self.nodes.values():
            node.ledger.insert_block(genesis)
        self.genesis_hash = genesis.block_hash

    # -- event handlers -----------------------------------------------------

    def _payload_digest(self, payload: object) -> str:
        if isinstance(payload, BlockMessage):
            return payload.block.block_hash.hex()[:16]
        if isinstance(payload, Transaction):
            return payload.tx_id.hex()[:16]
        if isinstance(payload, ProduceTask):
            return f"slot{payload.slot}a{payload.attempt}"
        if isinstance(payload, TimeoutCheck):
            return f"slot{payload.slot}a{payload.attempt}"
        if isinstance(payload, StateDigest):
            return payload.ledger_hash.hex()[:16]
        return sha256(repr(payload).encode()).hex()[:16]

    def _handle(self, event: SimEvent) -> None:
        if event.kind is EventKind.PRODUCE_BLOCK:
            self._handle_produce(event)
        elif event.kind is EventKind.DELIVER_BLOCK:
            self._handle_deliver_block(event)
        elif event.kind is EventKind.DELIVER_TX:
            self.mempool.add(event.payload)
        elif event.kind is EventKind.PRODUCER_TIMEOUT:
            self._handle_timeout(event)
        elif event.kind is EventKind.DIGEST_EXCHANGE:
            self._handle_digest(event)

    def _twin_transaction(self, original: Transaction, node: SimNode, now: int) -> Transaction:
        return Transaction.create(
            sender=node.node_id,
            inputs=original.inputs,
            payload_size=original.payload_size,
            submit_time=now,
            signature=self.rng_adversary.randbytes(16),
        )

    def _heartbeat_tx(self, node: SimNode, now: int) -> Transaction:
        node.heartbeat_counter += 1
        ref = sha256(b"heartbeat|" + node.node_id + node.heartbeat_counter.to_bytes(8, "little"))
        return Transaction.create(
            sender=node.node_id, inputs=(ref,), payload_size=32, submit_time=now
        )

    # Fraction of the block interval a full-capability node needs to assemble a
    # block; assembly time scales inversely with capability, so under-provisioned
    # producers overrun their slot deadline and fail it.
    ASSEMBLY_FRACTION = 0.25

    def _assembly_us(self, node: SimNode) -> int:
        cap = max(node.capability, 0.01)
        return int(self.config.block_interval_us * self.ASSEMBLY_FRACTION / cap)

    def _handle_produce(self, event: SimEvent) -> None:
        task: ProduceTask = event.payload
        node = self.nodes[task.producer]
        now = event.fire_time
        if task.deadline and now + self._assembly_us(node) > task.deadline:
            return  # block would miss the slot; the timeout elects a substitute
        profile = node.adversary
        if profile is not None and not profile.active(task.epoch):
            profile = None

        cap = max(1, round(node.capability * self.config.max_block_txs))
        pairs = 0
        if profile is not None and profile.double_spend:
            pairs = min(profile.double_spend_pairs, cap // 2, self.tx_load)
            if profile.double_spend_budget is not None:
                spent = self.adversary_spent.get(node.node_id, 0)
                pairs = min(pairs, profile.double_spend_budget - spent)
                pairs = max(pairs, 0)
                self.adversary_spent[node.node_id] = spent + pairs
        drawn = self.mempool.draw(max(1, cap - pairs))
        txs: list[Transaction] = list(drawn)
        if pairs and drawn:
            for original in drawn[: min(pairs, len(drawn))]:
                txs.append(self._twin_transaction(original, node, now))
        if not txs:
            txs = [self._heartbeat_tx(node, now)]

        tips = select_tips(node.ledger, self.config.tip_count, self.rng_tips)
        blocks = [
            create_block(node.node_id, tips, txs, now=now, nonce=task.slot, ledger=node.ledger)
        ]
        if profile is not None and profile.equivocate:
            blocks.append(
                create_block(
                    node.node_id, tips, txs, now=now, nonce=task.slot + 1_000_000,
                    ledger=node.ledger,
                )
            )
        for block in blocks:
            node.ledger.insert_block(block)
            self.block_meta[block.block_hash] = (task.producer, task.epoch, task.slot)

        if profile is not None and profile.withhold_blocks:
            return  # broadcast suppressed; the slot timeout will catch it

        key = (task.producer, task.epoch, task.slot)
        self.produced_slots[key] = self.produced_slots.get(key, 0) + len(blocks)
        for block in blocks:
            signature = node.keys.sign(block.block_hash)
            if profile is not None and profile.garbage_signature:
                signature = bytes([signature[0] ^ 0xFF]) + signature[1:]
            message = BlockMessage(block=block, signature=signature)
            self.queue.broadcast(
                now,
                EventKind.DELIVER_BLOCK,
                message,
                source=task.producer,
                destinations=self.node_order,
                delays=self.delays,
                rng=self.rng_delays,
            )

    def _verify_block_message(self, message: BlockMessage) -> bool:
        h = message.block.block_hash
        cached = self.sig_cache.get(h)
        if cached is not None:
            return cached
        producer = message.block.producer
        node = self.nodes.get(producer)
        ok = node is not None and verify_signature(
            node.keys.public_key, message.signature, h
        )
        self.sig_cache[h] = ok
        return ok

    def _handle_deliver_block(self, event: SimEvent) -> None:
        message: BlockMessage = event.payload
        dest = self.nodes[event.destination]
        if not self._verify_block_message(message):
            self.garbage_offenders.add(event.source)
            return
        result = dest.ledger.insert_block(message.block)
        if result is not InsertResult.REJECTED:
            dest.verified_blocks_epoch += 1

    def _handle_timeout(self, event: SimEvent) -> None:
        check: TimeoutCheck = event.payload
        key = (check.producer, check.epoch, check.slot)
        if self.produced_slots.get(key):
            return
        self.timeout_offenders.append(check.producer)
        failed = set(check.failed) | {check.producer}
        if check.attempt + 1 >= len(self.committee.members):
            return
        try:
            substitute = elect_producers(
                self.table,
                self.committee,
                1,
                self.rng_substitute,
                exclude=frozenset(failed),
            )[0]
        except ElectionError:
            return
        now = event.fire_time
        self.queue.schedule(
            now,
            EventKind.PRODUCE_BLOCK,
            ProduceTask(
                substitute, check.epoch, check.slot, check.attempt + 1,
                deadline=now + self.config.block_interval_us,
            ),
            source=substitute,
        )
        self.queue.schedule(
            now + self.config.block_interval_us,
            EventKind.PRODUCER_TIMEOUT,
            TimeoutCheck(substitute, check.epoch, check.slot, check.attempt + 1, tuple(sorted(failed))),
            source=substitute,
        )

    def _node_digest(self, node: SimNode, epoch: int) -> StateDigest:
        layers = classify_layers(node.ledger, self.config.k_conf)
        order = order_blocks(node.ledger, layers)
        return StateDigest(
            node_id=node.node_id,
            epoch=epoch,
            ledger_hash=double_sha256(b"".join(order.confirmed)),
        )

    def _handle_digest(self, event: SimEvent) -> None:
        self.epoch_digests.append(self._node_digest(self.nodes[event.destination], self.epoch))

    # -- epoch loop ---------------------------------------------------------

    def _elect_for_epoch(self, epoch: int) -> list[bytes]:
        exclude = frozenset(self.election_exclude.get(epoch, set()))
        forced = [
            nid for nid in self.force_producers.get(epoch, ())
            if nid in self.committee.members
        ]
        count = self.config.producers_per_epoch - len(forced)
        elected = forced + elect_producers(
            self.table,
            self.committee,
            max(count, 0),
            self.rng_election,
            exclude=exclude | frozenset(forced),
        )
        return elected[: self.config.producers_per_epoch]

    def _schedule_workload(self, epoch_start: int, epoch_end: int) -> None:
        base = max(self.queue.now, epoch_start)
        span = max(epoch_end - base, 1)
        lo, hi = self.tx_payload_range
        for _ in range(self.tx_load):
            t = base + int(self.rng_workload.random() * span)
            sender = self.nodes[
                self.node_order[self.rng_workload.randrange(len(self.node_order))]
            ]
            self.workload_counter += 1
            ref = sha256(b"resource|" + self.workload_counter.to_bytes(8, "little"))
            tx = Transaction.create(
                sender=sender.node_id,
                inputs=(ref,),
                payload_size=self.rng_workload.randint(lo, hi),
                submit_time=t,
                signature=self.rng_workload.randbytes(16),
            )
            self.latency[tx.tx_id] = (t, None)
            self.queue.schedule(t, EventKind.DELIVER_TX, tx, source=sender.node_id)

    def step_epoch(self) -> EpochMetrics:
        if not self.committee.operational:
            raise NonOperationalError(
                f"committee below 3f+1={self.committee.min_size} with empty waiting pool"
            )
        self.epoch += 1
        epoch = self.epoch
        cfg = self.config
        self.epoch_start = (epoch - 1) * cfg.epoch_length_us
        self.epoch_end = epoch * cfg.epoch_length_us
        base = max(self.queue.now, self.epoch_start)

        producers = self._elect_for_epoch(epoch)
        self._schedule_workload(self.epoch_start, self.epoch_end)
        jitter_cap = int(cfg.block_interval_us * 0.9)
        for slot in range(cfg.blocks_per_producer):
            slot_time = base + slot * cfg.block_interval_us
            for producer in producers:
                jitter = min(
                    int(self.rng_jitter.expovariate(1.0 / cfg.jitter_mean_us)), jitter_cap
                )
                self.queue.schedule(
                    slot_time + jitter,
                    EventKind.PRODUCE_BLOCK,
                    ProduceTask(
                        producer, epoch, slot,
                        deadline=slot_time + cfg.block_interval_us,
                    ),
                    source=producer,
                )
                self.queue.schedule(
                    slot_time + cfg.block_interval_us,
                    EventKind.PRODUCER_TIMEOUT,
                    TimeoutCheck(producer, epoch, slot, 0),
                    source=producer,
                )
        self.queue.run_until(None, self._handle, self._payload_digest)

        # Digest exchange once all deliveries for the epoch have settled.
        self.epoch_digests = []
        digest_time = max(self.queue.now, self.epoch_end)
        for nid in sorted(self.committee.members):
            self.queue.schedule(
                digest_time, EventKind.DIGEST_EXCHANGE, None, source=nid, destination=nid
            )
        self.queue.run_until(None, self._handle, self._payload_digest)

        return self._settle_epoch(epoch, producers)

    def _settle_epoch(self, epoch: int, producers: list[bytes]) -> EpochMetrics:
        cfg = self.config
        primary = self.nodes[self.committee.primary]
        layers = classify_layers(primary.ledger, cfg.k_conf)
        order = order_blocks(primary.ledger, layers)
        conflicts = detect_double_spend(primary.ledger, order)
        winners = confirmed_transactions(primary.ledger, order)

        loser_txids = {tx for c in conflicts for tx in c.losers}
        referrals: dict[bytes, ScpReferral] = {}

        def apply(nid: bytes, event: RankEvent, scale: float = 1.0) -> None:
            ref = update_ranks(self.table, nid, event, scale=scale)
            if ref is not None and ref.node_id not in referrals:
                referrals[ref.node_id] = ref

        # Rewards for newly secured, conflict-free blocks.
        new_secured = sorted(layers.secured - self.prev_secured)
        for h in new_secured:
            block = primary.ledger.blocks[h]
            if h == self.genesis_hash or h in self.rewarded_blocks:
                continue
            self.rewarded_blocks.add(h)
            producer_id = block.producer
            if producer_id not in self.table.records:
                continue
            if any(tx.tx_id in loser_txids for tx in block.body):
                continue  # offending blocks earn nothing
            # Reward in proportion to the work the block carried, so capable
            # producers climb the ranking faster than barely-filled ones.
            fullness = min(1.0, len(block.body) / cfg.max_block_txs)
            apply(producer_id, RankEvent.BLOCK_CONFIRMED, scale=fullness)
            apply(producer_id, RankEvent.TX_VERIFIED, scale=len(block.body) / 10.0)
            node = self.nodes.get(producer_id)
            if node is not None:
                node.processed_bytes_epoch += sum(tx.payload_size for tx in block.body)
                self.table.records[producer_id].processed_tx_sizes.append(
                    sum(tx.payload_size for tx in block.body)
                )

        # Flat verification reward for every node that checked blocks this epoch.
        for nid in self.node_order:
            node = self.nodes[nid]
            rec = self.table.records.get(nid)
            if rec is None or rec.status is NodeStatus.EXITED:
                continue
            if node.verified_blocks_epoch > 0:
                apply(nid, RankEvent.TX_VERIFIED, scale=1.0)

        # Penalties: double spends (one offense per conflict pair), equivocation,
        # bad signatures, withheld slots.
        for conflict in conflicts:
            key = conflict.pair_key()
            if key in self.seen_conflicts:
                continue
            self.seen_conflicts.add(key)
            offenders = set()
            for loser in conflict.losers:
                block_hash = self._block_containing(primary.ledger, order, loser)
                if block_hash is not None:
                    offenders.add(primary.ledger.blocks[block_hash].producer)
            for nid in sorted(offenders):
                if nid in self.table.records:
                    apply(nid, RankEvent.MISBEHAVIOR)

        equivocators = sorted(
            nid
            for (nid, ep, _slot), n in self.produced_slots.items()
            if ep == epoch and n > 1
        )
        for nid in equivocators:
            apply(nid, RankEvent.MISBEHAVIOR)
        for nid in sorted(self.garbage_offenders):
            if nid in self.table.records:
                apply(nid, RankEvent.MISBEHAVIOR)
        timeout_counts: dict[bytes, int] = {}
        for nid in self.timeout_offenders:
            timeout_counts[nid] = timeout_counts.get(nid, 0) + 1
        for nid in sorted(timeout_counts):
            if nid in self.table.records:
                apply(nid, RankEvent.MISBEHAVIOR, scale=float(timeout_counts[nid]))
        self.garbage_offenders = set()
        self.timeout_offenders = []

        # SCP referrals: evict within the same epoch, demoting to the waiting
        # pool so the node can re-earn rank.
        now = self.queue.now
        for nid in sorted(referrals):
            if nid not in self.committee.members:
                continue
            rec = self.table.records[nid]
            primary_keys = self.nodes[self.committee.primary].keys
            ticket = make_eviction_ticket(
                primary_keys, self.nodes[nid].keys.public_key, rec.rank
            )
            process_exit(
                self.committee, ticket, primary_keys, now=now, demote_to_waiting=True
            )
            rec.status = NodeStatus.WAITING
        for nid in self.committee.members:
            rec = self.table.records.get(nid)
            if rec is not None and rec.status is not NodeStatus.CONSENSUS:
                rec.status = NodeStatus.CONSENSUS
                self.table.refresh_composite(nid)

        # Resource scores from this epoch's processed bytes, then tie cleanup.
        for nid in self.node_order:
            node = self.nodes[nid]
            rec = self.table.records.get(nid)
            if rec is not None:
                rec.resource_score = min(
                    1.0, node.processed_bytes_epoch / cfg.capacity_bytes
                )
                self.table.refresh_composite(nid)
            node.processed_bytes_epoch = 0
            node.verified_blocks_epoch = 0
        break_rank_ties(self.table)
        self.committee.ranks = {
            nid: rec.rank for nid, rec in self.table.records.items()
        }
        self.committee.sort_waiting()

        # Mempool settlement: a transaction leaves the pool once it sits in an
        # accepted block of the primary replica.
        included = {tx.tx_id for h in order.visit for tx in primary.ledger.blocks[h].body}
        self.mempool.settle(included)
        self.mempool.release_inflight()

        # Metrics.
        winner_ids = [tx.tx_id for tx in winners]
        new_confirmed = [t for t in winner_ids if t not in self.prev_confirmed_txids]
        latencies = []
        for txid in new_confirmed:
            entry = self.latency.get(txid)
            if entry is not None and entry[1] is None:
                self.latency[txid] = (entry[0], self.epoch_end)
                latencies.append((self.epoch_end - entry[0]) / US_PER_SECOND)
        self.prev_confirmed_txids.update(new_confirmed)
        new_blocks = len(layers.secured) - len(self.prev_secured)
        self.prev_secured = set(layers.secured)

        theta, live = liveness_ratio(self.population)
        digests = sorted(self.epoch_digests, key=lambda d: d.node_id)
        consistency = verify_consistency(digests, cfg.theta_max, len(digests))

        epoch_len_s = cfg.epoch_length_us / US_PER_SECOND
        caps = [self.nodes[p].capability for p in producers]
        metrics = EpochMetrics(
            epoch=epoch,
            confirmed_blocks=len(layers.secured),
            new_confirmed_blocks=new_blocks,
            confirmed_txs=len(self.prev_confirmed_txids),
            new_confirmed_txs=len(new_confirmed),
            tps=len(new_confirmed) / epoch_len_s,
            mean_latency_s=(sum(latencies) / len(latencies)) if latencies else None,
            committee_size=len(self.committee.members),
            theta=theta,
            live=live,
            consistency="consistent" if consistency.consistent else "inconsistent",
            leader_capability=sum(caps) / len(caps) if caps else 0.0,
            producers=tuple(producers),
        )
        self.metrics.append(metrics)
        self.rank_history.append(
            {nid: self.table.records[nid].rank for nid in self.node_order}
        )
        return metrics

    @staticmethod
    def _block_containing(ledger: DagLedger, order, txid: bytes) -> Optional[bytes]:
        for h in list(order.confirmed) + list(order.unconfirmed):
            if any(tx.tx_id == txid for tx in ledger.blocks[h].body):
                return h
        return None

    def run(self, epochs: int) -> list[EpochMetrics]:
        return [self.step_epoch() for _ in range(epochs)]
