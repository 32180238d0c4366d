"""End-to-end acceptance gate.

Each test is one numbered criterion and prints a single PASS line on success;
tolerances are pinned in the assertions. The heavy criteria run at desk scale
but keep the structural properties intact (growth, monotone trends, safety).
"""

import math
import random
import statistics
import subprocess
import sys
import time
from collections import Counter
from fractions import Fraction

import pytest

from adr.engine import (
    EpochConfig,
    World,
    consistency_quorum,
    verify_consistency,
    StateDigest,
)
from adr.experiments import (
    ExperimentConfig,
    build_world_for,
    emit_config,
    run_experiment,
)
from adr.hashing import double_sha256, sha256
from adr.ledger import (
    BlockHeader,
    classify_layers,
    confirmed_transactions,
    hash_block,
    merkle_root,
    order_blocks,
)
from adr.ranking import EndorsementGraph, node_rank
from adr.scp import KeyPair, LeaveReason, admit, build_committee, make_eviction_ticket, \
    process_exit, request_entry, request_leave
from adr.simnet import AdversaryProfile, seconds_to_us

from conftest import build_ledger, make_tx
from reference import (
    enumerate_rooted_dags,
    lexicographic_topological_order,
    power_iteration_ranks,
    ref_double_sha256,
    ref_merkle,
    ref_tx_bytes,
)


def _report(n: int, detail: str) -> None:
    print(f"[criterion {n}] PASS — {detail}")


# -- 1. ordering oracle -------------------------------------------------------

def _assert_matches_oracle(parent_sets):
    ledger, _ = build_ledger(parent_sets)
    order = order_blocks(ledger, classify_layers(ledger, 2))
    parents_of = {h: set(ledger.blocks[h].parents) for h in ledger.blocks}
    expected = lexicographic_topological_order(sorted(ledger.blocks), parents_of)
    assert order.visit == expected


def test_criterion_1_ordering_oracle():
    """Block order equals the brute-force hash-lexicographic topological order:
    exhaustively for every rooted DAG of up to 6 blocks, plus seeded random
    samples at 7 and 8 blocks (the full 7/8-block spaces are combinatorially
    out of reach inside the time budget)."""
    t0 = time.time()
    exhaustive = 0
    for n in range(1, 7):
        for parent_sets in enumerate_rooted_dags(n):
            _assert_matches_oracle([tuple(p) for p in parent_sets])
            exhaustive += 1
    assert exhaustive == 10_106

    rnd = random.Random(20260823)
    sampled = 0
    for n in (7, 8):
        for _ in range(200):
            parent_sets = [()]
            for i in range(1, n):
                parent_sets.append(tuple(sorted(rnd.sample(range(i), rnd.randint(1, i)))))
            _assert_matches_oracle(parent_sets)
            sampled += 1

    elapsed = time.time() - t0
    assert elapsed < 60.0
    _report(1, f"{exhaustive} exhaustive + {sampled} sampled DAGs in {elapsed:.1f}s")


# -- 2. recursive rank oracle -------------------------------------------------

def test_criterion_2_rank_oracle():
    rnd = random.Random(424242)
    checked = 0
    for _ in range(100):
        n = rnd.randint(2, 20)
        nodes = [sha256(b"rk|%d|%d" % (checked, k)) for k in range(n)]
        graph = EndorsementGraph(nodes)
        for src in nodes:
            for dst in nodes:
                if src != dst and rnd.random() < 0.25:
                    graph.add_edge(src, dst)
        base = node_rank(graph, i=0.5)
        oracle = power_iteration_ranks(
            graph.nodes, {s: sorted(t) for s, t in graph.edges.items()}
        )
        for v in graph.nodes:
            assert abs(base[v] - oracle[v]) <= 1e-6
        for i in (0.1, 0.9):
            alt = node_rank(graph, i=i)
            for v in graph.nodes:
                assert abs(alt[v] - base[v]) <= 1e-9
        checked += 1
    _report(2, f"{checked} random graphs within 1e-6 of power iteration, "
               "i-invariant within 1e-9")


# -- 3. double-spend safety ---------------------------------------------------

def test_criterion_3_double_spend_safety():
    runs_with_conflicts = 0
    for seed in range(1, 101):
        cfg = ExperimentConfig(
            scenario="fault-sweep", node_count=20, faulty_fraction=0.25,
            epochs=20, tx_load=200, seed=seed,
        )
        world = build_world_for(cfg)
        world.run(20)
        runs_with_conflicts += bool(world.seen_conflicts)
        primary = world.nodes[world.committee.primary]
        order = order_blocks(primary.ledger, classify_layers(primary.ledger, cfg.k_conf))
        spent = Counter()
        for tx in confirmed_transactions(primary.ledger, order):
            for ref in tx.inputs:
                spent[ref] += 1
        assert all(count == 1 for count in spent.values()), f"dual spend, seed {seed}"
    assert runs_with_conflicts == 100  # the adversaries actually attacked
    _report(3, "100/100 adversarial runs settle every input exactly once")


# -- 4. liveness bound and fault-sweep trend ----------------------------------

def test_criterion_4_liveness_and_fault_sweep():
    t0 = time.time()
    mean_tps = []
    for fraction in (0.0, 0.1, 0.2, 0.3):
        tps_values = []
        for seed in range(1, 101):
            report = run_experiment(ExperimentConfig(
                scenario="fault-sweep", node_count=20, faulty_fraction=fraction,
                epochs=5, tx_load=150, seed=seed,
            ))
            blocks = [m.confirmed_blocks for m in report.epochs]
            assert all(b > a for a, b in zip(blocks, blocks[1:])), \
                f"no growth at fraction {fraction}, seed {seed}: {blocks}"
            assert all(report.liveness)
            tps_values.append(report.mean_tps)
        mean_tps.append(statistics.mean(tps_values))

    for earlier, later in zip(mean_tps, mean_tps[1:]):
        assert later <= earlier * 1.05  # non-increasing, 5% noise allowance

    over = run_experiment(ExperimentConfig(
        scenario="fault-sweep", node_count=20, faulty_fraction=0.4,
        epochs=3, tx_load=150, seed=1,
    ))
    assert not any(over.liveness)

    elapsed = time.time() - t0
    assert elapsed < 300.0
    _report(4, f"growth 100/100 seeds at each fraction, tps {mean_tps} "
               f"non-increasing, 0.4 flagged; {elapsed:.0f}s")


# -- 5. epoch stabilization ---------------------------------------------------

def test_criterion_5_epoch_stabilization():
    report = run_experiment(ExperimentConfig(
        scenario="epoch-stabilization", node_count=100, epochs=12, seed=1,
        producers_per_epoch=8, tx_load=1200, epoch_length=3520.0,
    ))
    caps = [m.leader_capability for m in report.epochs]
    early = statistics.mean(caps[0:3])
    late = statistics.mean(caps[5:10])
    assert late > early, f"leader capability did not rise: {early:.3f} -> {late:.3f}"

    tps = [m.tps for m in report.epochs]
    window = tps[5:8]  # trailing three epochs at epoch 8
    cov = statistics.pstdev(window) / statistics.mean(window)
    assert cov < 0.10, f"tps CoV {cov:.3f} at epoch 8"

    eligible = report.misbehaver_eligible_epochs
    assert 1 in eligible  # eligible before the attack
    post_demotion = [e for e in eligible if e >= 2]
    assert all(e >= 8 for e in post_demotion), \
        f"misbehaver regained eligibility early: {post_demotion}"
    _report(5, f"leader capability {early:.3f}->{late:.3f}, tps CoV {cov:.3f}, "
               f"misbehaver re-eligibility epochs {post_demotion or 'none in horizon'}")


# -- 6. membership guard ------------------------------------------------------

def _fresh_committee(rng, n, f):
    keys = [KeyPair.generate(rng) for _ in range(n)]
    committee = build_committee(
        members=[k.node_id for k in keys],
        primary=keys[0].node_id,
        f=f,
        ranks={k.node_id: 0.5 for k in keys},
        keys={k.node_id: k.public_key for k in keys},
    )
    return committee, {k.node_id: k for k in keys}


def test_criterion_6_membership_guard():
    rng = random.Random(606060)
    operations = 0
    for _ in range(40):
        committee, pool = _fresh_committee(rng, rng.randint(7, 10), 2)
        primary_keys = pool[committee.primary]
        for _ in range(25):
            operations += 1
            roll = rng.random()
            if roll < 0.45 or not committee.operational:
                kp = KeyPair.generate(rng)
                pool[kp.node_id] = kp
                admit(committee, request_entry(kp, committee.challenge, rng),
                      primary_keys, now=operations)
            else:
                victim = rng.choice(sorted(committee.members))
                before = len(committee.members)
                if rng.random() < 0.5:
                    committee.ranks[victim] = -0.1
                    ticket = make_eviction_ticket(
                        primary_keys, pool[victim].public_key, -0.1
                    )
                else:
                    ticket = request_leave(pool[victim], committee, 0.5)
                _, dropped_below = process_exit(
                    committee, ticket, primary_keys, now=operations
                )
                assert dropped_below == (before - 1 < committee.min_size)
                if dropped_below:
                    tail = committee.log[-6:]
                    assert any("join-phase" in line or "non-operational" in line
                               for line in tail)
            assert not (committee.members & committee.exited)  # no ghosts
            assert not (committee.members & set(committee.waiting_pool))
            assert committee.primary in committee.members
            if committee.operational:
                assert len(committee.members) >= committee.min_size
            primary_keys = pool[committee.primary]
    assert operations >= 1000

    # Negative rank is acted on within the epoch it arises.
    world = World(
        EpochConfig(epoch_length_us=seconds_to_us(3520.0),
                    block_interval_us=seconds_to_us(440.0),
                    producers_per_epoch=3, k_conf=2, max_block_txs=30),
        node_count=8, seed=3, tx_load_per_epoch=120,
        faulty_indices={2},
        adversary_factory=lambda nid: AdversaryProfile(
            node_id=nid, double_spend=True, double_spend_pairs=15,
        ),
    )
    offender = world.node_order[2]
    world.force_producers[1] = (offender,)
    world.step_epoch()
    assert world.table.records[offender].rank < 0.0
    assert offender not in world.committee.members
    _report(6, f"{operations} join/leave operations clean; negative rank evicted "
               "in-epoch")


# -- 7. consistency quorum ----------------------------------------------------

def test_criterion_7_consistency_quorum():
    for n_total in range(1, 16):
        for theta in (Fraction(0), Fraction(1, 4), Fraction(1, 3)):
            expected = max(math.floor((1 - theta) * n_total) + 1, 5)
            assert consistency_quorum(float(theta), n_total) == expected

    rng = random.Random(707070)
    detected = 0
    trials = 1000
    for trial in range(trials):
        n = 12
        ids = sorted(sha256(b"cq|%d|%d" % (trial, k)) for k in range(n))
        good = double_sha256(b"state|%d" % trial)
        corrupt_idx = rng.randrange(n)
        digests = [
            StateDigest(ids[k], 1,
                        double_sha256(good + b"!") if k == corrupt_idx else good)
            for k in range(n)
        ]
        result = verify_consistency(digests, 1 / 3, n)
        if result.consistent and result.dissenting == (ids[corrupt_idx],):
            detected += 1
    assert detected / trials >= 0.99
    _report(7, f"quorum table exact for N<=15; corruption detected "
               f"{detected}/{trials}")


# -- 8. determinism -----------------------------------------------------------

def test_criterion_8_determinism(tmp_path):
    config = ExperimentConfig(
        scenario="throughput-latency", node_count=10, epochs=3, tx_load=120,
        seed=11, producers_per_epoch=3, max_block_txs=20,
    )
    first = run_experiment(config).artifacts()
    second = run_experiment(config).artifacts()
    assert first == second

    config_file = tmp_path / "det.cfg"
    config_file.write_text(emit_config(config))
    restart_outputs = []
    for name in ("r1", "r2"):
        out = tmp_path / name
        proc = subprocess.run(
            [sys.executable, "-m", "adr.cli", "run", "--config", str(config_file),
             "--out", str(out)],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0, proc.stderr
        restart_outputs.append({p.name: p.read_bytes() for p in out.iterdir()})
    assert restart_outputs[0] == restart_outputs[1]
    for name, content in restart_outputs[0].items():
        assert content.decode() == first[name]
    _report(8, "artifacts byte-identical in-process and across process restarts")


# -- 9. golden serialization fixtures -----------------------------------------

def test_criterion_9_golden_fixtures():
    import json
    from pathlib import Path

    golden = json.loads(
        (Path(__file__).parent / "golden" / "hash_fixtures.json").read_text()
    )
    for case in golden["headers"]:
        header = BlockHeader(
            version=case["version"],
            parent_hashes=tuple(bytes.fromhex(p) for p in case["parents"]),
            merkle_root=bytes.fromhex(case["merkle_root"]),
            timestamp=case["timestamp"],
            producer=bytes.fromhex(case["producer"]),
            nonce=case["nonce"],
        )
        assert hash_block(header).hex() == case["digest"]

    txs = [make_tx(b"g%d" % k) for k in range(5)]
    leaves = [ref_double_sha256(ref_tx_bytes(
        t.sender, list(t.inputs), t.payload_size, t.submit_time, t.signature
    )) for t in txs]
    assert merkle_root(txs) == ref_merkle(leaves)
    for case in golden["merkle"]:
        assert ref_merkle([bytes.fromhex(x) for x in case["leaves"]]).hex() == case["root"]
    _report(9, f"{len(golden['headers'])} header digests and merkle fixtures match")
