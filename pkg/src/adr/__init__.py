"""Deterministic simulator for a DAG-ledger, reputation-ranked consensus protocol."""

from .ledger import (
    Block,
    BlockHeader,
    DagLedger,
    InsertResult,
    LayerAssignment,
    Mempool,
    Transaction,
    classify_layers,
    create_block,
    detect_double_spend,
    hash_block,
    merkle_root,
    order_blocks,
    select_tips,
)
from .ranking import (
    EndorsementGraph,
    RankingTable,
    RankWeights,
    break_rank_ties,
    default_new_rank,
    init_ranks,
    node_rank,
    rank_score,
    update_ranks,
)
from .engine import (
    EpochConfig,
    NodePopulation,
    StateDigest,
    World,
    elect_producers,
    liveness_ratio,
    verify_consistency,
)
from .experiments import ExperimentConfig, latency_stats, run_experiment, throughput

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
