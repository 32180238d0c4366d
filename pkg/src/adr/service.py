"""FastAPI service exposing the simulator: experiment runs, block ordering and
endorsement-graph ranking. The CLI is a thin client of these endpoints."""

from __future__ import annotations

from typing import Optional

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from . import experiments
from .experiments import ConfigError, parse_config, run_experiment
from .engine import NonOperationalError
from .ledger import (
    DagLedger,
    EmptyLedgerError,
    classify_layers,
    order_blocks,
)
from .ranking import EndorsementGraph, RankingError, node_rank


class RunRequest(BaseModel):
    config_text: str = Field(description="experiment config in the key = value schema")
    seed: Optional[int] = Field(default=None, description="overrides the config seed")


class RunResponse(BaseModel):
    scenario: str
    seed: int
    mean_tps: float
    epochs: int
    artifacts: dict[str, str]


class BlockRecord(BaseModel):
    hash: str
    parents: list[str]


class OrderRequest(BaseModel):
    blocks: list[BlockRecord]
    k_conf: int = 6


class OrderResponse(BaseModel):
    confirmed: list[str]
    unconfirmed: list[str]


class RankRequest(BaseModel):
    edges: list[tuple[str, str]]
    init_factor: float = 0.5
    iterations: int = 50


class RankResponse(BaseModel):
    ranks: dict[str, float]


class _SkeletonLedger(DagLedger):
    """Rebuilds the graph topology from exported (hash, parents) records; block
    bodies are not needed for ordering."""

    @classmethod
    def from_records(cls, records: list[BlockRecord]) -> "_SkeletonLedger":
        from dataclasses import dataclass

        @dataclass(frozen=True)
        class _Stub:
            block_hash: bytes
            parents: tuple[bytes, ...]
            body: tuple = ()

        ledger = cls()
        stubs = {}
        for rec in records:
            h = bytes.fromhex(rec.hash)
            stubs[h] = _Stub(h, tuple(bytes.fromhex(p) for p in rec.parents))
        for h, stub in stubs.items():
            ledger.blocks[h] = stub  # type: ignore[assignment]
            ledger.children.setdefault(h, [])
            if not stub.parents:
                ledger.genesis = h
        for h, stub in stubs.items():
            for p in stub.parents:
                ledger.children.setdefault(p, [])
                if p in ledger.blocks:
                    ledger.children[p].append(h)
        ledger.tips = ledger.recompute_tips()
        return ledger


def create_app() -> FastAPI:
    app = FastAPI(title="adr-consensus", version="0.1.0")

    @app.get("/health")
    def health() -> dict[str, str]:
        return {"status": "ok"}

    @app.post("/run", response_model=RunResponse)
    def run(request: RunRequest) -> RunResponse:
        try:
            config = parse_config(request.config_text)
            if request.seed is not None:
                from dataclasses import replace

                config = replace(config, seed=request.seed)
            report = run_experiment(config)
        except ConfigError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        except NonOperationalError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        return RunResponse(
            scenario=config.scenario,
            seed=config.seed,
            mean_tps=report.mean_tps,
            epochs=len(report.epochs),
            artifacts=report.artifacts(),
        )

    @app.post("/order", response_model=OrderResponse)
    def order(request: OrderRequest) -> OrderResponse:
        ledger = _SkeletonLedger.from_records(request.blocks)
        try:
            layers = classify_layers(ledger, request.k_conf)
            result = order_blocks(ledger, layers)
        except (EmptyLedgerError, ValueError) as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return OrderResponse(
            confirmed=[h.hex() for h in result.confirmed],
            unconfirmed=[h.hex() for h in result.unconfirmed],
        )

    @app.post("/rank", response_model=RankResponse)
    def rank(request: RankRequest) -> RankResponse:
        graph = EndorsementGraph()
        for src, dst in request.edges:
            graph.nodes.add(src.encode())
            graph.nodes.add(dst.encode())
            graph.add_edge(src.encode(), dst.encode())
        try:
            ranks = node_rank(graph, i=request.init_factor, iterations=request.iterations)
        except RankingError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return RankResponse(ranks={k.decode(): v for k, v in ranks.items()})

    return app


app = create_app()
