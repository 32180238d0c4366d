"""Thin command-line client over the service endpoints.

By default requests go through an in-process ASGI transport, so one-shot runs
need no server and stay byte-deterministic; `--server` points the same client
at a remote instance started with `adr serve`.
"""

from __future__ import annotations

import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional

import click
import httpx

EXIT_CONFIG_ERROR = 2
EXIT_NON_OPERATIONAL = 3


def _client(server: Optional[str]) -> httpx.Client:
    if server:
        return httpx.Client(base_url=server, timeout=600.0)
    from starlette.testclient import TestClient

    from .service import app

    return TestClient(app)


def _fail(message: str, code: int) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


@click.group()
def main() -> None:
    """Deterministic DAG-consensus simulator."""


def _run_one(args: tuple[str, Optional[int], str, Optional[str]]) -> tuple[int, str]:
    config_text, seed, out_dir, server = args
    with _client(server) as client:
        response = client.post("/run", json={"config_text": config_text, "seed": seed})
    if response.status_code == 422:
        return EXIT_CONFIG_ERROR, response.json().get("detail", "invalid configuration")
    if response.status_code == 409:
        return EXIT_NON_OPERATIONAL, response.json().get("detail", "non-operational")
    response.raise_for_status()
    payload = response.json()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, content in sorted(payload["artifacts"].items()):
        (out / name).write_text(content)
    return 0, f"seed={payload['seed']} mean_tps={payload['mean_tps']:.4f} -> {out}"


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--seed", type=int, default=None, help="override the config seed")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--jobs", type=int, default=1, show_default=True,
              help="parallel processes for multi-seed sweeps")
@click.option("--seeds", default=None,
              help="comma-separated seed sweep; each runs into <out>/seed_<n>/")
@click.option("--server", default=None, help="remote service URL (default: in-process)")
def run(config_path: str, seed: Optional[int], out_dir: str, jobs: int,
        seeds: Optional[str], server: Optional[str]) -> None:
    """Run an experiment and write report, metrics, trace and logs."""
    config_text = Path(config_path).read_text()
    if seeds:
        try:
            seed_list = [int(s) for s in seeds.split(",") if s.strip()]
        except ValueError:
            _fail("--seeds must be comma-separated integers", EXIT_CONFIG_ERROR)
        tasks = [
            (config_text, s, str(Path(out_dir) / f"seed_{s}"), server) for s in seed_list
        ]
    else:
        tasks = [(config_text, seed, out_dir, server)]

    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_one, tasks))
    else:
        results = [_run_one(t) for t in tasks]

    worst = 0
    for code, message in results:
        if code == 0:
            click.echo(message)
        else:
            click.echo(f"error: {message}", err=True)
            worst = max(worst, code)
    sys.exit(worst)


@main.command()
@click.option("--ledger", "ledger_path", required=True, type=click.Path(exists=True),
              help="ledger.jsonl export (one block record per line)")
@click.option("--k-conf", type=int, default=6, show_default=True)
@click.option("--server", default=None)
def order(ledger_path: str, k_conf: int, server: Optional[str]) -> None:
    """Print the topological block order, confirmed then unconfirmed."""
    blocks = []
    for line in Path(ledger_path).read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        blocks.append({"hash": rec["hash"], "parents": rec["parents"]})
    with _client(server) as client:
        response = client.post("/order", json={"blocks": blocks, "k_conf": k_conf})
    if response.status_code == 422:
        _fail(response.json().get("detail", "invalid ledger"), EXIT_CONFIG_ERROR)
    response.raise_for_status()
    payload = response.json()
    for h in payload["confirmed"]:
        click.echo(f"confirmed {h}")
    for h in payload["unconfirmed"]:
        click.echo(f"unconfirmed {h}")


@main.command()
@click.option("--graph", "graph_path", required=True, type=click.Path(exists=True),
              help="edge list: one 'endorser endorsed' pair per line")
@click.option("--init-factor", type=float, default=0.5, show_default=True)
@click.option("--iterations", type=int, default=50, show_default=True)
@click.option("--server", default=None)
def rank(graph_path: str, init_factor: float, iterations: int,
         server: Optional[str]) -> None:
    """Print endorsement-graph node ranks, highest first."""
    edges = []
    for line in Path(graph_path).read_text().splitlines():
        parts = line.split()
        if len(parts) == 2:
            edges.append(parts)
        elif parts:
            _fail(f"bad edge line: {line!r}", EXIT_CONFIG_ERROR)
    with _client(server) as client:
        response = client.post("/rank", json={
            "edges": edges, "init_factor": init_factor, "iterations": iterations,
        })
    if response.status_code == 422:
        _fail(response.json().get("detail", "invalid graph"), EXIT_CONFIG_ERROR)
    response.raise_for_status()
    ranks = response.json()["ranks"]
    for node, value in sorted(ranks.items(), key=lambda kv: (-kv[1], kv[0])):
        click.echo(f"{node} {value:.12f}")


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
def serve(host: str, port: int) -> None:
    """Start the HTTP service."""
    import uvicorn

    uvicorn.run("adr.service:app", host=host, port=port)


if __name__ == "__main__":
    main()
