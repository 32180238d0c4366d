import subprocess
import sys

import pytest
from click.testing import CliRunner

from adr.cli import EXIT_CONFIG_ERROR, main
from adr.experiments import ExperimentConfig, emit_config


@pytest.fixture
def runner():
    return CliRunner()


def write_config(path, **overrides):
    defaults = dict(
        scenario="throughput-latency", node_count=8, epochs=2, tx_load=60,
        seed=5, producers_per_epoch=3, max_block_txs=20,
    )
    defaults.update(overrides)
    path.write_text(emit_config(ExperimentConfig(**defaults)))
    return path


ARTIFACTS = {
    "report.txt", "metrics.csv", "trace.log", "ranking.txt",
    "scp.log", "ledger.jsonl", "config.txt",
}


class TestRunCommand:
    def test_writes_artifacts(self, runner, tmp_path):
        config = write_config(tmp_path / "exp.cfg")
        out = tmp_path / "out"
        result = runner.invoke(main, ["run", "--config", str(config), "--out", str(out)])
        assert result.exit_code == 0, result.output
        assert {p.name for p in out.iterdir()} == ARTIFACTS
        assert "mean_tps=" in result.output

    def test_seed_override_changes_metrics(self, runner, tmp_path):
        config = write_config(tmp_path / "exp.cfg")
        outs = []
        for seed in (1, 2):
            out = tmp_path / f"o{seed}"
            result = runner.invoke(
                main,
                ["run", "--config", str(config), "--out", str(out), "--seed", str(seed)],
            )
            assert result.exit_code == 0, result.output
            outs.append((out / "metrics.csv").read_text())
        assert outs[0] != outs[1]

    def test_seed_sweep_directories(self, runner, tmp_path):
        config = write_config(tmp_path / "exp.cfg")
        out = tmp_path / "sweep"
        result = runner.invoke(
            main, ["run", "--config", str(config), "--out", str(out), "--seeds", "3,4"]
        )
        assert result.exit_code == 0, result.output
        assert {p.name for p in out.iterdir()} == {"seed_3", "seed_4"}
        assert {p.name for p in (out / "seed_3").iterdir()} == ARTIFACTS

    def test_bad_config_exit_code(self, runner, tmp_path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("scenario = nonsense\n")
        out = tmp_path / "out"
        result = runner.invoke(main, ["run", "--config", str(bad), "--out", str(out)])
        assert result.exit_code == EXIT_CONFIG_ERROR

    def test_missing_config_file(self, runner, tmp_path):
        result = runner.invoke(
            main, ["run", "--config", str(tmp_path / "nope.cfg"), "--out", str(tmp_path)]
        )
        assert result.exit_code != 0


class TestOrderCommand:
    def test_orders_exported_ledger(self, runner, tmp_path):
        config = write_config(tmp_path / "exp.cfg")
        out = tmp_path / "out"
        assert runner.invoke(
            main, ["run", "--config", str(config), "--out", str(out)]
        ).exit_code == 0
        result = runner.invoke(
            main, ["order", "--ledger", str(out / "ledger.jsonl"), "--k-conf", "2"]
        )
        assert result.exit_code == 0, result.output
        lines = result.output.strip().splitlines()
        assert lines and all(
            line.startswith(("confirmed ", "unconfirmed ")) for line in lines
        )
        statuses = [line.split()[0] for line in lines]
        assert statuses == sorted(statuses, key=lambda s: s != "confirmed")

    def test_empty_ledger_rejected(self, runner, tmp_path):
        empty = tmp_path / "empty.jsonl"
        empty.write_text("")
        result = runner.invoke(main, ["order", "--ledger", str(empty)])
        assert result.exit_code == EXIT_CONFIG_ERROR


class TestRankCommand:
    def test_ranks_edge_file(self, runner, tmp_path):
        graph = tmp_path / "graph.txt"
        graph.write_text("a b\nb a\nc a\n")
        result = runner.invoke(main, ["rank", "--graph", str(graph)])
        assert result.exit_code == 0, result.output
        lines = result.output.strip().splitlines()
        assert len(lines) == 3
        values = [float(line.split()[1]) for line in lines]
        assert values == sorted(values, reverse=True)
        assert sum(values) == pytest.approx(1.0)

    def test_malformed_edge_line(self, runner, tmp_path):
        graph = tmp_path / "graph.txt"
        graph.write_text("a b c\n")
        result = runner.invoke(main, ["rank", "--graph", str(graph)])
        assert result.exit_code == EXIT_CONFIG_ERROR


def test_subprocess_runs_byte_identical(tmp_path):
    """Two separate processes with the same seed must emit identical artifacts."""
    config = write_config(tmp_path / "exp.cfg")
    outputs = []
    for name in ("a", "b"):
        out = tmp_path / name
        proc = subprocess.run(
            [sys.executable, "-m", "adr.cli", "run", "--config", str(config),
             "--out", str(out)],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0, proc.stderr
        outputs.append({p.name: p.read_bytes() for p in out.iterdir()})
    assert outputs[0] == outputs[1]
