#!/usr/bin/env python3
"""
End-to-end benchmark on the default synthetic scenario (seed 42).

Runs synth -> preprocess -> train -> evaluate through the CLI and checks
that GSMT clearly beats the historical average. Marked slow; run with
``pytest -m slow``.
"""

import json
import sys
import tempfile
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from gsmt import GsmtCLI

# windows every 5 grid steps keep one epoch short; everything else is the default scenario
SETTINGS = ["--set", "synth.seed=42", "--set", "ingest.stride=5"]


def _cli(*args):
    GsmtCLI().run(SETTINGS + [str(a) for a in args])


@pytest.fixture(scope="module")
def benchmark():
    with tempfile.TemporaryDirectory() as tmpdir:
        root = Path(tmpdir)
        paths = {
            "csv": root / "fleet.csv",
            "bundle": root / "data.json",
            "checkpoint": root / "model.json",
            "metrics": root / "metrics.json",
            "root": root,
        }
        _cli("synth", "-o", paths["csv"])
        _cli("preprocess", paths["csv"], "-o", paths["bundle"])
        _cli("train", paths["bundle"], "-o", paths["checkpoint"])
        _cli("evaluate", paths["checkpoint"], paths["bundle"], "-o", paths["metrics"])
        rows = json.loads(paths["metrics"].read_text())["rows"]
        paths["rows"] = {(r["method"], r["horizon_minutes"]): r for r in rows}
        paths["history"] = json.loads(paths["checkpoint"].with_name("model.json.history.json").read_text())
        yield paths


@pytest.mark.slow
@pytest.mark.integration
class TestBenchmark:
    """Default scenario: 5 buses, congestion zones on"""

    def test_mae_beats_history_average(self, benchmark):
        """GSMT MAE is at least 30% below HA at 15 minutes"""
        rows = benchmark["rows"]
        assert rows[("GSMT", 15)]["mae"] <= 0.7 * rows[("HA", 15)]["mae"]

    @pytest.mark.parametrize("horizon", [15, 25])
    def test_accuracy_beats_history_average(self, benchmark, horizon):
        """GSMT mission accuracy exceeds HA at both horizons"""
        rows = benchmark["rows"]
        assert rows[("GSMT", horizon)]["mission_accuracy"] > rows[("HA", horizon)]["mission_accuracy"]

    def test_training_converges(self, benchmark):
        """Final training loss is under half the first epoch's"""
        history = benchmark["history"]
        assert len(history) <= 300
        assert history[-1]["train_mae"] < 0.5 * history[0]["train_mae"]

    def test_preprocess_deterministic(self, benchmark):
        """Regenerating and preprocessing gives byte-identical artifacts"""
        root = benchmark["root"]
        _cli("synth", "-o", root / "again.csv")
        assert (root / "again.csv").read_bytes() == benchmark["csv"].read_bytes()
        _cli("preprocess", root / "again.csv", "-o", root / "again.json")
        assert (root / "again.json").read_bytes() == benchmark["bundle"].read_bytes()
