"""
End-to-end: simulate trees, rate their empirical measures, estimate a rare event
and read everything back from the run ledger.
"""

import json
import math

import numpy as np
import pytest

from backend.cli import main
from backend.empirical import (offspring_measure, offspring_measure_from_csv, pair_measure_from_csv,
                               pair_measure_tilde)
from backend.model import load_kernel_spec
from backend.rate import rate_J
from backend.trees import tree_from_text
from shared.database import RunLedger
from shared.types import DecayPoint, RunManifest, RunStatus

from conftest import SAMPLE_KERNELS


class TestSimulateThenRate:
    def test_measures_on_disk_match_the_trees(self, tmp_path):
        kernel = SAMPLE_KERNELS / "two_type_explicit.json"
        out = tmp_path / "run"
        assert main(["simulate", "--kernel", str(kernel), "--n", "9", "--samples", "5", "--seed", "8",
                     "--out", str(out), "--conditioned"]) == 0
        Q, _ = load_kernel_spec(kernel)
        for i in range(5):
            tree = tree_from_text((out / "trees" / f"tree_{i:05d}.txt").read_text(), Q.alphabet)
            tree.validate()
            assert tree.size == 9
            nu = offspring_measure_from_csv((out / "measures" / f"offspring_{i:05d}.csv").read_text(),
                                            Q.alphabet)
            varpi = pair_measure_from_csv((out / "measures" / f"pair_{i:05d}.csv").read_text(), Q.alphabet)
            assert nu.mass == pytest.approx(1.0)
            np.testing.assert_allclose(varpi.entries, pair_measure_tilde(tree).entries, atol=1e-15)
            direct = rate_J(pair_measure_tilde(tree), offspring_measure(tree), Q, root_slack=1 / 9)
            from_disk = rate_J(varpi, nu, Q, root_slack=1 / 9)
            assert from_disk == pytest.approx(direct, abs=1e-12)

    def test_rate_command_matches_library(self, tmp_path, capsys):
        kernel = SAMPLE_KERNELS / "chain_geometric.json"
        out = tmp_path / "run"
        assert main(["simulate", "--kernel", str(kernel), "--n", "15", "--samples", "1", "--seed", "21",
                     "--out", str(out), "--conditioned"]) == 0
        capsys.readouterr()
        pair = out / "measures" / "pair_00000.csv"
        offspring = out / "measures" / "offspring_00000.csv"
        assert main(["rate", "J", "--kernel", str(kernel), "--pair", str(pair), "--offspring", str(offspring),
                     "--root-slack", str(1 / 15)]) == 0
        record = json.loads(capsys.readouterr().out)

        Q, _ = load_kernel_spec(kernel)
        expected = rate_J(pair_measure_from_csv(pair.read_text(), Q.alphabet),
                          offspring_measure_from_csv(offspring.read_text(), Q.alphabet), Q, root_slack=1 / 15)
        assert record["rate"] == pytest.approx(expected, abs=1e-12)


class TestEstimateWithLedger:
    def test_tilted_rare_event_run(self, tmp_path):
        db = tmp_path / "runs.db"
        out = tmp_path / "est"
        center = SAMPLE_KERNELS / "binary_demo_center.csv"
        code = main(["--ledger", str(db), "estimate", "--kernel", str(SAMPLE_KERNELS / "binary_demo.json"),
                     "--event", f"ball:center={center},radius=0.1", "--n-list", "20,30",
                     "--samples", "4000", "--tilt", "auto", "--seed", "2024", "--out", str(out)])
        assert code == 0

        report = json.loads((out / "report.json").read_text())
        assert all(row["tilted"] for row in report)
        assert all(row["hits"] > 0 for row in report)

        ledger = RunLedger(str(db))
        run, = ledger.list_runs()
        points = ledger.get_estimates(run["run_id"])
        assert [p.n for p in points] == [20, 30]
        for p in points:
            assert p.finite
            assert 0.0 < p.estimate < 1.0
            assert p.decay == pytest.approx(-math.log(p.estimate) / p.n)
        manifest = ledger.get_manifest(run["run_id"])
        assert manifest.command == "estimate"
        assert str(center) in manifest.input_digests


class TestRunLedger:
    def manifest(self, command: str, status: RunStatus = RunStatus.OK) -> RunManifest:
        return RunManifest(command=command, argv=[command], flags={}, versions={"gwldp": "test"},
                           status=status, started_at="2026-01-01T00:00:00")

    def test_filter_by_command(self, tmp_path):
        ledger = RunLedger(str(tmp_path / "ledger.db"))
        ledger.record_run(self.manifest("simulate"))
        ledger.record_run(self.manifest("estimate"))
        ledger.record_run(self.manifest("simulate", RunStatus.EXHAUSTED))
        assert len(ledger.list_runs()) == 3
        statuses = [r["status"] for r in ledger.list_runs("simulate")]
        assert sorted(statuses) == ["exhausted", "ok"]

    def test_estimates_in_n_order(self, tmp_path):
        ledger = RunLedger(str(tmp_path / "ledger.db"))
        run_id = ledger.record_run(self.manifest("estimate"), run_id="fixed")
        ledger.record_estimates(run_id, [
            DecayPoint(n=12, estimate=0.01, stderr=0.001, decay=-math.log(0.01) / 12, finite=True),
            DecayPoint(n=4, estimate=0.1, stderr=0.01, decay=-math.log(0.1) / 4, finite=True),
        ])
        assert [p.n for p in ledger.get_estimates("fixed")] == [4, 12]
        assert ledger.get_manifest("fixed").command == "estimate"
        assert ledger.get_manifest("missing") is None
