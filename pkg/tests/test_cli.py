import csv
import json
import os
import subprocess
import sys

import pytest

from genlab import cli

BLOBS = {"kind": "blobs", "n_classes": 3, "dim": 2, "m_train": 120, "m_test": 120, "separation": 4.0}
FAST = {"epochs": 5, "batch_size": 16}


def write_config(tmp_path, doc, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


def run(tmp_path, command, doc, out="out", seed=None):
    argv = [command, "--config", str(write_config(tmp_path, doc)), "--out", str(tmp_path / out)]
    if seed is not None:
        argv += ["--seed", str(seed)]
    return cli.main(argv)


def read_csv(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def sweep_config(**kw):
    return {"experiment": "two-phase-sweep", "dataset": BLOBS, "architecture": {"hidden": [8]},
            "train": FAST, "alphas": [0.5, 1.0], "seeds": 2, **kw}


class TestConfigErrors:
    def test_missing_file(self, tmp_path):
        assert cli.main(["gap-audit", "--config", str(tmp_path / "nope.json")]) == cli.EXIT_CONFIG

    def test_wrong_experiment(self, tmp_path):
        assert run(tmp_path, "gap-audit", {"experiment": "memorize-demo"}) == cli.EXIT_CONFIG

    def test_bad_alphas(self, tmp_path):
        assert run(tmp_path, "two-phase-sweep", sweep_config(alphas=[0.0, 0.5])) == cli.EXIT_CONFIG
        assert run(tmp_path, "two-phase-sweep", sweep_config(alphas=[])) == cli.EXIT_CONFIG

    def test_missing_idx_files(self, tmp_path):
        doc = sweep_config(dataset={"kind": "idx", "train_images": "a", "train_labels": "b",
                                    "test_images": "c", "test_labels": "d"})
        assert run(tmp_path, "two-phase-sweep", doc) == cli.EXIT_CONFIG

    def test_bad_training_option(self, tmp_path):
        assert run(tmp_path, "two-phase-sweep", sweep_config(train={"epochs": -1})) == cli.EXIT_CONFIG

    def test_darc1_needs_two_seeds(self, tmp_path):
        doc = {"experiment": "darc1-compare", "dataset": BLOBS, "train": FAST, "seeds": 1}
        assert run(tmp_path, "darc1-compare", doc) == cli.EXIT_CONFIG


class TestTwoPhaseSweep:
    def test_alpha_one_without_freeze_gives_unit_ratio(self, tmp_path):
        assert run(tmp_path, "two-phase-sweep", sweep_config(freeze_train={"epochs": 0})) == cli.EXIT_OK
        rows = read_csv(tmp_path / "out" / "two_phase_sweep.csv")
        assert [r["ratio"] for r in rows if r["alpha"] == "1.0"] == ["1.0", "1.0"]

    def test_columns_and_summary(self, tmp_path):
        assert run(tmp_path, "two-phase-sweep", sweep_config()) == cli.EXIT_OK
        rows = read_csv(tmp_path / "out" / "two_phase_sweep.csv")
        assert tuple(rows[0]) == cli.SWEEP_COLUMNS
        assert all(float(r["ratio"]) > 0 for r in rows)
        doc = json.loads((tmp_path / "out" / "two_phase_sweep.json").read_text())
        assert doc["schema"] == cli.REPORT_SCHEMA and set(doc["desk_scale"]) == {"scales_down", "reference_only"}
        for s in doc["summary"]:
            ratios = [float(r["ratio"]) for r in rows if float(r["alpha"]) == s["alpha"]]
            assert s["ratio_mean"] == pytest.approx(sum(ratios) / len(ratios), rel=1e-12)

    def test_divergence_flagged(self, tmp_path):
        doc = sweep_config(train={"epochs": 5, "learning_rate": 1e6, "loss": "squared"}, seeds=1)
        assert run(tmp_path, "two-phase-sweep", doc) == cli.EXIT_DIVERGED
        rows = read_csv(tmp_path / "out" / "two_phase_sweep.csv")
        assert all(r["status"].startswith("diverged") for r in rows)


class TestDarc1Compare:
    def config(self, **kw):
        return {"experiment": "darc1-compare", "dataset": BLOBS, "architecture": {"hidden": [8]},
                "train": FAST, "seeds": 3, "darc1_coefficient": 0.001, **kw}

    def test_schema(self, tmp_path):
        assert run(tmp_path, "darc1-compare", self.config()) == cli.EXIT_OK
        rows = read_csv(tmp_path / "out" / "darc1_compare.csv")
        assert tuple(rows[0]) == cli.DARC1_COLUMNS and len(rows) == 6
        summary = json.loads((tmp_path / "out" / "darc1_compare.json").read_text())["summary"]
        for key in ("test_error_ratio", "reg_value_ratio"):
            assert set(summary[key]) == {"mean", "stdv"}

    def test_zero_coefficient_matches_base(self, tmp_path):
        assert run(tmp_path, "darc1-compare", self.config(darc1_coefficient=0.0)) == cli.EXIT_OK
        summary = json.loads((tmp_path / "out" / "darc1_compare.json").read_text())["summary"]
        assert summary["reg_value_ratio"]["mean"] == 1.0 and summary["reg_value_ratio"]["stdv"] == 0.0

    def test_summary_recomputable_from_rows(self, tmp_path):
        run(tmp_path, "darc1-compare", self.config())
        rows = read_csv(tmp_path / "out" / "darc1_compare.csv")
        parsed = [{**r, "run": int(r["run"]), "test_error": float(r["test_error"]),
                   "reg_value": float(r["reg_value"])} for r in rows]
        summary = json.loads((tmp_path / "out" / "darc1_compare.json").read_text())["summary"]
        assert json.loads(json.dumps(cli._clean(cli.darc1_summary(parsed)))) == summary


class TestGapAudit:
    def test_empty(self, tmp_path):
        assert run(tmp_path, "gap-audit", {"experiment": "gap-audit", "n_instances": 0}) == cli.EXIT_OK
        doc = json.loads((tmp_path / "out" / "gap_audit.json").read_text())
        assert doc["aggregate"]["instances"] == 0 and doc["instances"] == []

    def test_residuals_with_random_labels(self, tmp_path):
        doc = {"experiment": "gap-audit", "n_instances": 20, "random_labels": True}
        assert run(tmp_path, "gap-audit", doc) == cli.EXIT_OK
        out = json.loads((tmp_path / "out" / "gap_audit.json").read_text())
        assert out["aggregate"]["max_relative_residual"] <= 1e-8
        assert any(x["random_labels"] for x in out["instances"])

    def test_residual_failure_exit(self, tmp_path):
        doc = {"experiment": "gap-audit", "n_instances": 3, "tolerance": -1.0}
        assert run(tmp_path, "gap-audit", doc) == cli.EXIT_RESIDUAL

    def test_path_cap_skips(self, tmp_path):
        doc = {"experiment": "gap-audit", "n_instances": 5, "path_cap": 1}
        assert run(tmp_path, "gap-audit", doc) == cli.EXIT_OK
        agg = json.loads((tmp_path / "out" / "gap_audit.json").read_text())["aggregate"]
        assert agg["instances"] + len(agg["skipped"]) == 5 and agg["skipped"]


class TestBoundReport:
    def test_reports(self, tmp_path):
        doc = {"experiment": "bound-report", "m": 100, "m_val": 200, "train": {"epochs": 10}}
        assert run(tmp_path, "bound-report", doc) == cli.EXIT_OK
        reports = json.loads((tmp_path / "out" / "bound_report.json").read_text())["reports"]
        selftest = [r["terms"]["additive"] for r in reports[:2]]
        assert abs(selftest[0] - 0.0694) <= 5e-5 and abs(selftest[1] - 0.0049) <= 5e-5
        assert reports[3]["value"] < reports[2]["value"]
        names = {r["bound_name"]: r for r in reports[4:]}
        assert set(names) == {"validation", "two_phase", "margin", "matrix_bernstein"}
        assert "swapped_pairing_value" in names["two_phase"]["notes"]
        assert all(r["holds_on_instance"] in (True, False) for r in names.values())


class TestMemorizeDemo:
    def test_identity_instance(self, tmp_path):
        doc = {"experiment": "memorize-demo", "instance": {"kind": "identity", "m": 3, "n": 5}, "delta_norm": 1e6}
        assert run(tmp_path, "memorize-demo", doc) == cli.EXIT_OK
        cert = json.loads((tmp_path / "out" / "memorize_demo.json").read_text())["certificate"]
        assert cert["memorization_residual"] == 0.0 and cert["passed"]

    def test_random_instance(self, tmp_path):
        doc = {"experiment": "memorize-demo", "instance": {"kind": "random", "m": 3, "n": 7, "m_test": 2}}
        assert run(tmp_path, "memorize-demo", doc) == cli.EXIT_OK
        out = json.loads((tmp_path / "out" / "memorize_demo.json").read_text())
        assert all(out["certificate"]["checks"].values())
        assert len(out["norm_table"]) == 5

    def test_full_rank_stack_reports_failure(self, tmp_path):
        phi = [[1.0, 0.0], [0.0, 1.0]]
        doc = {"experiment": "memorize-demo",
               "instance": {"kind": "explicit", "phi": phi, "phi_test": [[1.0, 1.0]], "y": [[1.0], [2.0]],
                            "w_star": [[1.0], [2.0]]}}
        assert run(tmp_path, "memorize-demo", doc) == cli.EXIT_HYPOTHESIS
        out = json.loads((tmp_path / "out" / "memorize_demo.json").read_text())
        assert out["hypothesis_failure"]["condition"] == "rank(M) < n"


class TestDeterminism:
    def outputs(self, path):
        return {p.name: p.read_bytes() for p in sorted(path.iterdir())}

    def test_rerun_is_byte_identical(self, tmp_path):
        doc = sweep_config()
        run(tmp_path, "two-phase-sweep", doc, out="a")
        run(tmp_path, "two-phase-sweep", doc, out="b")
        assert self.outputs(tmp_path / "a") == self.outputs(tmp_path / "b")

    def test_workers_do_not_change_outputs(self, tmp_path):
        run(tmp_path, "two-phase-sweep", sweep_config(workers=1), out="a")
        run(tmp_path, "two-phase-sweep", sweep_config(workers=2), out="b")
        a, b = self.outputs(tmp_path / "a"), self.outputs(tmp_path / "b")
        assert a["two_phase_sweep.csv"] == b["two_phase_sweep.csv"]
        strip = lambda raw: {k: v for k, v in json.loads(raw)["config"].items() if k != "workers"}
        assert strip(a["two_phase_sweep.json"]) == strip(b["two_phase_sweep.json"])

    def test_seed_override_changes_outputs(self, tmp_path):
        run(tmp_path, "two-phase-sweep", sweep_config(), out="a", seed=1)
        run(tmp_path, "two-phase-sweep", sweep_config(), out="b", seed=2)
        assert self.outputs(tmp_path / "a") != self.outputs(tmp_path / "b")

    def test_blas_threads_do_not_change_outputs(self, tmp_path):
        config = write_config(tmp_path, {"experiment": "gap-audit", "n_instances": 10})
        for threads in ("1", "4"):
            env = {**os.environ, "OPENBLAS_NUM_THREADS": threads, "OMP_NUM_THREADS": threads, "MKL_NUM_THREADS": threads}
            subprocess.run([sys.executable, "-m", "genlab", "gap-audit", "--config", str(config),
                            "--out", str(tmp_path / threads)], check=True, env=env)
        assert self.outputs(tmp_path / "1") == self.outputs(tmp_path / "4")
