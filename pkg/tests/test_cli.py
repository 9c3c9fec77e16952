"""CLI: exit codes, manifests, artifact determinism, command outputs."""

import json

import pytest

from entstore.cli import main

import targets

FAST = ["--set", "simulation.n_trials=2000000",
        "--set", "simulation.fringe_trials=32000000"]


def run(tmp_path, *argv):
    out = tmp_path / "run"
    code = main([*argv, "--out", str(out)])
    return code, out


def read_json(path):
    return json.loads(path.read_text())


def stderr_json(capsys):
    err = capsys.readouterr().err.strip().splitlines()
    return json.loads(err[-1])


class TestExitCodes:
    def test_unknown_command_is_usage_error(self, tmp_path, capsys):
        assert main(["frobnicate", "--out", str(tmp_path)]) == 2
        payload = stderr_json(capsys)
        assert payload["error"] == "usage"
        assert "frobnicate" in payload["message"]

    def test_unknown_config_key_is_config_error(self, tmp_path, capsys):
        code = main(["rates", "--set", "experiment.warp=9",
                     "--out", str(tmp_path)])
        assert code == 2
        assert "experiment.warp" in stderr_json(capsys)["message"]

    def test_missing_config_file(self, tmp_path, capsys):
        code = main(["rates", "--config", str(tmp_path / "absent.json"),
                     "--out", str(tmp_path)])
        assert code == 2

    def test_runtime_failure_exits_one(self, tmp_path, capsys):
        # 10 trials at p1 ~ 1e-3 yield zero heralds; tomography cannot
        # normalize and must report a runtime failure
        code = main(["tomography", "--set", "simulation.n_trials=10",
                     "--set", "simulation.fringe_trials=32000000",
                     "--out", str(tmp_path)])
        assert code == 1
        assert "message" in stderr_json(capsys)

    def test_success_is_zero(self, tmp_path):
        code, _ = run(tmp_path, "rates", *FAST)
        assert code == 0


class TestManifest:
    def test_fields_present(self, tmp_path):
        code, out = run(tmp_path, "rates", *FAST, "--seed", "5")
        assert code == 0
        m = read_json(out / "manifest.json")
        assert m["command"] == "rates"
        assert m["seed"] == 5
        assert m["outputs"] == ["rates.json"]
        assert len(m["config_digest"]) == 64
        assert set(m["versions"]) >= {"python", "entstore", "numpy"}
        assert m["duration_s"] >= 0.0
        assert m["config"]["experiment"]["seed"] == 5

    def test_artifact_embeds_same_digest(self, tmp_path):
        _, out = run(tmp_path, "rates", *FAST)
        m = read_json(out / "manifest.json")
        r = read_json(out / "rates.json")
        assert r["config_digest"] == m["config_digest"]

    def test_digest_stable_under_config_key_order(self, tmp_path):
        a = tmp_path / "a.json"
        b = tmp_path / "b.json"
        a.write_text('{"experiment": {"seed": 9, "mot_rate": 20.0}}')
        b.write_text('{"experiment": {"mot_rate": 20.0, "seed": 9}}')
        _, out1 = run(tmp_path / "1", "rates", *FAST, "--config", str(a))
        _, out2 = run(tmp_path / "2", "rates", *FAST, "--config", str(b))
        d1 = read_json(out1 / "manifest.json")["config_digest"]
        d2 = read_json(out2 / "manifest.json")["config_digest"]
        assert d1 == d2
        assert (out1 / "rates.json").read_bytes() == \
            (out2 / "rates.json").read_bytes()


class TestDeterminism:
    def test_rerun_byte_identical(self, tmp_path):
        _, out1 = run(tmp_path / "1", "tomography", *FAST, "--seed", "3")
        _, out2 = run(tmp_path / "2", "tomography", *FAST, "--seed", "3")
        assert (out1 / "tomography.json").read_bytes() == \
            (out2 / "tomography.json").read_bytes()

    def test_worker_count_does_not_change_artifacts(self, tmp_path):
        _, out1 = run(tmp_path / "1", "tomography", *FAST, "--workers", "1")
        _, out2 = run(tmp_path / "2", "tomography", *FAST, "--workers", "4")
        assert (out1 / "tomography.json").read_bytes() == \
            (out2 / "tomography.json").read_bytes()

    def test_seed_changes_counts(self, tmp_path):
        _, out1 = run(tmp_path / "1", "hbt", *FAST, "--seed", "1")
        _, out2 = run(tmp_path / "2", "hbt", *FAST, "--seed", "2")
        a = read_json(out1 / "hbt.json")
        b = read_json(out2 / "hbt.json")
        assert a["counts"] != b["counts"]
        assert a["config_digest"] != b["config_digest"]


class TestCommands:
    def test_rates_reports_duty_product(self, tmp_path):
        _, out = run(tmp_path, "rates", *FAST)
        r = read_json(out / "rates.json")["rates"]
        assert r["herald_overall"] == pytest.approx(
            r["herald_in_phase"] * r["duty_factor"], rel=1e-12)

    def test_efficiency_curve_csv(self, tmp_path):
        code, out = run(tmp_path, "efficiency-curve",
                        "--set", "simulation.od_grid=[50,200]")
        assert code == 0
        lines = (out / "efficiency_curve.csv").read_text().splitlines()
        assert lines[0].startswith("# config_digest=")
        assert lines[1] == "od,efficiency,leakage_fraction"
        rows = [line.split(",") for line in lines[2:]]
        assert [float(r[0]) for r in rows] == [50.0, 200.0]
        assert float(rows[1][1]) > float(rows[0][1])

    def test_fringes_chain_flag(self, tmp_path):
        code, out = run(tmp_path, "fringes", "--chain", "in", *FAST,
                        "--set", "simulation.phase_points=8")
        assert code == 0
        d = read_json(out / "fringes.json")
        assert d["chain"] == "in"
        assert len(d["phases"]) == 8
        assert len(d["counts_d1"]) == 8

    def test_tomography_report_shape(self, tmp_path):
        _, out = run(tmp_path, "tomography", *FAST)
        d = read_json(out / "tomography.json")
        assert set(d["report"]) >= {"c_in", "c_out", "w_in", "w_out",
                                    "eta", "lambda"}
        assert set(d["counts"]) == {"in", "out"}
        assert d["counts"]["in"]["n_heralds"] > 0

    def test_repeater_outputs_comparison(self, tmp_path):
        code, out = run(tmp_path, "repeater",
                        "--set", "simulation.repeater_samples=200")
        assert code == 0
        d = read_json(out / "repeater.json")
        assert d["comparison"]["ratio"] >= 50.0
        assert d["expected_time_s"] > 0.0

    def test_reproduce_table1_matches_reference(self, tmp_path):
        code, out = run(tmp_path, "reproduce-table1")
        assert code == 0
        d = read_json(out / "table1.json")
        a = d["analysis"]
        assert a["c_in"]["value"] == pytest.approx(targets.C_IN, rel=0.02)
        assert a["c_out"]["value"] == pytest.approx(targets.C_OUT, rel=0.02)
        assert a["w_in"]["value"] == pytest.approx(targets.W_IN, abs=5e-3)
        assert a["eta"]["value"] == pytest.approx(targets.ETA, abs=0.01)
        assert a["lambda"]["value"] == pytest.approx(targets.LAMBDA,
                                                     abs=0.02)
        assert d["corrected"]["c_out"]["value"] == pytest.approx(
            targets.C_OUT_CORRECTED, rel=0.02)

    def test_reproduce_fig3_uses_calibrated_point(self, tmp_path):
        code, out = run(tmp_path, "reproduce-fig3",
                        "--set", "simulation.fringe_trials=1600000000")
        assert code == 0
        d = read_json(out / "fig3.json")
        assert d["fringes"]["out"]["fit"]["V"] < 0.93
        assert d["fringes"]["in"]["fit"]["V"] > 0.95
        dm = d["density_matrices"]["out"]
        assert dm["p00"] > 0.98 and dm["d"] > 0.0

    def test_reproduce_commands_accept_seed_override(self, tmp_path):
        code, out = run(tmp_path, "reproduce-fig2c",
                        "--set", "simulation.od_grid=[100]")
        assert code == 0
        lines = (out / "fig2c.csv").read_text().splitlines()
        assert len(lines) == 3
