import csv
import json

import numpy as np
import pytest

from mfbm.cli import main
from mfbm.outputs import OUT_DIR_ENV


def read_csv(path):
    with open(path, encoding="utf-8") as handle:
        return list(csv.DictReader(handle))


class TestSolveKernel:
    def test_degenerate_drift_kernel(self, tmp_path):
        code = main(["solve-kernel", "--kind", "L", "--H", "1.0", "--T", "1", "--s", "1",
                     "--n", "128", "--out-dir", str(tmp_path), "--prefix", "lk"])
        assert code == 0
        rows = read_csv(tmp_path / "lk.csv")
        assert len(rows) == 128
        assert set(rows[0]) == {"r", "value"}
        values = np.array([float(r["value"]) for r in rows])
        assert np.max(np.abs(values + 0.5)) <= 1e-10
        manifest = json.loads((tmp_path / "lk_manifest.json").read_text())
        assert manifest["command"] == "solve-kernel"
        assert manifest["parameters"]["H"] == 1.0
        assert "created_utc" in manifest and "tool_version" in manifest
        assert manifest["outputs"] == [str(tmp_path / "lk.csv")]

    def test_degenerate_martingale_kernel(self, tmp_path):
        code = main(["solve-kernel", "--kind", "g", "--H", "1.0", "--t", "1",
                     "--n", "128", "--out-dir", str(tmp_path), "--prefix", "gk"])
        assert code == 0
        values = np.array([float(r["value"]) for r in read_csv(tmp_path / "gk.csv")])
        assert np.max(np.abs(values - 0.5)) <= 1e-10

    def test_negative_profile_matches_fine_grid(self, tmp_path):
        for n, prefix in ((256, "lp"), (2048, "lp_fine")):
            code = main(["solve-kernel", "--kind", "L", "--H", "0.85", "--s", "1",
                         "--n", str(n), "--out-dir", str(tmp_path), "--prefix", prefix])
            assert code == 0
        coarse = np.array([float(r["value"]) for r in read_csv(tmp_path / "lp.csv")])
        fine = np.array([float(r["value"]) for r in read_csv(tmp_path / "lp_fine.csv")])
        assert np.all(coarse < 0.0)
        # coarse profile tracks the fine-grid oracle away from the edge
        interior = np.abs(coarse[:224] - fine[4::8][:224])
        assert np.max(interior / np.abs(fine[4::8][:224])) <= 0.02

    def test_validation_exit_codes(self, tmp_path):
        base = ["--out-dir", str(tmp_path)]
        assert main(["solve-kernel", "--kind", "L", "--H", "0.6", "--s", "1", "--n", "128", *base]) == 1
        assert main(["solve-kernel", "--kind", "L", "--H", "0.9", "--s", "1", "--n", "100", *base]) == 1
        assert main(["solve-kernel", "--kind", "L", "--H", "0.9", "--s", "2.0", "--n", "128", *base]) == 1
        assert main(["solve-kernel", "--kind", "L", "--H", "0.9", "--n", "128", *base]) == 1
        assert main(["solve-kernel", "--kind", "L", "--H", "0.9", "--s", "0.5", "--t", "0.5",
                     "--n", "128", *base]) == 1

    def test_unknown_command_exits_one(self):
        assert main(["nonsense"]) == 1


class TestSimulate:
    def test_single_path_schema(self, tmp_path):
        code = main(["simulate", "--H", "0.85", "--n", "128", "--seed", "7",
                     "--out-dir", str(tmp_path), "--prefix", "sim"])
        assert code == 0
        rows = read_csv(tmp_path / "sim.csv")
        assert set(rows[0]) == {"t", "fbm", "bm", "mixed"}
        assert len(rows) == 129
        first = rows[0]
        assert float(first["fbm"]) == float(first["bm"]) == float(first["mixed"]) == 0.0
        mixed = np.array([float(r["mixed"]) for r in rows])
        parts = np.array([float(r["fbm"]) + float(r["bm"]) for r in rows])
        assert np.array_equal(mixed, parts)

    def test_ensemble_summary(self, tmp_path):
        code = main(["simulate", "--H", "0.85", "--n", "64", "--seed", "7", "--paths", "200",
                     "--out-dir", str(tmp_path), "--prefix", "ens"])
        assert code == 0
        rows = read_csv(tmp_path / "ens.csv")
        assert set(rows[0]) == {"t", "mean_fbm", "var_fbm", "mean_bm", "var_bm",
                                "mean_mixed", "var_mixed"}
        assert len(rows) == 65


class TestDecompose:
    def test_schema_and_residual(self, tmp_path, capsys):
        code = main(["decompose", "--H", "1.0", "--n", "256", "--seed", "3",
                     "--decimation", "4", "--out-dir", str(tmp_path), "--prefix", "dec"])
        assert code == 0
        rows = read_csv(tmp_path / "dec.csv")
        assert set(rows[0]) == {"t", "X", "phi", "M", "bbar", "residual"}
        assert len(rows) == 65
        printed = capsys.readouterr().out
        assert "max residual" in printed
        x = np.array([float(r["X"]) for r in rows])
        res = np.array([float(r["residual"]) for r in rows])
        assert res[0] == 0.0
        assert np.max(np.abs(res)) <= 0.02 * np.max(np.abs(x))

    def test_bad_decimation(self, tmp_path):
        assert main(["decompose", "--H", "0.85", "--n", "128", "--decimation", "3",
                     "--out-dir", str(tmp_path)]) == 1


class TestVariogramAndHolder:
    def test_variogram_schema(self, tmp_path):
        code = main(["variogram", "--H", "0.85", "--n", "256", "--lags", "4",
                     "--out-dir", str(tmp_path), "--prefix", "vg"])
        assert code == 0
        rows = read_csv(tmp_path / "vg.csv")
        assert set(rows[0]) == {"lag", "value", "log_lag", "log_value", "method", "stderr"}
        assert len(rows) == 4
        assert rows[0]["method"] == "reduced"
        lag0, val0 = float(rows[0]["lag"]), float(rows[0]["value"])
        assert float(rows[0]["log_lag"]) == pytest.approx(np.log(lag0))
        assert float(rows[0]["log_value"]) == pytest.approx(np.log(val0))

    def test_under_resolved_exits_one(self, tmp_path):
        assert main(["variogram", "--H", "0.85", "--n", "64", "--lags", "4",
                     "--out-dir", str(tmp_path)]) == 1

    def test_holder_fit_and_svg(self, tmp_path):
        code = main(["holder", "--H", "0.85", "--n", "1024", "--lags", "6", "--svg",
                     "--out-dir", str(tmp_path), "--prefix", "ho"])
        assert code == 0
        fit = json.loads((tmp_path / "ho_fit.json").read_text())
        for key in ("slope", "intercept", "r_squared", "target", "window",
                    "slope_stderr", "n_points"):
            assert key in fit
        assert fit["target"] == pytest.approx(0.4)
        assert abs(fit["slope"] - fit["target"]) <= 0.1
        svg = (tmp_path / "ho.svg").read_text()
        assert svg.startswith("<svg") and "polyline" in svg

    def test_gram_method_column(self, tmp_path):
        code = main(["variogram", "--H", "0.85", "--n", "256", "--lags", "4",
                     "--method", "gram", "--out-dir", str(tmp_path), "--prefix", "vgg"])
        assert code == 0
        rows = read_csv(tmp_path / "vgg.csv")
        assert rows[0]["method"] == "gram"


class TestAuditBounds:
    def test_report_schema(self, tmp_path):
        code = main(["audit-bounds", "--H", "0.85", "--n-sweep", "64,128",
                     "--out-dir", str(tmp_path), "--prefix", "ab"])
        assert code == 0
        payload = json.loads((tmp_path / "ab_bounds.json").read_text())
        assert set(payload) == {"i", "ii", "iii", "composite"}
        for part in payload.values():
            assert part["grid_sizes"] == [64, 128]
            assert len(part["constants"]) == 2
            assert part["stability_ratio"] >= 1.0
        assert "envelope" in payload["i"]

    def test_bad_sweep(self, tmp_path):
        assert main(["audit-bounds", "--H", "0.85", "--n-sweep", "128,64",
                     "--out-dir", str(tmp_path)]) == 1
        assert main(["audit-bounds", "--H", "0.85", "--n-sweep", "banana",
                     "--out-dir", str(tmp_path)]) == 1


class TestReproducibility:
    def test_thread_count_does_not_change_bytes(self, tmp_path):
        for threads, prefix in ((1, "a"), (4, "b")):
            code = main(["variogram", "--H", "0.85", "--n", "256", "--lags", "4",
                         "--threads", str(threads), "--out-dir", str(tmp_path),
                         "--prefix", prefix])
            assert code == 0
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_manifest_replay_reproduces_bytes(self, tmp_path):
        code = main(["decompose", "--H", "0.85", "--n", "128", "--seed", "5",
                     "--decimation", "2", "--out-dir", str(tmp_path), "--prefix", "r1"])
        assert code == 0
        first = (tmp_path / "r1.csv").read_bytes()
        manifest_path = tmp_path / "r1_manifest.json"
        manifest = json.loads(manifest_path.read_text())
        manifest["parameters"]["prefix"] = "r2"
        rewritten = tmp_path / "replay_manifest.json"
        rewritten.write_text(json.dumps(manifest))
        assert main(["--manifest", str(rewritten)]) == 0
        second = (tmp_path / "r2.csv").read_bytes()
        assert first == second

    def test_out_dir_env_default(self, tmp_path, monkeypatch):
        monkeypatch.setenv(OUT_DIR_ENV, str(tmp_path))
        code = main(["solve-kernel", "--kind", "g", "--H", "0.9", "--t", "0.5",
                     "--n", "64", "--prefix", "envtest"])
        assert code == 0
        assert (tmp_path / "envtest.csv").exists()

    def test_csv_format_contract(self, tmp_path):
        main(["solve-kernel", "--kind", "L", "--H", "0.85", "--s", "0.5", "--n", "64",
              "--out-dir", str(tmp_path), "--prefix", "fmt"])
        raw = (tmp_path / "fmt.csv").read_bytes()
        assert b"\r" not in raw
        text = raw.decode("utf-8")
        header, first_row = text.splitlines()[:2]
        assert header == "r,value"
        value_repr = first_row.split(",")[1]
        assert float(value_repr) == float(format(float(value_repr), ".17g"))
