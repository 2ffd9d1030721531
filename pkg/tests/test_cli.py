import csv
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from fdid import cli
from fdid.cli import (RunConfig, SUMMARY_COLUMNS, ingest_panel, main, placebo_metrics,
                      rows_to_samples, signal_metrics, write_panel)
from fdid.exceptions import IngestionError, InvalidArgument, ModelFailure
from fdid.sim import ULEZ_COVARIATES, ulez_fixture

HOURS = range(24)


def small_panel(n_units=2):
    outcomes, units = [], []
    for u in range(n_units):
        uid = f"u{u}"
        for period in (0, 1):
            for h in HOURS:
                outcomes.append({"unit_id": uid, "period": period, "time": h,
                                 "value": 40.0 + u + period + 0.5 * h})
        rec = {"unit_id": uid, "D": u % 2, "cluster_id": "s0"}
        for j, c in enumerate(ULEZ_COVARIATES):
            rec[c] = ("Roadside" if u % 2 else "Kerbside") if c.startswith("cat:") else j + u
        units.append(rec)
    return outcomes, units


def write_files(tmp_path, outcomes, units, prefix=""):
    o, u = tmp_path / f"{prefix}outcomes.csv", tmp_path / f"{prefix}units.csv"
    write_panel(outcomes, units, str(o), str(u))
    return str(o), str(u)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def run_cli(*args, cwd=None):
    return subprocess.run([sys.executable, "-m", "fdid.cli", *map(str, args)],
                          capture_output=True, text=True, cwd=cwd)


@pytest.fixture(scope="module")
def fixture_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("fixture")
    assert main(["fixture", "--out", str(d), "--seed", "0"]) == 0
    return d


@pytest.fixture(scope="module")
def fixture_estimate(fixture_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("est")
    code = main(["estimate", "--outcomes", str(fixture_dir / "outcomes.csv"),
                 "--units", str(fixture_dir / "units.csv"), "--b", "500", "--out", str(out)])
    assert code == 0
    return out


class TestIngestion:
    def test_hourly_example(self, tmp_path):
        samples, names = ingest_panel(*write_files(tmp_path, *small_panel()))
        assert len(samples) == 2
        assert len(names) == 14
        assert "SiteType=Roadside" in names
        for s in samples:
            assert s.obs_pre.shape == (24, 2) and s.obs_post.shape == (24, 2)
            assert s.X.shape == (14,)
        assert [s.D for s in samples] == [0, 1]

    def test_duplicate_row(self, tmp_path):
        outcomes, units = small_panel()
        outcomes.insert(5, dict(outcomes[3]))
        with pytest.raises(IngestionError) as err:
            ingest_panel(*write_files(tmp_path, outcomes, units))
        # header is line 1, so list position 5 is row 7 and the original is row 5
        assert any("row 7" in p and "duplicate" in p and "row 5" in p
                   for p in err.value.problems)

    def test_orphan_unit(self, tmp_path):
        outcomes, units = small_panel()
        outcomes.append({"unit_id": "ghost", "period": 0, "time": 0, "value": 1.0})
        with pytest.raises(IngestionError) as err:
            ingest_panel(*write_files(tmp_path, outcomes, units))
        assert any("ghost" in p and f"row {len(outcomes) + 1}" in p for p in err.value.problems)

    def test_missing_period(self, tmp_path):
        outcomes, units = small_panel()
        outcomes = [r for r in outcomes if not (r["unit_id"] == "u1" and r["period"] == 1)]
        with pytest.raises(IngestionError, match="period-1"):
            ingest_panel(*write_files(tmp_path, outcomes, units))

    def test_all_problems_itemized(self, tmp_path):
        outcomes, units = small_panel()
        outcomes[0]["value"] = "nan"
        outcomes[1]["period"] = 2
        units[1]["D"] = 3
        with pytest.raises(IngestionError) as err:
            ingest_panel(*write_files(tmp_path, outcomes, units))
        text = " | ".join(err.value.problems)
        assert "row 2" in text and "row 3" in text and "D must be 0 or 1" in text

    def test_missing_column(self, tmp_path):
        o, u = write_files(tmp_path, *small_panel())
        with open(o, "w") as fh:
            fh.write("unit_id,period,value\nu0,0,1.0\n")
        with pytest.raises(IngestionError, match="missing columns"):
            ingest_panel(o, u)

    def test_round_trip(self, tmp_path):
        outcomes, units = ulez_fixture(n_sites=4, n_days=5, seed=3)
        mem, mem_names = rows_to_samples(outcomes, units)
        disk, disk_names = ingest_panel(*write_files(tmp_path, outcomes, units))
        assert mem_names == disk_names
        assert len(mem) == len(disk)
        for a, b in zip(mem, disk):
            assert (a.unit_id, a.D, a.cluster_id) == (b.unit_id, b.D, b.cluster_id)
            np.testing.assert_array_equal(a.X, b.X)
            np.testing.assert_array_equal(a.obs_pre, b.obs_pre)
            np.testing.assert_array_equal(a.obs_post, b.obs_post)


class TestEstimate:
    def test_fixture_effect(self, fixture_estimate):
        est = json.loads((fixture_estimate / "estimate.json").read_text())
        avg = est["methods"]["cf_dr"]["traffic_average"]
        assert -8 <= avg <= -2
        assert est["regime"] == "raw"
        assert est["n_clusters"] == 10
        assert est["format_version"] == cli.FORMAT_VERSION
        assert est["config"]["command"] == "estimate"
        assert set(est["versions"]) >= {"fdid", "numpy", "scipy"}
        assert len(est["grid"]) == 24

    def test_band_csv(self, fixture_estimate):
        rows = read_csv(fixture_estimate / "band.csv")
        assert list(rows[0]) == ["t", "tau", "lo_pt", "hi_pt", "lo_scb", "hi_scb"]
        assert len(rows) == 24
        for r in rows:
            v = {k: float(x) for k, x in r.items()}
            assert v["lo_scb"] <= v["lo_pt"] <= v["tau"] <= v["hi_pt"] <= v["hi_scb"]

    def test_rerun_byte_identical(self, fixture_dir, fixture_estimate, tmp_path):
        code = main(["estimate", "--outcomes", str(fixture_dir / "outcomes.csv"),
                     "--units", str(fixture_dir / "units.csv"), "--b", "500",
                     "--out", str(tmp_path)])
        assert code == 0
        for name in ("band.csv", "estimate.json"):
            assert (tmp_path / name).read_bytes() == (fixture_estimate / name).read_bytes()

    def test_identical_groups(self, tmp_path):
        outcomes, units = ulez_fixture(n_sites=6, n_days=20, effect=0.0, seed=5)
        twins_o = [dict(r, unit_id=r["unit_id"] + "_twin") for r in outcomes]
        twins_u = [dict(u, unit_id=u["unit_id"] + "_twin", D=1 - u["D"]) for u in units]
        o, u = write_files(tmp_path, outcomes + twins_o, units + twins_u)
        out = tmp_path / "out"
        assert main(["estimate", "--outcomes", o, "--units", u, "--b", "500",
                     "--out", str(out)]) == 0
        rows = [{k: float(x) for k, x in r.items()} for r in read_csv(out / "band.csv")]
        assert all(r["lo_scb"] <= 0 <= r["hi_scb"] for r in rows)
        est = json.loads((out / "estimate.json").read_text())
        np.testing.assert_allclose(est["methods"]["naive"]["tau"], 0, atol=1e-9)
        assert max(abs(x) for x in est["methods"]["cf_dr"]["tau"]) < 2.0


class TestDiagnostics:
    def test_zero_placebo(self):
        assert placebo_metrics(np.zeros(24)) == {"abs_avg_bias": 0, "mab": 0, "rmse": 0,
                                                 "superr": 0}

    def test_placebo_values(self):
        m = placebo_metrics([1.0, -1.0, 2.0, -2.0])
        assert m["abs_avg_bias"] == 0 and m["mab"] == 1.5 and m["superr"] == 2.0
        assert m["rmse"] == pytest.approx(np.sqrt(2.5))

    def test_signal_ratio(self):
        s = signal_metrics(-8.192, 6.935)
        assert s["signal_rmse"] == pytest.approx(1.181, abs=5e-4)
        assert s["net_signal"] == pytest.approx(8.192 - 6.935)

    def test_net_signal_negative(self):
        assert signal_metrics(1.0, 3.0)["net_signal"] < 0

    def test_end_to_end(self, fixture_dir, tmp_path):
        code = main(["diagnostics", "--outcomes", str(fixture_dir / "outcomes.csv"),
                     "--units", str(fixture_dir / "units.csv"),
                     "--placebo-outcomes", str(fixture_dir / "placebo_outcomes.csv"),
                     "--placebo-units", str(fixture_dir / "placebo_units.csv"),
                     "--b", "200", "--methods", "cf_dr,naive", "--out", str(tmp_path)])
        assert code == 0
        rows = read_csv(tmp_path / "diagnostics.csv")
        assert [r["method"] for r in rows] == ["cf_dr", "naive"]
        assert list(rows[0]) == ["method", "abs_avg_bias", "mab", "rmse", "superr", "signal",
                                 "signal_rmse", "net_signal"]
        cf = {k: float(v) for k, v in rows[0].items() if k != "method"}
        assert cf["signal_rmse"] == pytest.approx(cf["signal"] / cf["rmse"])
        assert "format_version" in json.loads((tmp_path / "diagnostics.json").read_text())

    def test_missing_placebo(self, fixture_dir, tmp_path):
        with pytest.raises(InvalidArgument):
            cli.run_diagnostics(RunConfig("diagnostics", outcomes="x", units="y",
                                          out=str(tmp_path)))
        code = main(["diagnostics", "--outcomes", str(fixture_dir / "outcomes.csv"),
                     "--units", str(fixture_dir / "units.csv"), "--out", str(tmp_path)])
        assert code == 2


@pytest.fixture(scope="module")
def sim_out(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    proc = run_cli("simulate", "--scenario", "S1", "--n", 200, "--r", 5, "--seed", 7,
                   "--out", out)
    assert proc.returncode == 0, proc.stderr
    return out


class TestSimulate:
    def test_artifacts(self, sim_out):
        for name in ("summary_metrics.csv", "inference.csv", "per_replication.csv", "run.json",
                     "plotdata/mean_curves.csv", "plotdata/rmse_curves.csv",
                     "plotdata/band_curves.csv"):
            assert (sim_out / name).is_file(), name

    def test_summary_schema(self, sim_out):
        header = (sim_out / "summary_metrics.csv").read_text().splitlines()[0]
        assert header == ",".join(SUMMARY_COLUMNS)
        rows = read_csv(sim_out / "summary_metrics.csv")
        assert [r["method"] for r in rows] == ["cf_dr", "or", "ipw", "naive", "oracle"]
        assert all(r["scenario"] == "S1" and r["n"] == "200" for r in rows)

    def test_inference_schema(self, sim_out):
        header = (sim_out / "inference.csv").read_text().splitlines()[0]
        assert header == ("scenario,method,n,cover_0.25,cover_0.5,cover_0.75,ci_width,"
                          "scb_cover,band_width")
        assert len(read_csv(sim_out / "per_replication.csv")) == 25

    def test_config_echo(self, sim_out):
        run = json.loads((sim_out / "run.json").read_text())
        assert run["format_version"] == cli.FORMAT_VERSION
        assert run["config"]["R"] == 5 and run["config"]["seed"] == 7
        assert run["scenario"]["id"] == "S1"
        assert run["failures"] == 0

    def test_rerun_identical(self, sim_out, tmp_path):
        assert main(["simulate", "--scenario", "S1", "--n", "200", "--r", "5", "--seed", "7",
                     "--out", str(tmp_path)]) == 0
        for root, _, files in os.walk(sim_out):
            for f in files:
                rel = os.path.relpath(os.path.join(root, f), sim_out)
                assert (tmp_path / rel).read_bytes() == (sim_out / rel).read_bytes(), rel


class TestExitCodes:
    def test_bad_scenario(self, tmp_path):
        proc = run_cli("simulate", "--scenario", "S9", "--out", tmp_path)
        assert proc.returncode == 2
        assert json.loads(proc.stderr.strip().splitlines()[-1])["exit_code"] == 2

    @pytest.mark.parametrize("flag,value", [("--k", 1), ("--b", 50), ("--alpha", 1.5),
                                            ("--clip", 0.6)])
    def test_bad_config(self, tmp_path, flag, value):
        assert main(["simulate", "--scenario", "S1", flag, str(value),
                     "--out", str(tmp_path)]) == 2
        assert json.loads((tmp_path / "error.json").read_text())["exit_code"] == 2

    def test_oracle_rejected_for_real_data(self, tmp_path):
        assert main(["estimate", "--outcomes", "a", "--units", "b", "--methods", "oracle",
                     "--out", str(tmp_path)]) == 2

    def test_missing_file(self, tmp_path):
        code = main(["estimate", "--outcomes", str(tmp_path / "none.csv"),
                     "--units", str(tmp_path / "none2.csv"), "--out", str(tmp_path)])
        assert code == 3

    def test_data_error(self, tmp_path):
        outcomes, units = small_panel()
        outcomes.insert(1, dict(outcomes[0]))
        o, u = write_files(tmp_path, outcomes, units)
        assert main(["estimate", "--outcomes", o, "--units", u, "--out", str(tmp_path)]) == 3
        err = json.loads((tmp_path / "error.json").read_text())
        assert err["error"] == "IngestionError"
        assert any("duplicate" in p for p in err["problems"])

    def test_numerical_failure(self, tmp_path, monkeypatch, fixture_dir):
        def boom(*a, **k):
            raise ModelFailure("outcome solve failed")
        monkeypatch.setattr(cli, "estimate_panel", boom)
        code = main(["estimate", "--outcomes", str(fixture_dir / "outcomes.csv"),
                     "--units", str(fixture_dir / "units.csv"), "--out", str(tmp_path)])
        assert code == 4
        assert json.loads((tmp_path / "error.json").read_text())["error"] == "ModelFailure"

    def test_linalg_failure(self, tmp_path, monkeypatch, fixture_dir):
        def boom(*a, **k):
            raise np.linalg.LinAlgError("singular")
        monkeypatch.setattr(cli, "estimate_panel", boom)
        code = main(["estimate", "--outcomes", str(fixture_dir / "outcomes.csv"),
                     "--units", str(fixture_dir / "units.csv"), "--out", str(tmp_path)])
        assert code == 4


def test_run_config_validation():
    RunConfig("simulate", scenario="S1").validate()
    with pytest.raises(InvalidArgument):
        RunConfig("simulate", traffic_hours=[19, 7]).validate()
    echo = RunConfig("simulate", out="/tmp/x").echo()
    assert "out" not in echo and echo["format_version"] == cli.FORMAT_VERSION
