import csv
import json

import numpy as np
import pytest

from rnnlip import RnnModel, save_model
from rnnlip.cli import main

pytestmark = pytest.mark.filterwarnings("ignore::RuntimeWarning")


def run(*argv) -> int:
    return main(list(argv))


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """A small gen-data -> train -> certify -> estimate chain shared by tests."""
    root = tmp_path_factory.mktemp("pipeline")
    data = root / "data.json"
    model = root / "model.json"
    assert run("gen-data", "--sequences", "80", "--length", "50", "--seed", "1",
               "--out", str(data)) == 0
    assert run("train", "--data", str(data), "--hidden", "4", "--seed", "3",
               "--max-epochs", "80", "--out", str(model)) == 0
    cert_g = root / "cert_global.json"
    cert_l = root / "cert_local.json"
    assert run("certify", "--model", str(model), "--horizons", "1,3",
               "--out", str(cert_g)) == 0
    assert run("certify", "--model", str(model), "--horizons", "1,3", "--mode", "local",
               "--out", str(cert_l)) == 0
    estimates = {}
    for method, name in [("random", "rand"), ("active", "act"), ("active-bounded", "actb")]:
        for horizon in (1, 3):
            out = root / f"est_{name}_{horizon}.json"
            assert run("estimate", "--model", str(model), "--method", method,
                       "--horizon", str(horizon), "--samples", "2000",
                       "--restarts", "2", "--max-epochs", "150", "--seed", "5",
                       "--out", str(out)) == 0
            estimates[(method, horizon)] = out
    return {"root": root, "data": data, "model": model,
            "cert_global": cert_g, "cert_local": cert_l, "estimates": estimates}


class TestGenData:
    def test_split_recorded(self, pipeline):
        obj = json.loads(pipeline["data"].read_text())
        assert len(obj["train"]) == 56  # 70% of 80
        assert len(obj["val"]) == 24
        assert "manifest" in obj

    def test_equal_seeds_byte_identical(self, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        for out in (a, b):
            assert run("gen-data", "--sequences", "12", "--length", "20", "--seed", "7",
                       "--out", str(out)) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_different_seeds_differ(self, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        assert run("gen-data", "--sequences", "12", "--length", "20", "--seed", "7", "--out", str(a)) == 0
        assert run("gen-data", "--sequences", "12", "--length", "20", "--seed", "8", "--out", str(b)) == 0
        assert a.read_bytes() != b.read_bytes()


class TestTrain:
    def test_model_file_schema(self, pipeline):
        obj = json.loads(pipeline["model"].read_text())
        for key in ("n", "m", "p", "activation", "W_x", "W_h", "b", "W_out", "b_out"):
            assert key in obj
        assert obj["n"] == 4 and obj["m"] == 3 and obj["p"] == 3

    def test_log_written_with_norms(self, pipeline):
        log_path = pipeline["model"].with_suffix(".log.json")
        log = json.loads(log_path.read_text())["log"]
        assert log["norm_condition_met"]
        assert all(isinstance(v, float) for v in log["spectral_norms"])
        assert log["spectral_norms"][log["best_epoch"]] < 1.0

    def test_missing_data_file_is_io_error(self, tmp_path):
        assert run("train", "--data", str(tmp_path / "nope.json"),
                   "--out", str(tmp_path / "m.json")) == 2

    def test_train_byte_identical_under_seed(self, pipeline, tmp_path):
        m2 = tmp_path / "m2.json"
        assert run("train", "--data", str(pipeline["data"]), "--hidden", "4", "--seed", "3",
                   "--max-epochs", "80", "--out", str(m2)) == 0
        assert m2.read_bytes() == pipeline["model"].read_bytes()


class TestCertify:
    def test_results_schema(self, pipeline):
        obj = json.loads(pipeline["cert_global"].read_text())
        assert obj["mode"] == "global"
        assert obj["all_optimal"]
        horizons = [r["horizon"] for r in obj["results"]]
        assert horizons == [1, 3]
        for entry in obj["results"]:
            assert entry["status"] == "optimal"
            assert entry["certificate_residual"] <= 1e-6
            assert entry["L"] == pytest.approx(np.sqrt(entry["rho"]), rel=1e-12)
            assert set(entry["lambda_summary"]) == {"min", "max", "mean"}
        assert obj["overall_L"] == max(r["L"] for r in obj["results"])

    def test_local_no_worse_than_global(self, pipeline):
        glob = json.loads(pipeline["cert_global"].read_text())
        loc = json.loads(pipeline["cert_local"].read_text())
        for g, l in zip(glob["results"], loc["results"]):
            assert l["L"] <= g["L"] + 1e-6

    def test_zero_output_model(self, tmp_path):
        model = RnnModel(W_x=np.ones((2, 1)), W_h=0.4 * np.eye(2), b=np.zeros(2),
                         W_out=np.zeros((1, 2)), b_out=np.zeros(1))
        path = tmp_path / "zero.json"
        save_model(model, path)
        out = tmp_path / "cert.json"
        assert run("certify", "--model", str(path), "--horizons", "1,4", "--out", str(out)) == 0
        obj = json.loads(out.read_text())
        assert obj["overall_L"] <= 1e-6

    def test_bad_horizons_usage_error(self, pipeline, tmp_path):
        assert run("certify", "--model", str(pipeline["model"]), "--horizons", "0",
                   "--out", str(tmp_path / "x.json")) == 1
        assert run("certify", "--model", str(pipeline["model"]), "--horizons", "a,b",
                   "--out", str(tmp_path / "x.json")) == 1

    def test_deterministic_modulo_solve_seconds(self, pipeline, tmp_path):
        out = tmp_path / "again.json"
        assert run("certify", "--model", str(pipeline["model"]), "--horizons", "1,3",
                   "--out", str(out)) == 0
        a = json.loads(pipeline["cert_global"].read_text())
        b = json.loads(out.read_text())
        for obj in (a, b):
            for entry in obj["results"]:
                entry.pop("solve_seconds")
        assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)


class TestEstimate:
    def test_deterministic_modulo_search_seconds(self, pipeline, tmp_path):
        out = tmp_path / "est.json"
        assert run("estimate", "--model", str(pipeline["model"]), "--method", "random",
                   "--horizon", "1", "--samples", "2000", "--restarts", "2",
                   "--max-epochs", "150", "--seed", "5", "--out", str(out)) == 0
        a = json.loads(pipeline["estimates"][("random", 1)].read_text())
        b = json.loads(out.read_text())
        a.pop("search_seconds"); b.pop("search_seconds")
        assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)

    def test_active_at_least_random(self, pipeline):
        for horizon in (1, 3):
            rand = json.loads(pipeline["estimates"][("random", horizon)].read_text())
            act = json.loads(pipeline["estimates"][("active", horizon)].read_text())
            assert act["L_emp"] >= rand["L_emp"]

    def test_bounded_at_most_unbounded(self, pipeline):
        for horizon in (1, 3):
            act = json.loads(pipeline["estimates"][("active", horizon)].read_text())
            actb = json.loads(pipeline["estimates"][("active-bounded", horizon)].read_text())
            assert actb["L_emp"] <= act["L_emp"] + 1e-9

    def test_below_certified_bound(self, pipeline):
        cert = {r["horizon"]: r["L"] for r in json.loads(pipeline["cert_global"].read_text())["results"]}
        for (method, horizon), path in pipeline["estimates"].items():
            est = json.loads(path.read_text())
            assert est["L_emp"] <= cert[horizon] * (1 + 1e-6) + 1e-8

    def test_argmax_pair_stored_for_replay(self, pipeline):
        est = json.loads(pipeline["estimates"][("active", 1)].read_text())
        pair = est["argmax_pair"]
        u1 = np.asarray(pair["u1"])
        u2 = np.asarray(pair["u2"])
        from rnnlip import l_emp, load_model
        model = load_model(pipeline["model"])
        assert l_emp(model, u1, u2, 1) == pytest.approx(est["L_emp"], abs=1e-9)


class TestReport:
    def test_joined_table(self, pipeline, tmp_path):
        out_csv = tmp_path / "report.csv"
        out_json = tmp_path / "report.json"
        argv = ["report", "--cert", str(pipeline["cert_global"]),
                "--cert", str(pipeline["cert_local"]),
                "--out-csv", str(out_csv), "--out-json", str(out_json)]
        for key, path in pipeline["estimates"].items():
            argv += ["--estimate", str(path)]
        assert run(*argv) == 0

        with open(out_csv) as fh:
            rows = list(csv.DictReader(fh))
        assert [r["horizon"] for r in rows] == ["1", "3"]
        for row in rows:
            g = float(row["L_cert_global"])
            act = float(row["L_act"])
            gap = float(row["gap_pct"])
            assert gap == pytest.approx((g - act) / act * 100.0, rel=1e-9)
            improvement = float(row["improvement_pct"])
            local = float(row["L_cert_local"])
            assert improvement == pytest.approx((g - local) / g * 100.0, rel=1e-9)
            assert float(row["L_rand"]) <= act

        summary = json.loads(out_json.read_text())
        assert summary["mean_improvement_pct"] == pytest.approx(
            float(np.mean([float(r["improvement_pct"]) for r in rows])), rel=1e-9)

    def test_digest_mismatch_is_contract_error(self, pipeline, tmp_path):
        other_model = tmp_path / "other.json"
        model = RnnModel(W_x=np.ones((2, 2)), W_h=0.3 * np.eye(2), b=np.zeros(2),
                         W_out=np.ones((1, 2)), b_out=np.zeros(1))
        save_model(model, other_model)
        other_cert = tmp_path / "other_cert.json"
        assert run("certify", "--model", str(other_model), "--horizons", "1",
                   "--out", str(other_cert)) == 0
        assert run("report", "--cert", str(pipeline["cert_global"]),
                   "--cert", str(other_cert),
                   "--out-csv", str(tmp_path / "r.csv"),
                   "--out-json", str(tmp_path / "r.json")) == 4

    def test_empty_join_is_contract_error(self, tmp_path):
        assert run("report", "--out-csv", str(tmp_path / "r.csv"),
                   "--out-json", str(tmp_path / "r.json")) == 4


class TestUsage:
    def test_unknown_command(self):
        assert run("frobnicate") == 1

    def test_missing_required_flag(self):
        assert run("certify", "--horizons", "1") == 1

    def test_version(self, capsys):
        with pytest.raises(SystemExit) as excinfo:
            run("--version")
        assert excinfo.value.code == 0
