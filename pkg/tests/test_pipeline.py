import json

import numpy as np
import pytest

from mfe_predict.cli import main
from mfe_predict.exceptions import ConfigError, ShapeMismatch
from mfe_predict.pipeline import (
    ExperimentConfig,
    audit,
    inside_hull,
    mid_range,
    multi_output_mse,
    network_split,
    probe_eval,
    run_experiment,
    split,
)
from mfe_predict.poly import PolynomialRegressor
from mfe_predict.records import InputVector, MfeRecord, ingest_csv, inputs_array, write_csv


class TestSplit:
    def test_ninety_ten(self):
        train, test = split(1102, (0.9, 0.1), seed=0)
        assert (train.size, test.size) == (991, 111)
        assert np.intersect1d(train, test).size == 0
        np.testing.assert_array_equal(np.union1d(train, test), np.arange(1102))

    def test_deterministic(self):
        a, b = split(500, (0.9, 0.1), 3), split(500, (0.9, 0.1), 3)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)
        assert not np.array_equal(a[1], split(500, (0.9, 0.1), 4)[1])

    def test_empty_test_fold(self):
        with pytest.warns(UserWarning, match="empty fold"):
            train, test = split(50, (1.0, 0.0))
        assert train.size == 50 and test.size == 0

    def test_three_way(self):
        folds = split(1000, (0.8, 0.1, 0.1), 1)
        assert [f.size for f in folds] == [800, 100, 100]

    def test_bad_ratios(self):
        with pytest.raises(ConfigError):
            split(10, (0.5, 0.4))

    def test_network_folds_keep_test(self):
        train, test = split(1000, (0.9, 0.1), 0)
        net_tr, net_val = network_split(test, 1000, 0.1, 0)
        assert (net_tr.size, net_val.size) == (800, 100)
        assert np.intersect1d(net_val, test).size == 0 and np.intersect1d(net_tr, test).size == 0
        np.testing.assert_array_equal(np.sort(np.concatenate([net_tr, net_val])), train)


class TestMse:
    def test_hand_value(self):
        assert multi_output_mse([[3.0, 4.0]], [[0.0, 0.0]]) == 12.5

    def test_perfect(self):
        y = np.random.default_rng(0).normal(size=(20, 2))
        assert multi_output_mse(y, y) == 0.0

    def test_single_channel_is_plain_mse(self, rng):
        p, t = rng.normal(size=40), rng.normal(size=40)
        assert abs(multi_output_mse(p[:, None], t[:, None]) - np.mean((p - t) ** 2)) <= 1e-15
        assert abs(multi_output_mse(p, t) - np.mean((p - t) ** 2)) <= 1e-15

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            multi_output_mse(np.zeros((3, 2)), np.zeros((3, 1)))


def _synthetic_records(rng, n=120):
    x = np.column_stack([rng.uniform(0, 30000, n), rng.uniform(-5, 5, n), rng.uniform(-30, 0, n), rng.uniform(0, 30, n)])
    y = 400 - 0.005 * x[:, 0] + 3 * x[:, 1] + 2 * x[:, 3] - x[:, 2]
    return [MfeRecord(InputVector(*xi), float(yi), 100.0, 0.0) for xi, yi in zip(x, y)]


class TestProbes:
    def test_exact_fit_training_point(self, rng):
        recs = _synthetic_records(rng)
        x = inputs_array(recs)
        model = PolynomialRegressor((1, 1, 1, 1), 1).fit(x, [r.n_trim for r in recs])
        rows = probe_eval(model, recs[:5], x_train=x)
        assert len(rows) == 5
        for row in rows:
            assert abs(row["error_percentage"]) < 1e-9
            assert not row["outside_training_hull"]

    def test_hull_flag(self, rng):
        recs = _synthetic_records(rng)
        x = inputs_array(recs)
        model = PolynomialRegressor((1, 1, 1, 1), 1).fit(x, [r.n_trim for r in recs])
        far = MfeRecord(InputVector(40000.0, 0.0, -10.0, 10.0), 100.0, 100.0, 0.0)
        (row,) = probe_eval(model, [far], x_train=x)
        assert row["outside_training_hull"]

    def test_needs_probes(self):
        with pytest.raises(ValueError):
            probe_eval(None, [])

    def test_hull_falls_back_to_box_for_flat_inputs(self):
        x = np.column_stack([np.linspace(0, 1, 10), np.zeros(10)])
        np.testing.assert_array_equal(inside_hull(x, [[0.5, 0.0], [2.0, 0.0]]), [True, False])

    def test_mid_range(self):
        x = np.array([[0.0, 0.0], [10.0, 10.0], [5.0, 5.0], [4.0, 6.0], [9.0, 1.0]])
        np.testing.assert_array_equal(mid_range(x, np.array([0, 2, 3, 4]), 2), [2, 3])


class TestConfig:
    def test_requires_data_source(self):
        with pytest.raises(ConfigError):
            ExperimentConfig()

    def test_exclusive_sources(self):
        with pytest.raises(ConfigError):
            ExperimentConfig(database="a.csv", generate=True)

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="unknown"):
            ExperimentConfig.from_dict({"database": "a.csv", "colour": "red"})

    def test_split_sum(self):
        with pytest.raises(ConfigError):
            ExperimentConfig(database="a.csv", split=[0.8, 0.1])

    def test_unreadable_file(self, tmp_path):
        (tmp_path / "c.json").write_text("{not json")
        with pytest.raises(ConfigError):
            ExperimentConfig.from_file(tmp_path / "c.json")


# short network budgets are deliberate here; stalls are expected
STALLS = pytest.mark.filterwarnings("ignore::mfe_predict.tanh_models.AllRunsStalled")


@pytest.fixture(scope="module")
def experiment(mini_csv, tmp_path_factory):
    out = tmp_path_factory.mktemp("exp")
    cfg = ExperimentConfig(
        output_dir=str(out), database=str(mini_csv), mlp_models=[4], restarts=2, max_epochs=60,
        gsa=[{"model": "Poly3344", "factors": {"h": [0, 30000], "gamma": [-5, 5], "jam": [-30, 30]},
              "n": 2000, "n_boot": 100}],
    )
    return cfg, run_experiment(cfg), out


@STALLS
class TestExperiment:

    def test_rows_sorted_by_test_mse(self, experiment):
        _, report, _ = experiment
        names = [m["name"] for m in report.models]
        assert set(names) == {"Poly2222", "Poly3333", "Poly3344", "MLP4"}
        mses = [m["test_mse"] for m in report.models]
        assert mses == sorted(mses)
        poly = {m["name"]: m for m in report.models if m["kind"] == "poly"}
        assert [poly[k]["n_coefficients"] for k in ("Poly2222", "Poly3333", "Poly3344")] == [15, 35, 68]
        assert all(len(m["probes"]) == 2 for m in report.models)

    def test_artifacts(self, experiment):
        _, report, out = experiment
        for name in ("report.json", "report.txt", "folds.json", "probes.csv", "runtimes.json",
                     "history_MLP4.csv", "predictions_Poly3344.csv", "models/MLP4.json", "gsa_0_Poly3344.json"):
            assert (out / name).exists(), name
        d = json.loads((out / "report.json").read_text())
        assert d["dataset"]["n_records"] == len(ingest_csv(d["config"]["database"]))
        assert "Poly3344" in (out / "report.txt").read_text()

    def test_gsa_block(self, experiment):
        _, report, _ = experiment
        (g,) = report.gsa
        assert g["factors"] == ["h", "gamma", "jam"] and g["model"] == "Poly3344"
        assert len(g["indices"]["first"]) == 3 and len(g["ci"]["first"]) == 3

    def test_fold_sharing(self, experiment):
        _, _, out = experiment
        folds = json.loads((out / "folds.json").read_text())
        assert set(folds["network_train"]) | set(folds["network_validation"]) == set(folds["train"])
        assert not set(folds["network_validation"]) & set(folds["test"])

    def test_rerun_is_byte_identical(self, experiment, tmp_path):
        cfg, _, out = experiment
        again = ExperimentConfig.from_dict({**cfg.__dict__, "output_dir": str(out)})
        run_experiment(ExperimentConfig.from_dict({**cfg.__dict__, "output_dir": str(tmp_path)}))
        first = (out / "report.json").read_bytes()
        # output_dir differs between the two runs, so compare with it removed
        strip = lambda b: {k: v for k, v in json.loads(b).items() if k != "config"}
        assert strip(first) == strip((tmp_path / "report.json").read_bytes())
        run_experiment(again)
        assert (out / "report.json").read_bytes() == first

    def test_audit(self, experiment):
        _, _, out = experiment
        assert audit(out) == []

    def test_audit_detects_tampering(self, experiment, tmp_path):
        _, _, out = experiment
        import shutil

        shutil.copytree(out, tmp_path / "copy")
        path = tmp_path / "copy" / "report.json"
        d = json.loads(path.read_text())
        d["models"][0]["test_mse"] *= 1.01
        path.write_text(json.dumps(d))
        assert any("test_mse" in p for p in audit(tmp_path / "copy"))

    def test_dataset_only(self, mini_csv, tmp_path):
        report = run_experiment(ExperimentConfig(output_dir=str(tmp_path), database=str(mini_csv), poly_models=[]))
        assert report.models == [] and report.gsa == []
        assert report.dataset["n_train"] + report.dataset["n_test"] == report.dataset["n_records"]

    def test_stage_context(self, mini_csv, tmp_path):
        cfg = ExperimentConfig(output_dir=str(tmp_path), database=str(mini_csv), poly_models=["Poly2222"],
                               gsa=[{"model": "Poly9999", "factors": {"h": [0, 1]}}])
        with pytest.raises(ConfigError) as info:
            run_experiment(cfg)
        assert info.value.stage == "gsa"
        assert (tmp_path / "models" / "Poly2222.json").exists()


class TestCli:
    def test_split_fit_evaluate_gsa(self, mini_csv, tmp_path, capsys):
        folds = tmp_path / "folds.json"
        assert main(["split", "--database", str(mini_csv), "--out", str(folds)]) == 0
        model = tmp_path / "p.json"
        assert main(["fit-poly", "--database", str(mini_csv), "--folds", str(folds), "--model", "Poly3333",
                     "--out", str(model)]) == 0
        assert main(["evaluate", "--database", str(mini_csv), "--folds", str(folds), "--model", str(model),
                     "--out", str(tmp_path / "e.json")]) == 0
        row = json.loads((tmp_path / "e.json").read_text())
        assert row["test_mse"] > 0 and row["train_mse"] > 0
        assert main(["gsa", "--model", str(model), "--factor", "h=0:30000", "--factor", "gamma=-5:5",
                     "--factor", "jam=-30:30", "--n", "500", "--n-boot", "50", "--out", str(tmp_path / "g.json")]) == 0
        assert json.loads((tmp_path / "g.json").read_text())["N"] == 500
        assert main(["convergence", "--model", str(model), "--factor", "h=0:30000", "--factor", "gamma=-5:5",
                     "--fixed", "ll=-30", "--fixed", "ul=30", "--schedule", "200", "400", "--n-boot", "50",
                     "--out", str(tmp_path / "c.csv")]) == 0
        assert "slope" in capsys.readouterr().out

    def test_ingest(self, mini_csv, tmp_path):
        assert main(["ingest", "--database", str(mini_csv), "--out", str(tmp_path / "s.json")]) == 0
        assert json.loads((tmp_path / "s.json").read_text())["n_records"] == len(ingest_csv(mini_csv))

    @STALLS
    def test_fit_tanh_and_mlp(self, mini_csv, tmp_path):
        assert main(["fit-tanh", "--database", str(mini_csv), "--n-basis", "1", "--restarts", "2",
                     "--max-iter", "50", "--out", str(tmp_path / "t.json")]) == 0
        assert main(["fit-mlp", "--database", str(mini_csv), "--hidden", "3", "--restarts", "1",
                     "--max-epochs", "20", "--history", str(tmp_path / "h.csv"), "--out", str(tmp_path / "m.json")]) == 0
        assert (tmp_path / "h.csv").read_text().startswith("epoch")

    def test_report_and_audit(self, mini_csv, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"poly_models": ["Poly2222"], "generate": True}))
        out = tmp_path / "run"
        assert main(["report", "--config", str(cfg), "--database", str(mini_csv), "--output-dir", str(out)]) == 0
        assert main(["audit", str(out)]) == 0

    def test_config_error_exit(self, tmp_path, capsys):
        model = tmp_path / "p.json"
        recs = _synthetic_records(np.random.default_rng(2))
        write_csv(recs, tmp_path / "db.csv")
        assert main(["fit-poly", "--database", str(tmp_path / "db.csv"), "--model", "Poly2222", "--out", str(model)]) == 0
        code = main(["gsa", "--model", str(model), "--factor", "h=0:30000", "--factor", "ll=-30:0",
                     "--factor", "ul=0:30", "--fixed", "gamma=0", "--n", "200"])
        assert code == 2
        assert "gsa: CorrelatedFactors" in capsys.readouterr().err

    def test_data_error_exit(self, tmp_path, capsys):
        (tmp_path / "bad.csv").write_text("h_ft,gamma_deg\n1,2\n")
        assert main(["ingest", "--database", str(tmp_path / "bad.csv")]) == 3
        assert main(["ingest", "--database", str(tmp_path / "missing.csv")]) == 3
        assert "ParseError" in capsys.readouterr().err

    def test_numerical_error_exit(self, mini_csv, tmp_path, capsys):
        # four altitude levels cannot support a degree-4 altitude basis
        code = main(["fit-poly", "--database", str(mini_csv), "--model", "Poly4444", "--out", str(tmp_path / "p.json")])
        assert code == 4
        assert "RankDeficient" in capsys.readouterr().err
