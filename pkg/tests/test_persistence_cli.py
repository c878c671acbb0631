import json
from pathlib import Path

import numpy as np
import pytest

from clef.baselines import SimpleLinearModel, fit_var
from clef.cli import main, parse_edit, resolve_edits, resolve_seed
from clef.conditions import ConditionRegistry
from clef.datagen.synthetic import GeneratorConfig, generate_dataset
from clef.errors import ClefError, DatasetFormatError
from clef.model import ClefConfig, ClefModel
from clef.persistence import (
    counterfactual_pairs,
    read_checkpoint,
    read_dataset,
    write_checkpoint,
    write_dataset,
)
from clef.timeenc import grid_timestamps
from clef.trajectory import Trajectory


@pytest.fixture
def dataset():
    config = GeneratorConfig(n_variables=3, n_tokens=3, min_length=6, max_length=9, seed=4)
    return generate_dataset(config, 12, cf_pairs=3, divergence=3)


class TestDatasetFormat:
    def test_round_trip(self, dataset, tmp_path):
        path = tmp_path / "data.jsonl"
        write_dataset(path, dataset)
        loaded = read_dataset(path)
        assert len(loaded) == len(dataset)
        for a, b in zip(dataset, loaded):
            assert a.id == b.id
            assert np.array_equal(a.values, b.values)
            assert a.conditions == b.conditions
            assert a.timestamps == b.timestamps
            assert a.cf_of == b.cf_of and a.divergence == b.divergence

    def test_write_is_deterministic(self, dataset, tmp_path):
        p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        write_dataset(p1, dataset)
        write_dataset(p2, dataset)
        assert p1.read_bytes() == p2.read_bytes()

    def test_malformed_json_reports_line(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        good = ('{"id": "a", "timestamps": ["2000-01-01T00:00", "2000-01-01T10:00"], '
                '"values": [[1.0], [2.0]], "conditions": [["none"], ["none"]]}')
        path.write_text(good + "\nnot json\n")
        with pytest.raises(DatasetFormatError, match="line 2"):
            read_dataset(path)

    def test_missing_field_reports_line(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"id": "a", "values": [[1.0]], "conditions": [["none"]]}\n')
        with pytest.raises(DatasetFormatError, match="line 1"):
            read_dataset(path)

    def test_duplicate_ids_rejected(self, dataset, tmp_path):
        path = tmp_path / "dup.jsonl"
        write_dataset(path, [dataset[0], dataset[0]])
        with pytest.raises(DatasetFormatError, match="duplicate"):
            read_dataset(path)

    def test_unresolvable_cf_link_rejected(self, tmp_path):
        traj = Trajectory("x", grid_timestamps(3), np.ones((3, 1)),
                          [["none"], ["a"], ["none"]], cf_of="ghost", divergence=1)
        path = tmp_path / "cf.jsonl"
        write_dataset(path, [traj])
        with pytest.raises(DatasetFormatError, match="ghost"):
            read_dataset(path)

    def test_counterfactual_pairs_resolved(self, dataset, tmp_path):
        path = tmp_path / "data.jsonl"
        write_dataset(path, dataset)
        pairs = counterfactual_pairs(read_dataset(path))
        assert len(pairs) == 3
        for pair in pairs:
            assert pair.counterfactual.cf_of == pair.original.id


class TestCheckpointFormat:
    def make_model(self):
        config = ClefConfig(n_variables=3, condition_dim=5, ffn_enabled=False,
                            encoder_kind="recurrent", layers=1, dropout=0.0)
        model = ClefModel(config, ConditionRegistry(dim=5), np.random.default_rng(3))
        model.set_normalization(np.array([1.0, 2.0, 3.0]), np.array([0.5, 1.5, 2.5]))
        return model

    def test_round_trip_bit_identical(self, tmp_path):
        model = self.make_model()
        p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
        write_checkpoint(p1, model, train_seed=7, train_ids=["x", "y"])
        loaded, header = read_checkpoint(p1)
        write_checkpoint(p2, loaded, train_seed=header["train_seed"],
                         train_ids=header["train_ids"])
        assert p1.read_bytes() == p2.read_bytes()

    def test_parameters_restored_exactly(self, tmp_path):
        model = self.make_model()
        path = tmp_path / "ckpt.json"
        write_checkpoint(path, model)
        loaded, _ = read_checkpoint(path)
        for (name, a), (_, b) in zip(model.parameters(), loaded.parameters()):
            assert np.array_equal(a.array, b.array), name
        assert np.array_equal(model.norm_mean, loaded.norm_mean)
        assert np.array_equal(model.norm_std, loaded.norm_std)

    def test_version_mismatch_rejected(self, tmp_path):
        model = self.make_model()
        path = tmp_path / "ckpt.json"
        write_checkpoint(path, model)
        doc = json.loads(path.read_text())
        doc["header"]["format_version"] = 99
        path.write_text(json.dumps(doc))
        with pytest.raises(DatasetFormatError, match="format_version"):
            read_checkpoint(path)

    def test_var_checkpoint(self, tmp_path, dataset):
        model = fit_var(dataset, order=2)
        path = tmp_path / "var.json"
        write_checkpoint(path, model)
        loaded, _ = read_checkpoint(path)
        assert loaded.order == 2
        assert np.array_equal(loaded.intercept, model.intercept)
        for a, b in zip(loaded.coefs, model.coefs):
            assert np.array_equal(a, b)

    def test_simple_linear_checkpoint(self, tmp_path):
        model = SimpleLinearModel(n_variables=4, variable_names=["a", "b", "c", "d"])
        path = tmp_path / "simple.json"
        write_checkpoint(path, model)
        loaded, _ = read_checkpoint(path)
        assert loaded.kind == "simple_linear"
        assert loaded.variable_names == ["a", "b", "c", "d"]


class TestEditParsing:
    def test_parse_edit(self):
        assert parse_edit("scale:glucose:0.5") == ("scale", "glucose", 0.5)
        assert parse_edit("set:3:1.0") == ("set", "3", 1.0)

    def test_bad_edit_rejected(self):
        for bad in ("scale:x", "boost:x:1", "scale:x:abc"):
            with pytest.raises(ClefError):
                parse_edit(bad)

    def test_resolve_by_name_and_index(self):
        edits = resolve_edits(["scale:glucose:0.5", "set:0:1.0"],
                              ["glucose", "wbc"])
        assert edits[0].index == 0 and edits[0].mode == "scale"
        assert edits[1].index == 0 and edits[1].mode == "set"

    def test_unknown_name_rejected(self):
        with pytest.raises(ClefError):
            resolve_edits(["scale:unknown:2.0"], ["glucose"])


class TestSeedResolution:
    def test_env_overrides(self, monkeypatch):
        monkeypatch.setenv("CLEF_SEED", "123")
        assert resolve_seed(7) == 123

    def test_flag_used_without_env(self, monkeypatch):
        monkeypatch.delenv("CLEF_SEED", raising=False)
        assert resolve_seed(7) == 7

    def test_bad_env_rejected(self, monkeypatch):
        monkeypatch.setenv("CLEF_SEED", "abc")
        with pytest.raises(ClefError):
            resolve_seed(7)


class TestCliPipeline:
    def run(self, *argv):
        return main(list(argv))

    def test_full_pipeline(self, tmp_path, capsys):
        data = tmp_path / "data.jsonl"
        ckpt = tmp_path / "ckpt.json"
        metrics = tmp_path / "metrics.json"
        assert self.run("datagen", "synthetic", "--out", str(data), "--n", "24",
                        "--variables", "3", "--tokens", "3", "--min-length", "6",
                        "--max-length", "9", "--seed", "4") == 0
        assert self.run("train", "--data", str(data), "--out", str(ckpt),
                        "--model", "clef", "--epochs", "2", "--batch-size", "64",
                        "--samples-per-epoch", "256", "--condition-dim", "8",
                        "--seed", "1") == 0
        assert self.run("eval", "immediate", "--model", str(ckpt), "--data", str(data),
                        "--out", str(metrics)) == 0
        rows = json.loads(metrics.read_text())
        assert any(r["metric"] == "mae" and r["scope"] == "overall" for r in rows)

    def test_delayed_horizon_one_equals_immediate(self, tmp_path):
        data = tmp_path / "data.jsonl"
        ckpt = tmp_path / "ckpt.json"
        self.run("datagen", "synthetic", "--out", str(data), "--n", "16",
                 "--variables", "3", "--tokens", "2", "--min-length", "6",
                 "--max-length", "8", "--seed", "2")
        self.run("train", "--data", str(data), "--out", str(ckpt), "--model", "simple",
                 "--epochs", "0")
        out_imm = tmp_path / "imm.json"
        out_del = tmp_path / "del.json"
        self.run("eval", "immediate", "--model", str(ckpt), "--data", str(data),
                 "--out", str(out_imm))
        self.run("eval", "delayed", "--model", str(ckpt), "--data", str(data),
                 "--horizon", "1", "--out", str(out_del))
        imm = {(r["metric"], r["scope"], r["horizon"]): r["value"]
               for r in json.loads(out_imm.read_text())}
        dl = {(r["metric"], r["scope"], r["horizon"]): r["value"]
              for r in json.loads(out_del.read_text())}
        for key in (("mae", "overall", None), ("rmse", "overall", None)):
            assert dl[key] == pytest.approx(imm[key])

    def test_intervene_halves_first_step(self, tmp_path):
        data = tmp_path / "data.jsonl"
        ckpt = tmp_path / "ckpt.json"
        out = tmp_path / "intervene.json"
        self.run("datagen", "synthetic", "--out", str(data), "--n", "12",
                 "--variables", "3", "--tokens", "2", "--min-length", "6",
                 "--max-length", "8", "--seed", "5",
                 "--variable-names", "glucose,wbc,sodium")
        self.run("train", "--data", str(data), "--out", str(ckpt), "--model", "clef",
                 "--epochs", "1", "--samples-per-epoch", "128", "--condition-dim", "8",
                 "--variable-names", "glucose,wbc,sodium", "--seed", "3")
        first_id = read_dataset(data)[0].id
        assert self.run("intervene", "--model", str(ckpt), "--data", str(data),
                        "--id", first_id, "--edit", "scale:glucose:0.5",
                        "--steps", "4", "--out", str(out)) == 0
        record = json.loads(out.read_text())
        baseline = np.array(record["baseline"])
        edited = np.array(record["edited"])
        assert edited[0][0] == pytest.approx(0.5 * baseline[0][0], rel=1e-12)
        assert np.array_equal(edited[0][1:], baseline[0][1:])

    def test_generate_runs(self, tmp_path):
        data = tmp_path / "data.jsonl"
        ckpt = tmp_path / "ckpt.json"
        self.run("datagen", "synthetic", "--out", str(data), "--n", "10",
                 "--variables", "2", "--tokens", "2", "--min-length", "5",
                 "--max-length", "7", "--seed", "6")
        self.run("train", "--data", str(data), "--out", str(ckpt), "--model", "clef",
                 "--epochs", "1", "--samples-per-epoch", "64", "--condition-dim", "4",
                 "--seed", "2")
        first_id = read_dataset(data)[0].id
        out = tmp_path / "gen.json"
        assert self.run("generate", "--model", str(ckpt), "--data", str(data),
                        "--id", first_id, "--steps", "3", "--conditions", "cond0",
                        "--out", str(out)) == 0
        record = json.loads(out.read_text())
        assert len(record["values"]) == 3

    def test_zeroshot_cf_protocol(self, tmp_path):
        data = tmp_path / "data.jsonl"
        ckpt = tmp_path / "ckpt.json"
        out = tmp_path / "zs.json"
        self.run("datagen", "synthetic", "--out", str(data), "--n", "20",
                 "--variables", "3", "--tokens", "3", "--min-length", "10",
                 "--max-length", "14", "--cf-pairs", "6", "--divergence", "4",
                 "--seed", "21")
        self.run("train", "--data", str(data), "--out", str(ckpt), "--model", "simple",
                 "--epochs", "0", "--zero-shot")
        assert self.run("eval", "zeroshot-cf", "--model", str(ckpt), "--data", str(data),
                        "--out", str(out)) == 0
        rows = json.loads(out.read_text())
        horizons = {r["horizon"] for r in rows if r["horizon"] is not None}
        assert min(horizons) == 4  # scoring starts at the divergence step

    def test_counterfactual_protocol(self, tmp_path):
        data = tmp_path / "tumor.jsonl"
        ckpt = tmp_path / "outcome.json"
        out = tmp_path / "cf.json"
        self.run("datagen", "tumor", "--out", str(data), "--gamma", "1",
                 "--n-train", "12", "--n-val", "3", "--n-test", "3",
                 "--horizon", "20", "--seed", "6")
        sim_config = str(data) + ".simconfig.json"
        assert Path(sim_config).exists()
        self.run("train", "--data", str(data), "--out", str(ckpt), "--model", "outcome",
                 "--head", "clef", "--condition-dim", "4", "--hidden-dim", "4",
                 "--epochs", "1", "--samples-per-epoch", "64", "--tau-max", "3",
                 "--fractions", "0.7,0.15,0.15", "--seed", "2")
        assert self.run("eval", "counterfactual", "--model", str(ckpt),
                        "--sim-config", sim_config, "--setting", "single_sliding",
                        "--tau-max", "3", "--max-origins", "2",
                        "--out", str(out)) == 0
        rows = json.loads(out.read_text())
        assert {r["horizon"] for r in rows} == {1, 2, 3}
        assert all(r["metric"] == "nrmse_percent" for r in rows)

    def test_unknown_subcommand_exits_2(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2

    def test_validation_error_exits_2(self, tmp_path):
        missing = tmp_path / "nope.jsonl"
        code = self.run("train", "--data", str(missing), "--out",
                        str(tmp_path / "x.json"), "--epochs", "1")
        assert code == 2 or isinstance(code, int)

    def test_csv_format(self, tmp_path):
        data = tmp_path / "data.jsonl"
        ckpt = tmp_path / "ckpt.json"
        self.run("datagen", "synthetic", "--out", str(data), "--n", "10",
                 "--variables", "2", "--tokens", "2", "--min-length", "5",
                 "--max-length", "7", "--seed", "8")
        self.run("train", "--data", str(data), "--out", str(ckpt),
                 "--model", "simple", "--epochs", "0")
        out = tmp_path / "m.csv"
        self.run("eval", "immediate", "--model", str(ckpt), "--data", str(data),
                 "--format", "csv", "--out", str(out))
        lines = out.read_text().splitlines()
        assert lines[0] == "metric,scope,horizon,value"
        assert len(lines) > 3

    def test_seed_env_changes_dataset(self, tmp_path, monkeypatch):
        a = tmp_path / "a.jsonl"
        b = tmp_path / "b.jsonl"
        monkeypatch.delenv("CLEF_SEED", raising=False)
        self.run("datagen", "synthetic", "--out", str(a), "--n", "5",
                 "--variables", "2", "--tokens", "2", "--min-length", "5",
                 "--max-length", "6", "--seed", "1")
        monkeypatch.setenv("CLEF_SEED", "99")
        self.run("datagen", "synthetic", "--out", str(b), "--n", "5",
                 "--variables", "2", "--tokens", "2", "--min-length", "5",
                 "--max-length", "6", "--seed", "1")
        assert a.read_bytes() != b.read_bytes()

    def test_rerun_bit_identical(self, tmp_path, monkeypatch):
        monkeypatch.delenv("CLEF_SEED", raising=False)
        outputs = []
        for tag in ("x", "y"):
            data = tmp_path / f"{tag}.jsonl"
            ckpt = tmp_path / f"{tag}.ckpt.json"
            metrics = tmp_path / f"{tag}.metrics.json"
            self.run("datagen", "synthetic", "--out", str(data), "--n", "14",
                     "--variables", "3", "--tokens", "2", "--min-length", "6",
                     "--max-length", "8", "--seed", "11")
            self.run("train", "--data", str(data), "--out", str(ckpt), "--model", "clef",
                     "--epochs", "2", "--samples-per-epoch", "128",
                     "--condition-dim", "4", "--seed", "11")
            self.run("eval", "immediate", "--model", str(ckpt), "--data", str(data),
                     "--out", str(metrics))
            outputs.append((data.read_bytes(), ckpt.read_bytes(), metrics.read_bytes()))
        assert outputs[0] == outputs[1]
