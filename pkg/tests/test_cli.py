import re

import numpy as np
import pytest

from difm import model as M
from difm.cli import MODEL_DEFAULTS, TRAIN_DEFAULTS, _load, main, read_config, score_records
from difm.data import build_dictionary, make_schema, read_records, write_records
from difm.metrics import read_metrics
from difm.synth import describe

SMALL = ["--set", "model.k=4", "--set", "model.T=6", "--set", "train.max_epochs=2",
         "--set", "train.patience=1", "--set", "train.learning_rate=0.01", "--quiet"]


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "d.jsonl"
    assert main(["gen-data", "--seed", "3", "--out", str(data), "--set", "gen.n_users=400",
                 "--set", "gen.fraud_rate=0.2", "--set", "gen.events_max=6", "--set", "gen.vocab_sizes=12"]) == 0
    return root, data


@pytest.fixture(scope="module")
def run(dataset):
    root, data = dataset
    out = root / "run"
    assert main(["train", "--seed", "1", "--data", str(data), "--schema", str(root / "d.schema.json"),
                 "--out", str(out), *SMALL]) == 0
    return out


class TestGenData:
    def test_missing_seed(self, tmp_path, capsys):
        assert main(["gen-data", "--out", str(tmp_path / "x.jsonl")]) == 2
        assert "seed" in capsys.readouterr().err

    def test_config_file_twice_identical(self, tmp_path):
        conf = tmp_path / "gen.txt"
        conf.write_text("seed = 9\ngen.n_users = 120\ngen.events_max = 5\n")
        for name in ("a", "b"):
            assert main(["gen-data", "--config", str(conf), "--out", str(tmp_path / f"{name}.jsonl")]) == 0
        assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()

    def test_summary_matches_describe(self, tmp_path, capsys):
        main(["gen-data", "--seed", "2", "--out", str(tmp_path / "s.jsonl"), "--set", "gen.n_users=80"])
        row = capsys.readouterr().out.splitlines()[-1].split()
        d = describe(tmp_path / "s.jsonl", n_fields=8)
        assert [int(v) for v in row[1:]] == [d["#pos"], d["#neg"], d["#fields"], d["#events"]]

    def test_bad_option(self, tmp_path):
        assert main(["gen-data", "--seed", "1", "--out", str(tmp_path / "x.jsonl"), "--set", "gen.colour=3"]) == 2


class TestTrain:
    def test_run_directory(self, run):
        for name in ("model.difm", "dictionary.json", "config.txt", "train.log", "history.tsv", "metrics.txt"):
            assert (run / name).exists(), name
        cfg = read_config(run / "config.txt")
        assert cfg["seed"] == 1 and cfg["model.k"] == 4
        assert len((run / "history.tsv").read_text().splitlines()) >= 2

    def test_default_config(self):
        assert MODEL_DEFAULTS["model.k"] == 64 and MODEL_DEFAULTS["model.T"] == 20
        assert TRAIN_DEFAULTS["train.batch_size"] == 256 and TRAIN_DEFAULTS["train.learning_rate"] == 0.0005

    def test_rerun_from_resolved_config(self, run, dataset, tmp_path):
        out = tmp_path / "again"
        assert main(["train", "--config", str(run / "config.txt"), "--out", str(out), "--quiet"]) == 0
        assert (out / "model.difm").read_bytes() == (run / "model.difm").read_bytes()

    @pytest.mark.parametrize("variant", ["alpha", "beta", "same"])
    def test_variant_flag(self, dataset, tmp_path, variant):
        root, data = dataset
        out = tmp_path / variant
        assert main(["train", "--seed", "1", "--data", str(data), "--schema", str(root / "d.schema.json"),
                     "--out", str(out), "--variant", variant, *SMALL]) == 0
        config, _, _ = M.load_model(out / "model.difm")
        assert config.variant == variant

    def test_missing_seed(self, dataset, tmp_path):
        root, data = dataset
        assert main(["train", "--data", str(data), "--schema", str(root / "d.schema.json"),
                     "--out", str(tmp_path / "r")]) == 2

    def test_bad_data_exit_code(self, dataset, tmp_path):
        root, _ = dataset
        bad = tmp_path / "bad.jsonl"
        bad.write_text('{"user_id": "x", "label": 1, "events": []}\n' * 3)
        assert main(["train", "--seed", "1", "--data", str(bad), "--schema", str(root / "d.schema.json"),
                     "--out", str(tmp_path / "r"), *SMALL]) == 3


class TestEvalPredict:
    def test_eval_and_max_fpr_one(self, run, dataset, capsys):
        _, data = dataset
        assert main(["eval", "--model", str(run / "model.difm"), "--data", str(data), "--max-fpr", "1.0"]) == 0
        vals = dict(line.split("=", 1) for line in capsys.readouterr().out.splitlines())
        assert float(vals["pauc_at_1.0"]) == pytest.approx(float(vals["auc"]), abs=1e-12)

    def test_predict_matches_eval(self, run, dataset, tmp_path):
        _, data = dataset
        scores = tmp_path / "scores.tsv"
        assert main(["predict", "--model", str(run / "model.difm"), "--data", str(data), "--out", str(scores)]) == 0
        lines = scores.read_text().splitlines()
        y = np.array([float(ln.split("\t")[1]) for ln in lines])
        assert np.all((y > 0) & (y < 1))
        again = tmp_path / "again.tsv"
        main(["predict", "--model", str(run / "model.difm"), "--data", str(data), "--out", str(again)])
        assert again.read_bytes() == scores.read_bytes()
        d, cfg, p = _load(run / "model.difm")
        internal = np.array([s for _, _, s in score_records(read_records(data), d, p, cfg)])
        assert internal.tobytes() == y.tobytes()

    def test_five_model_aggregation(self, run, dataset, capsys):
        _, data = dataset
        path = str(run / "model.difm")
        assert main(["eval", "--runs", *[path] * 5, "--data", str(data)]) == 0
        out = capsys.readouterr().out
        assert re.search(r"summary=\d\.\d{4}±0\.0000", out)

    def test_missing_dictionary(self, run, dataset, tmp_path):
        _, data = dataset
        lone = tmp_path / "m.difm"
        lone.write_bytes((run / "model.difm").read_bytes())
        assert main(["predict", "--model", str(lone), "--data", str(data)]) == 3

    def test_non_finite_model_exit_code(self, run, dataset, tmp_path):
        _, data = dataset
        config, params, header = M.load_model(run / "model.difm")
        params = {k: v.copy() for k, v in params.items()}
        params["emb"][:] = np.inf
        broken = tmp_path / "model.difm"
        M.save_model(broken, config, params, header["dictionary_sha256"])
        (tmp_path / "dictionary.json").write_bytes((run / "dictionary.json").read_bytes())
        assert main(["predict", "--model", str(broken), "--data", str(data)]) == 4


def test_perfect_model_scores_one(tmp_path):
    schema = make_schema([("device", "categorical"), ("city", "categorical")])
    recs = [{"user_id": f"u{i}", "label": int(i % 4 == 0),
             "events": [{"device": "bad" if i % 4 == 0 else f"ok{i % 3}", "city": f"c{i % 5}"}] * 2}
            for i in range(200)]
    write_records(recs, tmp_path / "p.jsonl")
    d = build_dictionary(recs, schema)
    d.save(tmp_path / "dictionary.json")
    cfg = M.ModelConfig(n_fields=2, vocab_size=d.size, k=4, T=4)
    params = M.init_params(cfg, np.random.default_rng(0))
    params["mlp.W_out"][:] = 0.0
    params["wide.w"][d.index_of(0, "bad")] = 5.0
    params["wide.b"][0] = -3.0
    M.save_model(tmp_path / "model.difm", cfg, params, d.digest())
    assert main(["eval", "--model", str(tmp_path / "model.difm"), "--data", str(tmp_path / "p.jsonl"),
                 "--out", str(tmp_path / "m.txt")]) == 0
    assert float(read_metrics(tmp_path / "m.txt")["pauc_at_0.01"]) == 1.0


class TestExplain:
    def test_top_k_layout(self, run, dataset, tmp_path):
        _, data = dataset
        out = tmp_path / "x.txt"
        assert main(["explain", "--model", str(run / "model.difm"), "--data", str(data), "--top-k", "4",
                     "--out", str(out)]) == 0
        rows = [ln.split("\t") for ln in out.read_text().splitlines() if not ln.startswith(("#", "["))]
        for field in {r[0] for r in rows}:
            mine = [r for r in rows if r[0] == field]
            assert sum(r[1] == "high" for r in mine) == 4
            assert sum(r[1] == "low" for r in mine) == 4
        again = tmp_path / "y.txt"
        main(["explain", "--model", str(run / "model.difm"), "--data", str(data), "--out", str(again)])
        assert again.read_bytes() == out.read_bytes()

    def test_sample_mode(self, run, dataset, tmp_path):
        _, data = dataset
        rec = next(r for r in read_records(data) if len(r["events"]) >= 3)
        out = tmp_path / "s.txt"
        assert main(["explain", "--model", str(run / "model.difm"), "--data", str(data),
                     "--sample", rec["user_id"], "--out", str(out)]) == 0
        lines = out.read_text().splitlines()
        assert sum(ln.startswith("field\t") for ln in lines) == 8
        weighted = [ln for ln in lines if ln.startswith("event\t") and ln.split("\t")[2] != "current"]
        assert len(weighted) == min(len(rec["events"]), 6) - 1

    def test_unknown_user(self, run, dataset):
        _, data = dataset
        assert main(["explain", "--model", str(run / "model.difm"), "--data", str(data),
                     "--sample", "nobody"]) == 3


def test_unlabeled_data_reports_support_only(run, dataset, tmp_path):
    _, data = dataset
    unlabeled = tmp_path / "u.jsonl"
    write_records([{k: v for k, v in r.items() if k != "label"} for r in read_records(data)], unlabeled)
    out = tmp_path / "x.txt"
    assert main(["explain", "--model", str(run / "model.difm"), "--data", str(unlabeled), "--out", str(out)]) == 0
    rows = [ln.split("\t") for ln in out.read_text().splitlines() if not ln.startswith(("#", "["))]
    assert rows and all("/" not in r[-1] for r in rows)
