import json

import pytest

from adaprompt.cli import main
from adaprompt.config import RunConfig
from adaprompt.data import Dataset
from adaprompt.harness import sample_split
from adaprompt.synthetic import make_synthetic

SMALL_RUN = {
    "toy": {"d": 16, "layers": 1, "heads": 2, "max_len": 64},
    "pretrain": {"steps": 20, "batch_size": 16},
    "grid": [{"lr": 0.001, "steps": 4}],
    "k_values": [2],
    "seeds": [1],
    "batch_size": 4,
}


@pytest.fixture
def workspace(tmp_path, monkeypatch):
    monkeypatch.setenv("ADAPROMPT_CACHE", str(tmp_path / "cache"))
    ds, _ = make_synthetic(0, train_per_class=6, dev_per_class=2, test_per_class=2, pretrain_sentences=10)
    ds.save(tmp_path / "data")
    (tmp_path / "run.json").write_text(json.dumps(SMALL_RUN))
    return tmp_path


def run(ws, *args):
    return main(["train", "--config", str(ws / "run.json"), "--dataset", str(ws / "data"), *args])


def test_verbalize(capsys):
    assert main(["verbalize", "--labels", "per:title,no_relation"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out == [{"label": "per:title", "class_index": 0, "words": ["person", "title"]},
                   {"label": "no_relation", "class_index": 1, "words": ["none"]}]


def test_verbalize_collision_is_an_error(capsys):
    assert main(["verbalize", "--labels", "org:founded,org:founded_by"]) != 0
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "duplicate_word_set"


def test_missing_dataset_writes_nothing(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["train", "--dataset", str(tmp_path / "missing"), "--output-dir", str(out)]) != 0
    assert not out.exists()
    assert "error" in json.loads(capsys.readouterr().err)


def test_unknown_config_key_rejected(tmp_path, capsys):
    (tmp_path / "c.json").write_text(json.dumps({"learning_rate": 1}))
    out = tmp_path / "out"
    assert main(["split", "--config", str(tmp_path / "c.json"), "--output-dir", str(out)]) != 0
    assert not out.exists()
    assert json.loads(capsys.readouterr().err)["error"] == "config_error"


def test_flags_override_config(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"template": "copula", "seeds": [1, 2]}))
    cfg = RunConfig.load(tmp_path / "c.json").override(template="relation-between", seeds=None)
    assert cfg.template == "relation-between" and cfg.seeds == [1, 2]


def test_split_matches_direct_call(workspace):
    out = workspace / "splits"
    assert main(["split", "--dataset", str(workspace / "data"), "--k", "2", "--seeds", "13", "21",
                 "--output-dir", str(out)]) == 0
    written = json.loads((out / "splits.json").read_text())
    ds = Dataset.load(workspace / "data")
    assert written == [sample_split(ds, 2, 13).to_dict(), sample_split(ds, 2, 21).to_dict()]


def test_train_then_eval(workspace, capsys):
    out = workspace / "out"
    assert run(workspace, "--output-dir", str(out)) == 0
    for name in ("report.json", "report.txt", "train_log.jsonl", "config.json"):
        assert (out / name).exists()
    report = json.loads((out / "report.json").read_text())
    assert report[0]["method"] == "adaprompt" and len(report[0]["per_split"]) == 1
    log = [json.loads(x) for x in (out / "train_log.jsonl").read_text().splitlines()]
    assert len(log) == 4 and all(r["l_e"] > 0 for r in log)
    assert {"step", "l_r", "l_e", "total"} <= set(log[0])
    ckpt = out / "checkpoints" / "k2_seed1"
    ev = workspace / "eval"
    assert main(["eval", "--dataset", str(workspace / "data"), "--checkpoint", str(ckpt),
                 "--output-dir", str(ev), "--scoring", "marginal"]) == 0
    scores = [json.loads(x) for x in (ev / "scores.jsonl").read_text().splitlines()]
    assert len(scores) == 12 and set(scores[0]) == {"id", "probs", "argmax"}
    assert abs(sum(scores[0]["probs"]) - 1) < 1e-6
    metrics = json.loads((ev / "metrics.json").read_text())
    assert 0 <= metrics["micro_f1"] <= 1


def test_no_entity_loss_flag(workspace):
    out = workspace / "ablate"
    assert run(workspace, "--no-entity-loss", "--template", "relation-between", "--output-dir", str(out)) == 0
    log = [json.loads(x) for x in (out / "train_log.jsonl").read_text().splitlines()]
    assert log and all(r["l_e"] == 0.0 for r in log)


def test_head_and_majority_methods(workspace):
    for method in ("head-finetune", "majority"):
        out = workspace / method
        assert run(workspace, "--method", method, "--output-dir", str(out)) == 0
        ckpt = out / "checkpoints" / "k2_seed1"
        assert main(["eval", "--dataset", str(workspace / "data"), "--checkpoint", str(ckpt),
                     "--output-dir", str(out / "eval")]) == 0


def test_pretrain_and_synth(tmp_path, capsys):
    assert main(["synth", "--output", str(tmp_path / "syn"), "--train-per-class", "3", "--dev-per-class", "1",
                 "--test-per-class", "1"]) == 0
    assert (tmp_path / "syn" / "corpus.txt").exists()
    assert main(["pretrain", "--corpus", str(tmp_path / "syn" / "corpus.txt"), "--output", str(tmp_path / "m"),
                 "--steps", "3", "--d", "8", "--max-len", "64"]) == 0
    assert (tmp_path / "m" / "params.pt").exists()
