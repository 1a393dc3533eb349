import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adaprompt.data import Dataset
from adaprompt.errors import AllPointsFailed, InsufficientClassInstances, LengthMismatch
from adaprompt.harness import (
    ALL,
    EvalReport,
    MajorityMethod,
    Method,
    SplitResult,
    dedupe_grid,
    format_table,
    grid_search,
    micro_f1,
    reports_to_json,
    run_experiment,
    sample_split,
)
from adaprompt.prompts import Example
from adaprompt.verbalizer import build_schema

import oracles

LABELS = ["no_relation", "per:title", "per:city_of_death"]


def toy_dataset(per_class=10, dev=2, test=3, labels=LABELS):
    def block(prefix, n):
        return [Example(f"{prefix}-{lab}-{i}", ["a", "b", "c"], (0, 1), (2, 3), lab)
                for lab in labels for i in range(n)]
    return Dataset(block("tr", per_class), block("dv", dev), block("te", test), labels=list(labels))


def test_micro_f1_examples():
    schema = build_schema(["A", "B", "NA"], "NA")
    a, b, na = 0, 1, 2
    assert micro_f1([a, b, b, a], [a, a, b, na], schema) == pytest.approx(4 / 7)
    assert micro_f1([a, b, a], [a, b, a], schema) == 1.0
    assert micro_f1([na, na, na], [a, b, na], schema) == 0.0
    with pytest.raises(LengthMismatch):
        micro_f1([0], [0, 1], schema)


def test_micro_f1_without_na_is_accuracy():
    assert micro_f1([0, 1, 2, 2], [0, 1, 1, 2]) == pytest.approx(0.75)


def micro_f1_oracle_mismatches(n, seed=0):
    rng = np.random.default_rng(seed)
    schema = build_schema(["NA", "A", "B", "C", "D"], "NA")
    mismatches = 0
    for _ in range(n):
        size = int(rng.integers(1, 60))
        preds = rng.integers(0, 5, size).tolist()
        golds = rng.integers(0, 5, size).tolist()
        mismatches += micro_f1(preds, golds, schema) != oracles.micro_f1_bruteforce(preds, golds, 0)
    return mismatches


def test_micro_f1_oracle_small():
    assert micro_f1_oracle_mismatches(100) == 0


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4)), min_size=1, max_size=40), st.randoms())
def test_micro_f1_properties(pairs, rnd):
    preds, golds = [p for p, _ in pairs], [g for _, g in pairs]
    f = micro_f1(preds, golds, na_index=0)
    assert 0.0 <= f <= 1.0
    shuffled = list(pairs)
    rnd.shuffle(shuffled)
    assert micro_f1([p for p, _ in shuffled], [g for _, g in shuffled], na_index=0) == f
    positive = [g for g in golds if g != 0]
    if positive:
        assert micro_f1(positive, positive, na_index=0) == 1.0


def test_sample_split_counts_and_determinism():
    ds = toy_dataset()
    split = sample_split(ds, 2, 7)
    assert len(split.train_ids) == 6
    by_id = ds.by_id()
    assert sorted(by_id[i].relation for i in split.train_ids) == sorted(LABELS * 2)
    assert sample_split(ds, 2, 7) == split
    assert set(split.train_ids).isdisjoint(split.dev_ids) and set(split.dev_ids).isdisjoint(split.test_ids)
    assert sample_split(ds, ALL, 7).train_ids == [e.id for e in ds.train]
    with pytest.raises(InsufficientClassInstances):
        sample_split(ds, 11, 0)


def test_distinct_splits_on_synthetic():
    from adaprompt.synthetic import make_synthetic

    ds, _ = make_synthetic(0, train_per_class=200, dev_per_class=2, test_per_class=2, pretrain_sentences=10)
    sets = [frozenset(sample_split(ds, 8, s).train_ids) for s in range(1, 6)]
    assert len(set(sets)) == 5
    assert all(len(s) == 48 for s in sets)


def fake_split():
    return sample_split(toy_dataset(), 1, 0)


def test_grid_search_rules():
    split = fake_split()
    calls = []

    def fit(point):
        calls.append(point)
        return {1: 0.5, 2: 0.7, 3: 0.7}[point["x"]], point["x"]

    assert grid_search(split, [{"x": 1}], fit).best_hparams == {"x": 1}
    best = grid_search(split, [{"x": 1}, {"x": 2}, {"x": 3}], fit)
    assert best.best_hparams == {"x": 2} and best.model == 2
    calls.clear()
    dup = grid_search(split, [{"x": 3}, {"x": 1}, {"x": 3}], fit)
    assert dup.best_hparams == grid_search(split, dedupe_grid([{"x": 3}, {"x": 1}, {"x": 3}]), fit).best_hparams
    assert calls[:2] == [{"x": 3}, {"x": 1}]
    assert grid_search(split, [{"x": 1}, {"x": 2}, {"x": 3}], fit, budget=1).best_hparams == {"x": 1}


def test_grid_search_skips_failures():
    from adaprompt.errors import NonFiniteLoss

    def fit(point):
        if point["x"] == 1:
            raise NonFiniteLoss("boom")
        return 0.1, None

    assert grid_search(fake_split(), [{"x": 1}, {"x": 2}], fit).best_hparams == {"x": 2}
    with pytest.raises(AllPointsFailed):
        grid_search(fake_split(), [{"x": 1}], fit)


class LrMethod(Method):
    """Predicts ``hparams['c']`` for everything; trivially deterministic."""

    name = "const"

    def fit(self, train, hparams, seed, tag):
        return hparams["c"]

    def predict(self, model, examples):
        return [model] * len(examples)


def test_run_experiment_aggregates(tmp_path):
    ds = toy_dataset()
    schema = ds.schema()
    reports = run_experiment(ds, [1, 2, ALL], [3, 4], [{"c": 0}, {"c": 1}], LrMethod(), schema,
                             report_path=tmp_path / "r.json")
    assert [r.k for r in reports] == [1, 2, ALL]
    assert [len(r.per_split) for r in reports] == [2, 2, 1]
    r = reports[0]
    assert r.per_split[0].best_hparams == {"c": 1}
    dev = [s.dev_f1 for s in r.per_split]
    assert r.mean_dev == pytest.approx(np.mean(dev)) and r.std_dev == pytest.approx(np.std(dev))
    saved = json.loads((tmp_path / "r.json").read_text())
    assert [EvalReport.from_dict(d).to_dict() for d in saved] == [x.to_dict() for x in reports]


def test_single_seed_report():
    ds = toy_dataset()
    (r,) = run_experiment(ds, [2], [9], [{"c": 1}], LrMethod(), ds.schema())
    assert r.mean_test == r.per_split[0].test_f1 and r.std_test == 0.0


def test_partial_report_flushed(tmp_path):
    ds = toy_dataset()

    class Failing(LrMethod):
        def fit(self, train, hparams, seed, tag):
            if seed == 2:
                raise RuntimeError("disk on fire")
            return 1

    with pytest.raises(AllPointsFailed):
        run_experiment(ds, [1], [1, 2], [{"c": 1}], Failing(), ds.schema(), report_path=tmp_path / "r.json")
    saved = json.loads((tmp_path / "r.json").read_text())
    assert len(saved[0]["per_split"]) == 1


def test_majority_and_table():
    ds = toy_dataset()
    schema = ds.schema()
    m = MajorityMethod(schema)
    assert m.fit(ds.train, {}, 0, {}) == 0
    reports = run_experiment(ds, [1, 2], [0], [{}], m, schema)
    text = format_table(reports)
    assert "K = 1" in text and "Dev" in text and "majority" in text
    empty = EvalReport("x", 1)
    assert math.isnan(empty.mean_dev)
    assert json.loads(reports_to_json(reports))[0]["method"] == "majority"
