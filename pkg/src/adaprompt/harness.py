"""Few-shot experiment protocol: seeded K-per-class splits, dev-set grid
search, micro-F1 evaluation and aggregation over seeds."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .data import Dataset
from .errors import AdaPromptError, AllPointsFailed, InsufficientClassInstances, LengthMismatch
from .prompts import Example, PromptTemplate
from .scoring import SUMMED_LOGIT
from .training import TrainConfig, TrainingLog, predict_prompt, train_head, train_prompt
from .verbalizer import RelationSchema

log = logging.getLogger(__name__)

DEFAULT_SEEDS = (13, 21, 42, 87, 100)
DEFAULT_K_VALUES = (8, 16, 32)
TOY_GRID = ({"lr": 1e-3, "steps": 200}, {"lr": 1e-3, "steps": 500})
EXTERNAL_GRID = tuple({"lr": lr, "epochs": ep} for lr in (1e-5, 3e-5) for ep in (10, 20))
ALL = "all"


def micro_f1(predictions: Sequence[int], golds: Sequence[int], schema: RelationSchema | None = None,
             na_index: int | None = None) -> float:
    """Micro-F1 over non-N/A classes.

    A prediction counts as predicted-positive when it is not N/A, a gold as
    gold-positive when it is not N/A, and a true positive needs an exact
    class match on a positive gold. Without an N/A class every label is
    positive.
    """
    if len(predictions) != len(golds):
        raise LengthMismatch(f"{len(predictions)} predictions vs {len(golds)} golds")
    if schema is not None and na_index is None:
        na_index = schema.na_index
    pred = np.asarray(predictions, dtype=np.int64)
    gold = np.asarray(golds, dtype=np.int64)
    pred_pos = pred != na_index if na_index is not None else np.ones(len(pred), bool)
    gold_pos = gold != na_index if na_index is not None else np.ones(len(gold), bool)
    tp = int(np.sum((pred == gold) & gold_pos))
    n_pred, n_gold = int(pred_pos.sum()), int(gold_pos.sum())
    if tp == 0:
        return 0.0
    precision = tp / n_pred
    recall = tp / n_gold
    return 2 * precision * recall / (precision + recall)


@dataclass
class FewShotSplit:
    k: int | str
    seed: int
    train_ids: list[str]
    dev_ids: list[str]
    test_ids: list[str]

    def to_dict(self) -> dict:
        return asdict(self)


def sample_split(dataset: Dataset, k: int | str, seed: int) -> FewShotSplit:
    """Stratified sample of ``k`` training examples per class.

    Classes are visited in label order and each draws from its own pool
    with one seeded generator, so ``(dataset, k, seed)`` fixes the split.
    ``k="all"`` uses the whole training pool.
    """
    dev_ids = [ex.id for ex in dataset.dev]
    test_ids = [ex.id for ex in dataset.test]
    if k == ALL:
        return FewShotSplit(ALL, seed, [ex.id for ex in dataset.train], dev_ids, test_ids)
    k = int(k)
    if k < 1:
        raise ValueError("k must be at least 1")
    rng = np.random.default_rng(seed)
    pools: dict[str, list[str]] = {label: [] for label in dataset.labels}
    for ex in dataset.train:
        pools.setdefault(ex.relation, []).append(ex.id)
    train_ids = []
    for label, pool in pools.items():
        if len(pool) < k:
            raise InsufficientClassInstances(f"class {label!r} has {len(pool)} training instances, k={k}")
        picked = rng.choice(len(pool), size=k, replace=False)
        train_ids.extend(pool[i] for i in picked)
    return FewShotSplit(k, seed, train_ids, dev_ids, test_ids)


def dedupe_grid(grid: Sequence[dict]) -> list[dict]:
    seen, out = set(), []
    for point in grid:
        key = json.dumps(point, sort_keys=True)
        if key not in seen:
            seen.add(key)
            out.append(dict(point))
    return out


@dataclass
class GridResult:
    best_hparams: dict
    dev_f1: float
    model: object
    scores: list = field(default_factory=list)


def grid_search(split: FewShotSplit, grid: Sequence[dict],
                fit_and_score: Callable[[dict], tuple[float, object]],
                budget: int | None = None) -> GridResult:
    """Train one model per grid point and keep the best dev micro-F1.

    ``fit_and_score(hparams)`` trains on ``split``'s training ids and returns
    ``(dev_f1, model)``. Ties go to the earlier grid point; points that raise
    are logged and skipped. ``budget`` caps the number of points tried.
    """
    points = dedupe_grid(grid)
    if not points:
        raise ValueError("hyper-parameter grid is empty")
    if budget is not None:
        points = points[:budget]
    best = None
    scores = []
    for point in points:
        try:
            dev_f1, model = fit_and_score(point)
        except (AdaPromptError, RuntimeError) as exc:
            log.warning("grid point %s failed on k=%s seed=%s: %s", point, split.k, split.seed, exc)
            scores.append({"hparams": point, "error": str(exc)})
            continue
        scores.append({"hparams": point, "dev_f1": dev_f1})
        if best is None or dev_f1 > best.dev_f1:
            best = GridResult(point, dev_f1, model)
    if best is None:
        raise AllPointsFailed(f"every grid point failed for k={split.k} seed={split.seed}")
    best.scores = scores
    return best


class Method:
    """A trainable relation classifier evaluated by the harness."""

    name = "method"

    def fit(self, train: Sequence[Example], hparams: dict, seed: int, tag: dict):
        raise NotImplementedError

    def predict(self, model, examples: Sequence[Example]) -> list[int]:
        raise NotImplementedError


class PromptMethod(Method):
    """Prompt tuning with label-word scoring and the combined objective."""

    name = "adaprompt"

    def __init__(self, backend_factory, schema: RelationSchema, template: PromptTemplate | None = None,
                 entity_loss: bool = True, lambda_e: float = 1.0, scoring: str = SUMMED_LOGIT,
                 batch_size: int = 16, log_sink: TrainingLog | None = None):
        self.backend_factory = backend_factory
        self.schema = schema
        self.template = template or PromptTemplate()
        self.base = dict(entity_loss=entity_loss, lambda_e=lambda_e, scoring=scoring, batch_size=batch_size)
        self.log_sink = log_sink

    def fit(self, train, hparams, seed, tag):
        config = TrainConfig.from_hparams(hparams, seed=seed, **self.base)
        return train_prompt(self.backend_factory(), self.schema, train, self.template, config,
                            self.log_sink, tag)

    def predict(self, model, examples):
        return predict_prompt(model, examples, self.template)


class HeadMethod(Method):
    """Standard fine-tuning: a fresh linear head over the [CLS] state."""

    name = "head-finetune"

    def __init__(self, backend_factory, schema: RelationSchema, template: PromptTemplate | None = None,
                 batch_size: int = 16, log_sink: TrainingLog | None = None):
        self.backend_factory = backend_factory
        self.schema = schema
        self.template = template or PromptTemplate()
        self.batch_size = batch_size
        self.log_sink = log_sink

    def fit(self, train, hparams, seed, tag):
        config = TrainConfig.from_hparams(hparams, seed=seed, batch_size=self.batch_size, entity_loss=False)
        return train_head(self.backend_factory(), self.schema, train, self.template, config,
                          self.log_sink, tag)

    def predict(self, model, examples):
        return model.predict(examples)


class MajorityMethod(Method):
    """Predicts the most frequent training class (lowest index on ties)."""

    name = "majority"

    def __init__(self, schema: RelationSchema):
        self.schema = schema

    def fit(self, train, hparams, seed, tag):
        counts = np.zeros(len(self.schema), dtype=np.int64)
        for ex in train:
            counts[self.schema.index(ex.relation)] += 1
        return int(np.argmax(counts))

    def predict(self, model, examples):
        return [model] * len(examples)


@dataclass
class SplitResult:
    seed: int
    dev_f1: float
    test_f1: float
    best_hparams: dict


@dataclass
class EvalReport:
    method: str
    k: int | str
    per_split: list[SplitResult] = field(default_factory=list)

    def _values(self, attr):
        return np.array([getattr(r, attr) for r in self.per_split], dtype=np.float64)

    @property
    def mean_dev(self) -> float:
        return float(self._values("dev_f1").mean()) if self.per_split else math.nan

    @property
    def mean_test(self) -> float:
        return float(self._values("test_f1").mean()) if self.per_split else math.nan

    @property
    def std_dev(self) -> float:
        """Population standard deviation over splits."""
        return float(self._values("dev_f1").std()) if self.per_split else math.nan

    @property
    def std_test(self) -> float:
        return float(self._values("test_f1").std()) if self.per_split else math.nan

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "k": self.k,
            "per_split": [asdict(r) for r in self.per_split],
            "mean_dev": self.mean_dev,
            "mean_test": self.mean_test,
            "std_dev": self.std_dev,
            "std_test": self.std_test,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EvalReport":
        return cls(data["method"], data["k"], [SplitResult(**r) for r in data["per_split"]])


def reports_to_json(reports: Sequence[EvalReport]) -> str:
    return json.dumps([r.to_dict() for r in reports], indent=2, sort_keys=True)


def format_table(reports: Sequence[EvalReport]) -> str:
    """Plain-text table: one row per method, a Dev/Test column pair per K."""
    ks = []
    for r in reports:
        if r.k not in ks:
            ks.append(r.k)
    methods = []
    for r in reports:
        if r.method not in methods:
            methods.append(r.method)
    index = {(r.method, r.k): r for r in reports}
    label = lambda k: "Full" if k == ALL else f"K = {k}"
    width = max(len(m) for m in methods + ["Model"])
    head1 = "Model".ljust(width) + "".join(f" | {label(k):^13}" for k in ks)
    head2 = " " * width + "".join(f" | {'Dev':>6} {'Test':>6}" for _ in ks)
    lines = [head1, head2, "-" * len(head1)]
    for m in methods:
        cells = []
        for k in ks:
            r = index.get((m, k))
            cells.append(" |      -      -" if r is None
                         else f" | {100 * r.mean_dev:6.1f} {100 * r.mean_test:6.1f}")
        lines.append(m.ljust(width) + "".join(cells))
    return "\n".join(lines) + "\n"


def run_experiment(dataset: Dataset, k_values: Sequence, seeds: Sequence[int], grid: Sequence[dict],
                   method: Method, schema: RelationSchema, report_path=None, budget: int | None = None,
                   on_split: Callable | None = None) -> list[EvalReport]:
    """Sample, grid-search on dev, evaluate on test, for every K and seed.

    The model trained at the best grid point is the one evaluated on test;
    since training is deterministic given the seed this is the same model a
    retrain would produce. When ``report_path`` is given the reports are
    rewritten after every split, so a failure leaves the finished splits on
    disk.
    """
    by_id = dataset.by_id()
    dev = [by_id[i] for i in (ex.id for ex in dataset.dev)]
    dev_gold = [schema.index(ex.relation) for ex in dev]
    test = list(dataset.test)
    test_gold = [schema.index(ex.relation) for ex in test]
    reports = []
    for k in k_values:
        report = EvalReport(method.name, k)
        reports.append(report)
        split_seeds = seeds[:1] if k == ALL else seeds
        for seed in split_seeds:
            split = sample_split(dataset, k, seed)
            train = [by_id[i] for i in split.train_ids]
            tag = {"method": method.name, "k": k, "seed": seed}

            def fit_and_score(hparams, train=train, seed=seed, tag=tag):
                model = method.fit(train, hparams, seed, {**tag, "hparams": hparams})
                return micro_f1(method.predict(model, dev), dev_gold, schema), model

            result = grid_search(split, grid, fit_and_score, budget)
            test_f1 = micro_f1(method.predict(result.model, test), test_gold, schema)
            report.per_split.append(SplitResult(seed, result.dev_f1, test_f1, result.best_hparams))
            log.info("%s k=%s seed=%s dev=%.4f test=%.4f %s", method.name, k, seed,
                     result.dev_f1, test_f1, result.best_hparams)
            if on_split is not None:
                on_split(split, result)
            if report_path is not None:
                Path(report_path).write_text(reports_to_json(reports))
    return reports
