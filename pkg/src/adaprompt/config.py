"""Run configuration: a JSON file with command-line overrides."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

from .backend.base import ModelBackend
from .backend.toy import ToyBackend, ToyMLMConfig, pretrain_toy
from .backend.vocab import DEFAULT_MARKERS
from .errors import ConfigError, UnknownBackend
from .harness import ALL, DEFAULT_K_VALUES, DEFAULT_SEEDS, EXTERNAL_GRID, TOY_GRID
from .prompts import PromptTemplate, TemplateForm
from .scoring import SCORING_MODES, SUMMED_LOGIT
from .verbalizer import RuleConfig

log = logging.getLogger(__name__)

CACHE_ENV = "ADAPROMPT_CACHE"
METHODS = ("adaprompt", "head-finetune", "majority")
PRETRAIN_KEYS = {"steps", "lr", "batch_size", "corpus"}
TEMPLATE_WORDS = ("the", "relation", "between", "and", "is", ".")


def cache_dir() -> Path:
    return Path(os.environ.get(CACHE_ENV, Path.home() / ".cache" / "adaprompt"))


@dataclass
class RunConfig:
    dataset: str | None = None
    rules: str | None = None
    na_label: str | None = "no_relation"
    template: str = "copula"
    markers: list = field(default_factory=lambda: list(DEFAULT_MARKERS))
    scoring: str = SUMMED_LOGIT
    method: str = "adaprompt"
    k_values: list = field(default_factory=lambda: list(DEFAULT_K_VALUES))
    seeds: list = field(default_factory=lambda: list(DEFAULT_SEEDS))
    grid: list | None = None
    budget: int | None = None
    backend: str = "toy"
    backend_checkpoint: str | None = None
    toy: dict = field(default_factory=dict)
    pretrain: dict = field(default_factory=dict)
    entity_loss: bool = True
    lambda_e: float = 1.0
    batch_size: int = 16
    output_dir: str = "runs/default"

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        return cls(**data)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path) as f:
                data = json.load(f)
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        return cls.from_dict(data)

    def override(self, **values) -> "RunConfig":
        updates = {k: v for k, v in values.items() if v is not None}
        return dataclasses.replace(self, **updates)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    # validation -----------------------------------------------------------
    def validate(self, need_dataset: bool = True) -> "RunConfig":
        if need_dataset:
            if not self.dataset:
                raise ConfigError("no dataset path given")
            if not Path(self.dataset).is_dir():
                raise ConfigError(f"dataset directory {self.dataset} does not exist")
        if self.rules is not None and not Path(self.rules).is_file():
            raise ConfigError(f"rule config {self.rules} does not exist")
        TemplateForm.from_flag(self.template)
        if len(self.markers) != 4 or len(set(self.markers)) != 4:
            raise ConfigError("markers must be four distinct strings")
        if self.scoring not in SCORING_MODES:
            raise ConfigError(f"scoring must be one of {SCORING_MODES}")
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}")
        if not self.k_values:
            raise ConfigError("k_values is empty")
        for k in self.k_values:
            if k != ALL and (not isinstance(k, int) or k < 1):
                raise ConfigError(f"invalid k {k!r}; use a positive integer or 'all'")
        if not self.seeds or not all(isinstance(s, int) for s in self.seeds):
            raise ConfigError("seeds must be a non-empty list of integers")
        if self.grid is not None:
            if not self.grid:
                raise ConfigError("grid is empty")
            for point in self.grid:
                if not isinstance(point, dict) or "lr" not in point or not ({"steps", "epochs"} & set(point)):
                    raise ConfigError(f"grid point {point!r} needs lr and steps or epochs")
                if set(point) - {"lr", "steps", "epochs"}:
                    raise ConfigError(f"grid point {point!r} has unknown keys")
        if self.backend != "toy" and not self.backend.startswith("external:"):
            raise UnknownBackend(f"backend must be 'toy' or 'external:<adapter>', got {self.backend!r}")
        if self.backend.startswith("external:") and not self.backend_checkpoint:
            raise ConfigError("external backends need backend_checkpoint (a model directory)")
        if self.backend_checkpoint is not None and not Path(self.backend_checkpoint).is_dir():
            raise ConfigError(f"backend checkpoint {self.backend_checkpoint} does not exist")
        if set(self.pretrain) - PRETRAIN_KEYS:
            raise ConfigError(f"unknown pretrain keys: {sorted(set(self.pretrain) - PRETRAIN_KEYS)}")
        if self.pretrain.get("corpus") and not Path(self.pretrain["corpus"]).is_file():
            raise ConfigError(f"pretraining corpus {self.pretrain['corpus']} does not exist")
        try:
            ToyMLMConfig(**self.toy)
        except TypeError as exc:
            raise ConfigError(f"toy config: {exc}") from None
        if self.lambda_e < 0:
            raise ConfigError("lambda_e must be non-negative")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        return self

    # derived objects ------------------------------------------------------
    def prompt_template(self) -> PromptTemplate:
        return PromptTemplate(TemplateForm.from_flag(self.template), tuple(self.markers))

    def rule_config(self) -> RuleConfig:
        return RuleConfig.load(self.rules) if self.rules else RuleConfig()

    def hparam_grid(self) -> list[dict]:
        if self.grid is not None:
            return [dict(p) for p in self.grid]
        return [dict(p) for p in (TOY_GRID if self.backend == "toy" else EXTERNAL_GRID)]


def read_corpus(path) -> list[list[str]]:
    with open(path) as f:
        return [line.split() for line in f if line.strip()]


def build_backend(config: RunConfig, corpus: list[list[str]] | None = None,
                  extra_words=()) -> ModelBackend:
    """Backend named by the config.

    A toy backend without a checkpoint is pre-trained on ``corpus`` and
    cached under ``$ADAPROMPT_CACHE`` keyed by corpus and settings.
    """
    markers = tuple(config.markers)
    if config.backend.startswith("external:"):
        from .backend.hf import load_external

        return load_external(config.backend.split(":", 1)[1], config.backend_checkpoint, markers=markers)
    if config.backend_checkpoint:
        return ToyBackend.load(config.backend_checkpoint)
    if config.pretrain.get("corpus"):
        corpus = read_corpus(config.pretrain["corpus"])
    if corpus is None:
        raise ConfigError("toy backend needs a checkpoint or a pre-training corpus")
    toy = ToyMLMConfig(**config.toy)
    settings = {k: v for k, v in config.pretrain.items() if k != "corpus"}
    steps = settings.pop("steps", 500)
    words = sorted(set(extra_words) | set(TEMPLATE_WORDS))
    key = hashlib.sha256(json.dumps(
        [corpus, words, dataclasses.asdict(toy), steps, settings, markers]).encode()).hexdigest()[:16]
    target = cache_dir() / f"toy-{key}"
    if (target / "params.pt").exists():
        log.info("loading cached toy backend from %s", target)
        return ToyBackend.load(target)
    from .backend.vocab import Vocab

    vocab = Vocab.build(corpus, extra=words, markers=markers, max_size=toy.vocab_size)
    backend = pretrain_toy(corpus, toy, steps, vocab=vocab, **settings)
    backend.save(target)
    return backend
