"""Fine-tuning loops: prompt tuning with the combined loss, and the
head-based classifier used as a baseline."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import NonFiniteLoss
from .objectives import LossBreakdown, total_loss
from .prompts import (
    Entity,
    Example,
    PromptTemplate,
    render_entity_masked,
    render_plain,
    render_prompt,
)
from .scoring import SUMMED_LOGIT, LabelScorer
from .verbalizer import RelationSchema

if TYPE_CHECKING:
    from .backend.base import ModelBackend

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 1e-3
    steps: int | None = 200
    epochs: int | None = None
    batch_size: int = 16
    entity_loss: bool = True
    lambda_e: float = 1.0
    scoring: str = SUMMED_LOGIT
    seed: int = 0

    def num_steps(self, n_examples: int) -> int:
        if self.epochs is not None:
            return self.epochs * math.ceil(n_examples / self.batch_size)
        return int(self.steps or 0)

    @classmethod
    def from_hparams(cls, hparams: dict, **base) -> "TrainConfig":
        cfg = dict(base)
        cfg.update(hparams)
        return cls(**cfg)


def make_optimizer(backend: "ModelBackend", lr: float, extra: Sequence[nn.Parameter] = ()):
    return torch.optim.Adam(list(backend.parameters()) + list(extra), lr=lr)


def _check_finite(loss: LossBreakdown, step: int):
    if not torch.isfinite(loss.total):
        raise NonFiniteLoss(
            f"step {step}: total={loss.total.item()} l_r={loss.l_r.item()} l_e={loss.l_e.item()}"
        )


def finetune_step(batch, optimizer: torch.optim.Optimizer, scorer: LabelScorer,
                  lambda_e: float = 1.0, step: int = 0):
    """One optimizer step on the combined loss; returns ``(loss, optimizer)``."""
    scorer.backend.train()
    loss = total_loss(batch, scorer, lambda_e)
    _check_finite(loss, step)
    optimizer.zero_grad()
    loss.total.backward()
    optimizer.step()
    for p in scorer.backend.parameters():
        if not torch.isfinite(p).all():
            raise NonFiniteLoss(f"step {step}: parameters became non-finite")
    return loss, optimizer


@dataclass
class RenderedExample:
    prompt: object
    masked: dict
    gold: int


def render_training_set(examples: Sequence[Example], schema: RelationSchema, template: PromptTemplate,
                        backend: "ModelBackend", with_entities: bool = True) -> list[RenderedExample]:
    out = []
    for ex in examples:
        masked = {}
        if with_entities:
            masked = {which: render_entity_masked(ex, template, backend, schema, which)
                      for which in (Entity.SUBJECT, Entity.OBJECT)}
        out.append(RenderedExample(render_prompt(ex, template, backend), masked, schema.index(ex.relation)))
    return out


class TrainingLog:
    """JSON-lines sink for per-step losses."""

    def __init__(self, path=None):
        self.records: list[dict] = []
        self._fh = open(path, "a") if path else None

    def write(self, record: dict):
        self.records.append(record)
        if self._fh:
            self._fh.write(json.dumps(record) + "\n")
            self._fh.flush()

    def close(self):
        if self._fh:
            self._fh.close()
            self._fh = None


def _epoch_batches(n: int, batch_size: int, rng: np.random.Generator):
    while True:
        order = rng.permutation(n)
        yield [order[i : i + batch_size].tolist() for i in range(0, n, batch_size)]


def train_prompt(backend: "ModelBackend", schema: RelationSchema, examples: Sequence[Example],
                 template: PromptTemplate, config: TrainConfig,
                 log_sink: TrainingLog | None = None, tag: dict | None = None) -> LabelScorer:
    """Prompt-tune ``backend`` in place; returns the scorer bound to it."""
    scorer = LabelScorer(schema, backend, config.scoring)
    data = render_training_set(examples, schema, template, backend, config.entity_loss)
    steps = config.num_steps(len(data))
    rng = np.random.default_rng(config.seed)
    optimizer = make_optimizer(backend, config.lr)
    epochs = _epoch_batches(len(data), config.batch_size, rng)
    step = 0
    while step < steps:
        batches = next(epochs)
        # one entity draw per example per epoch
        choices = rng.integers(2, size=len(data))
        for idx in batches:
            if step >= steps:
                break
            batch = []
            for i in idx:
                r = data[i]
                masked = r.masked[(Entity.SUBJECT, Entity.OBJECT)[choices[i]]] if r.masked else None
                batch.append((r.prompt, masked, r.gold))
            loss, optimizer = finetune_step(batch, optimizer, scorer, config.lambda_e, step)
            if log_sink is not None:
                log_sink.write({**(tag or {}), "step": step, **loss.as_dict()})
            step += 1
    backend.eval()
    return scorer


def predict_prompt(scorer: LabelScorer, examples: Sequence[Example], template: PromptTemplate,
                   mode: str | None = None) -> list[int]:
    instances = [render_prompt(ex, template, scorer.backend) for ex in examples]
    return scorer.predict(instances, mode=mode)


class HeadClassifier(nn.Module):
    """Linear layer over the encoder's [CLS] state."""

    def __init__(self, d: int, num_classes: int, seed: int = 0, dtype=torch.float32):
        super().__init__()
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            self.linear = nn.Linear(d, num_classes, dtype=dtype)

    def forward(self, features):
        return self.linear(features[:, 0])


def _pad_ids(seqs, pad_id):
    width = max(len(s) for s in seqs)
    ids = torch.full((len(seqs), width), pad_id, dtype=torch.long)
    attn = torch.zeros_like(ids)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = torch.tensor(s)
        attn[i, : len(s)] = 1
    return ids, attn


@dataclass
class HeadModel:
    backend: "ModelBackend"
    head: HeadClassifier
    template: PromptTemplate = field(default_factory=PromptTemplate)

    @torch.no_grad()
    def predict(self, examples: Sequence[Example], batch_size: int = 64) -> list[int]:
        self.backend.eval()
        self.head.eval()
        preds = []
        for start in range(0, len(examples), batch_size):
            seqs = [render_plain(ex, self.template, self.backend) for ex in examples[start : start + batch_size]]
            ids, attn = _pad_ids(seqs, self.backend.vocab.pad_id)
            preds.extend(self.head(self.backend.features(ids, attn)).argmax(-1).tolist())
        return preds


def train_head(backend: "ModelBackend", schema: RelationSchema, examples: Sequence[Example],
               template: PromptTemplate, config: TrainConfig,
               log_sink: TrainingLog | None = None, tag: dict | None = None) -> HeadModel:
    """Standard fine-tuning: new linear head on [CLS], cross-entropy on the gold class."""
    head = HeadClassifier(backend.hidden_size, len(schema), seed=config.seed, dtype=backend.dtype)
    seqs = [render_plain(ex, template, backend) for ex in examples]
    golds = torch.tensor([schema.index(ex.relation) for ex in examples])
    steps = config.num_steps(len(seqs))
    rng = np.random.default_rng(config.seed)
    optimizer = make_optimizer(backend, config.lr, head.parameters())
    epochs = _epoch_batches(len(seqs), config.batch_size, rng)
    backend.train()
    head.train()
    step = 0
    while step < steps:
        for idx in next(epochs):
            if step >= steps:
                break
            ids, attn = _pad_ids([seqs[i] for i in idx], backend.vocab.pad_id)
            loss = F.cross_entropy(head(backend.features(ids, attn)), golds[idx])
            if not torch.isfinite(loss):
                raise NonFiniteLoss(f"head fine-tuning step {step}: loss {loss.item()}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            if log_sink is not None:
                log_sink.write({**(tag or {}), "step": step, "l_r": loss.item(), "l_e": 0.0,
                                "total": loss.item()})
            step += 1
    backend.eval()
    return HeadModel(backend, head, template)
