"""Training losses: relation discrimination, entity discrimination, and their sum."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import torch

from .errors import DegenerateDistribution, EmptyBatch
from .prompts import EntityMaskedInstance, PromptInstance
from .scoring import ClassScores, LabelScorer, encode_with_mask
from .verbalizer import RelationLabel

if TYPE_CHECKING:
    from .backend.base import ModelBackend

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12
_LOG_FLOOR = math.log(PROB_FLOOR)


class ClampCounter:
    """Counts gold probabilities that fell below PROB_FLOOR and were clamped."""

    def __init__(self):
        self.count = 0

    def add(self, n: int):
        if n:
            self.count += n
            log.warning("clamped %d gold probabilities to %g", n, PROB_FLOOR)


clamp_events = ClampCounter()


def _neg_log(log_probs: torch.Tensor, strict: bool) -> torch.Tensor:
    low = log_probs < _LOG_FLOOR
    if low.any():
        if strict:
            raise DegenerateDistribution("gold probability underflowed to zero")
        clamp_events.add(int(low.sum()))
    return -log_probs.clamp_min(_LOG_FLOOR)


def _gold_index(gold) -> torch.Tensor:
    if isinstance(gold, RelationLabel):
        return torch.tensor(gold.class_index)
    if isinstance(gold, (list, tuple)):
        return torch.tensor([g.class_index if isinstance(g, RelationLabel) else int(g) for g in gold])
    return torch.as_tensor(gold)


def relation_loss(scores: ClassScores, gold, strict: bool = False) -> torch.Tensor:
    """-log p(gold); per-example vector when ``scores`` is batched."""
    if scores.raw_mass is None:
        log_probs = scores.logits.log_softmax(dim=-1)
    else:
        log_probs = scores.probs.clamp_min(0).log()
    idx = _gold_index(gold)
    if log_probs.dim() == 1:
        picked = log_probs[idx]
    else:
        picked = log_probs.gather(-1, idx.reshape(-1, 1)).squeeze(-1)
    return _neg_log(picked, strict)


def entity_loss(instance: EntityMaskedInstance, backend: "ModelBackend", strict: bool = False) -> torch.Tensor:
    """Sum over masked positions of -log q(original token), i.e. BCE against target 1."""
    out = encode_with_mask(instance, backend)
    log_q = out.vocab_logits.log_softmax(dim=-1)
    targets = torch.tensor(instance.target_ids, dtype=torch.long)
    return _neg_log(log_q.gather(-1, targets[:, None]).squeeze(-1), strict).sum()


def _entity_losses(instances: Sequence[EntityMaskedInstance], backend, strict: bool) -> torch.Tensor:
    out = encode_with_mask(list(instances), backend)
    log_q = out.vocab_logits.log_softmax(dim=-1)
    targets = torch.tensor([t for inst in instances for t in inst.target_ids], dtype=torch.long)
    per_pos = _neg_log(log_q.gather(-1, targets[:, None]).squeeze(-1), strict)
    owner = torch.tensor([i for i, inst in enumerate(instances) for _ in inst.masked_positions])
    return torch.zeros(len(instances), dtype=per_pos.dtype).index_add(0, owner, per_pos)


@dataclass
class LossBreakdown:
    l_r: torch.Tensor
    l_e: torch.Tensor
    total: torch.Tensor

    def as_dict(self) -> dict:
        return {"l_r": self.l_r.item(), "l_e": self.l_e.item(), "total": self.total.item()}


def total_loss(batch: Sequence[tuple], scorer: LabelScorer, lambda_e: float = 1.0,
               strict: bool = False) -> LossBreakdown:
    """Mean relation loss plus mean entity loss over a batch.

    ``batch`` holds ``(PromptInstance, EntityMaskedInstance | None, gold)``
    triples. The entity mean runs over the examples that carry an
    entity-masked instance and is zero when none do. ``total`` is computed as
    ``l_r + lambda_e * l_e``.
    """
    if not batch:
        raise EmptyBatch("total_loss needs at least one example")
    prompts = [b[0] for b in batch]
    golds = [b[2] for b in batch]
    l_r = relation_loss(scorer.score(prompts), golds, strict).mean()
    masked = [b[1] for b in batch if b[1] is not None]
    if masked:
        l_e = _entity_losses(masked, scorer.backend, strict).mean()
    else:
        l_e = torch.zeros((), dtype=l_r.dtype)
    total = l_r + l_e if lambda_e == 1.0 else l_r + lambda_e * l_e
    return LossBreakdown(l_r=l_r, l_e=l_e, total=total)
