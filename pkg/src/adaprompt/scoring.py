"""Class distributions at the mask position.

Two scoring modes are available:

* ``summed-logit`` (used for training and prediction): each class gets the
  logit ``w_y . h`` where ``w_y`` sums the output embeddings of the class's
  label words, and the classes are normalized with a softmax.
* ``marginal``: each class gets the total vocabulary-softmax probability of
  its label words; the masses are renormalized over classes.

A label word that splits into several vocabulary units contributes the mean
of its units in both modes.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import torch

from .errors import DimensionMismatch, LengthExceeded, PositionNotMasked
from .prompts import EntityMaskedInstance, PromptInstance
from .verbalizer import LabelWordSet, RelationLabel, RelationSchema, resolve_schema, resolve_vocab

if TYPE_CHECKING:
    from .backend.base import ModelBackend

SUMMED_LOGIT = "summed-logit"
MARGINAL = "marginal"
SCORING_MODES = (SUMMED_LOGIT, MARGINAL)


@dataclass
class MaskOutputs:
    hidden: torch.Tensor
    vocab_logits: torch.Tensor


@dataclass
class ClassScores:
    logits: torch.Tensor
    probs: torch.Tensor
    raw_mass: torch.Tensor | None = None

    @property
    def argmax(self):
        # torch.argmax returns the first maximal index, so ties go to the lowest class
        idx = self.probs.argmax(dim=-1)
        return idx.item() if idx.dim() == 0 else idx.tolist()

    def to_json(self, source_id: str) -> dict:
        return {"id": source_id, "probs": self.probs.detach().tolist(), "argmax": self.argmax}


def collate(instances: Sequence, pad_id: int, max_len: int | None = None):
    width = max(len(inst.token_ids) for inst in instances)
    if max_len is not None and width > max_len:
        raise LengthExceeded(f"instance of length {width} exceeds max_len {max_len}")
    ids = torch.full((len(instances), width), pad_id, dtype=torch.long)
    attn = torch.zeros((len(instances), width), dtype=torch.long)
    for i, inst in enumerate(instances):
        n = len(inst.token_ids)
        ids[i, :n] = torch.tensor(inst.token_ids, dtype=torch.long)
        attn[i, :n] = 1
    return ids, attn


def encode_with_mask(instances, backend: "ModelBackend") -> MaskOutputs:
    """Hidden vectors and vocabulary logits at the masked positions.

    For prompt instances there is one row per instance; entity-masked
    instances contribute one row per masked position, in order.
    """
    single = isinstance(instances, (PromptInstance, EntityMaskedInstance))
    if single:
        instances = [instances]
    ids, attn = collate(instances, backend.vocab.pad_id, backend.max_len)
    hidden = backend.encode(ids, attn)
    rows, cols = [], []
    for i, inst in enumerate(instances):
        positions = [inst.mask_position] if isinstance(inst, PromptInstance) else inst.masked_positions
        rows.extend([i] * len(positions))
        cols.extend(positions)
    h = hidden[rows, cols]
    return MaskOutputs(hidden=h, vocab_logits=backend.vocab_logits(h))


def aggregation_matrix(word_sets: Sequence[LabelWordSet], vocab_size: int,
                       dtype=torch.float32) -> torch.Tensor:
    """(classes x vocab) matrix: sum over words of the mean over each word's units."""
    agg = torch.zeros((len(word_sets), vocab_size), dtype=dtype)
    for c, ws in enumerate(word_sets):
        for units in ws.vocab_ids:
            for u in units:
                agg[c, u] += 1.0 / len(units)
    return agg


def label_vector(word_set: LabelWordSet, backend: "ModelBackend") -> torch.Tensor:
    emb = backend.output_embeddings
    vec = torch.zeros(emb.shape[1], dtype=emb.dtype)
    for units in word_set.vocab_ids:
        vec = vec + emb[list(units)].mean(dim=0)
    return vec


def class_logit(y: RelationLabel, word_set: LabelWordSet, backend: "ModelBackend",
                hidden: torch.Tensor) -> torch.Tensor:
    if word_set.label != y:
        raise ValueError(f"word set belongs to {word_set.label.raw!r}, not {y.raw!r}")
    if not word_set.resolved:
        word_set = resolve_vocab(word_set, backend)
    w = label_vector(word_set, backend)
    if w.shape[-1] != hidden.shape[-1]:
        raise DimensionMismatch(f"embedding dim {w.shape[-1]} != hidden dim {hidden.shape[-1]}")
    return w @ hidden


class LabelScorer:
    """Scores prompt instances against a schema on one backend.

    Word sets are resolved once; the class vectors are recomputed from the
    live output embeddings on every call so gradients reach them.
    """

    def __init__(self, schema: RelationSchema, backend: "ModelBackend", mode: str = SUMMED_LOGIT):
        if mode not in SCORING_MODES:
            raise ValueError(f"unknown scoring mode {mode!r}")
        self.schema = schema
        self.backend = backend
        self.mode = mode
        self.word_sets = resolve_schema(schema, backend)
        self.aggregation = aggregation_matrix(self.word_sets, backend.vocab_size, backend.dtype)

    def class_vectors(self) -> torch.Tensor:
        emb = self.backend.output_embeddings
        return self.aggregation.to(emb.dtype) @ emb

    def class_logits(self, hidden: torch.Tensor) -> torch.Tensor:
        vectors = self.class_vectors()
        if vectors.shape[-1] != hidden.shape[-1]:
            raise DimensionMismatch(f"embedding dim {vectors.shape[-1]} != hidden dim {hidden.shape[-1]}")
        return hidden @ vectors.T

    def from_outputs(self, out: MaskOutputs, mode: str | None = None) -> ClassScores:
        mode = mode or self.mode
        logits = self.class_logits(out.hidden)
        if mode == SUMMED_LOGIT:
            return ClassScores(logits=logits, probs=logits.softmax(dim=-1))
        vocab_probs = out.vocab_logits.softmax(dim=-1)
        mass = vocab_probs @ self.aggregation.to(vocab_probs.dtype).T
        return ClassScores(logits=logits, probs=mass / mass.sum(dim=-1, keepdim=True), raw_mass=mass)

    def score(self, instances: Sequence[PromptInstance], mode: str | None = None) -> ClassScores:
        return self.from_outputs(encode_with_mask(list(instances), self.backend), mode)

    @torch.no_grad()
    def predict(self, instances: Sequence[PromptInstance], batch_size: int = 64,
                mode: str | None = None) -> list[int]:
        was_training = self.backend.module.training
        self.backend.eval()
        preds = []
        for start in range(0, len(instances), batch_size):
            preds.extend(self.score(instances[start : start + batch_size], mode).probs.argmax(-1).tolist())
        self.backend.train(was_training)
        return preds


def _single(scores: ClassScores) -> ClassScores:
    return ClassScores(scores.logits[0], scores.probs[0],
                       None if scores.raw_mass is None else scores.raw_mass[0])


def score_classes(instance: PromptInstance, schema: RelationSchema, backend: "ModelBackend") -> ClassScores:
    return _single(LabelScorer(schema, backend, SUMMED_LOGIT).score([instance]))


def marginal_scores(instance: PromptInstance, schema: RelationSchema, backend: "ModelBackend") -> ClassScores:
    return _single(LabelScorer(schema, backend, MARGINAL).score([instance]))


def entity_token_distribution(instance: EntityMaskedInstance, position: int,
                              backend: "ModelBackend") -> torch.Tensor:
    if position not in instance.masked_positions:
        raise PositionNotMasked(f"position {position} is not one of {instance.masked_positions}")
    out = encode_with_mask(instance, backend)
    row = instance.masked_positions.index(position)
    return out.vocab_logits[row].softmax(dim=-1)
