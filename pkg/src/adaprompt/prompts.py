"""Cloze prompt construction.

``render_prompt`` produces ``[CLS] sentence [SEP] template [SEP]`` where the
sentence carries entity markers around both mentions and the template repeats
the entity text with a single ``[MASK]`` slot for the relation.
``render_entity_masked`` produces the companion input for the entity
objective: one entity's tokens are masked and the slot holds the gold label
words.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .backend.vocab import DEFAULT_MARKERS
from .errors import ConfigError, InvalidExample, SpanLost, TemplateOverflow
from .verbalizer import RelationSchema, resolve_vocab

if TYPE_CHECKING:
    from .backend.base import ModelBackend


class TemplateForm(enum.Enum):
    COPULA = "copula"
    RELATION_BETWEEN = "relation-between"

    @classmethod
    def from_flag(cls, flag: str) -> "TemplateForm":
        try:
            return cls(flag.replace("_", "-").lower())
        except ValueError:
            raise ConfigError(f"unknown template {flag!r}; choose copula or relation-between") from None


class Entity(enum.Enum):
    SUBJECT = "subject"
    OBJECT = "object"


RANDOM = "random"


@dataclass(frozen=True)
class Example:
    id: str
    tokens: tuple[str, ...]
    subj_span: tuple[int, int]
    obj_span: tuple[int, int]
    relation: str

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "subj_span", tuple(self.subj_span))
        object.__setattr__(self, "obj_span", tuple(self.obj_span))
        n = len(self.tokens)
        for name, (s, e) in (("subj_span", self.subj_span), ("obj_span", self.obj_span)):
            if not 0 <= s < e <= n:
                raise InvalidExample(f"{self.id}: {name} {(s, e)} invalid for {n} tokens")
        (s1, e1), (s2, e2) = self.subj_span, self.obj_span
        if s1 < e2 and s2 < e1:
            raise InvalidExample(f"{self.id}: subject and object spans overlap")

    @property
    def subject(self) -> tuple[str, ...]:
        return self.tokens[slice(*self.subj_span)]

    @property
    def object(self) -> tuple[str, ...]:
        return self.tokens[slice(*self.obj_span)]

    def to_dict(self) -> dict:
        return {"id": self.id, "tokens": list(self.tokens), "subj_span": list(self.subj_span),
                "obj_span": list(self.obj_span), "relation": self.relation}


@dataclass(frozen=True)
class PromptTemplate:
    form: TemplateForm = TemplateForm.COPULA
    markers: tuple[str, str, str, str] = DEFAULT_MARKERS


@dataclass(frozen=True)
class PromptInstance:
    token_ids: tuple[int, ...]
    mask_position: int
    entity_token_positions: dict = field(compare=False)
    source_id: str
    truncated: bool = False
    template_entity_positions: dict = field(default_factory=dict, compare=False, repr=False)
    template_start: int = 0

    def __len__(self):
        return len(self.token_ids)


@dataclass(frozen=True)
class EntityMaskedInstance:
    token_ids: tuple[int, ...]
    masked_positions: tuple[int, ...]
    target_ids: tuple[int, ...]
    masked_entity: Entity
    source_id: str
    hidden_positions: tuple[int, ...] = ()
    truncated: bool = False

    def __len__(self):
        return len(self.token_ids)


def _marker_ids(template: PromptTemplate, backend: "ModelBackend") -> list[int]:
    ids = []
    for marker in template.markers:
        if marker not in backend.vocab:
            raise ConfigError(f"marker {marker!r} is missing from the backend vocabulary")
        ids.append(backend.vocab.id_of(marker))
    return ids


def _words(backend, words: Sequence[str]) -> list[int]:
    out = []
    for w in words:
        out.extend(backend.encode_word(w))
    return out


@dataclass
class _Layout:
    ids: list
    mask_position: int
    sentence_entities: dict
    template_entities: dict
    template_start: int
    slot: tuple
    truncated: bool


def _layout(example: Example, template: PromptTemplate, backend: "ModelBackend",
            slot_ids: Sequence[int]) -> _Layout:
    e1, e1_end, e2, e2_end = _marker_ids(template, backend)
    vocab = backend.vocab

    sentence: list[int] = []
    positions = {Entity.SUBJECT: [], Entity.OBJECT: []}
    first_marker = None
    (ss, se), (os_, oe) = example.subj_span, example.obj_span
    for i, word in enumerate(example.tokens):
        if i == ss:
            first_marker = len(sentence) if first_marker is None else first_marker
            sentence.append(e1)
        if i == os_:
            first_marker = len(sentence) if first_marker is None else first_marker
            sentence.append(e2)
        units = backend.encode_word(word)
        if ss <= i < se:
            positions[Entity.SUBJECT].extend(range(len(sentence), len(sentence) + len(units)))
        elif os_ <= i < oe:
            positions[Entity.OBJECT].extend(range(len(sentence), len(sentence) + len(units)))
        sentence.extend(units)
        if i == se - 1:
            sentence.append(e1_end)
        if i == oe - 1:
            sentence.append(e2_end)

    subj_ids = _words(backend, example.subject)
    obj_ids = _words(backend, example.object)
    tmpl: list[int] = []
    tpos = {}

    def put_entity(which, marker, ids, end_marker):
        tmpl.append(marker)
        tpos[which] = list(range(len(tmpl), len(tmpl) + len(ids)))
        tmpl.extend(ids)
        tmpl.append(end_marker)

    if template.form is TemplateForm.COPULA:
        put_entity(Entity.SUBJECT, e1, subj_ids, e1_end)
        tmpl.extend(_words(backend, ["is"]))
        slot_start = len(tmpl)
        tmpl.extend(slot_ids)
        put_entity(Entity.OBJECT, e2, obj_ids, e2_end)
        tmpl.extend(_words(backend, ["."]))
    else:
        tmpl.extend(_words(backend, ["the", "relation", "between"]))
        put_entity(Entity.SUBJECT, e1, subj_ids, e1_end)
        tmpl.extend(_words(backend, ["and"]))
        put_entity(Entity.OBJECT, e2, obj_ids, e2_end)
        tmpl.extend(_words(backend, ["is"]))
        slot_start = len(tmpl)
        tmpl.extend(slot_ids)
        tmpl.extend(_words(backend, ["."]))

    budget = backend.max_len - 3 - len(tmpl)
    if budget < 0 or (budget == 0 and sentence):
        raise TemplateOverflow(
            f"{example.id}: template needs {len(tmpl) + 3} positions, max_len is {backend.max_len}"
        )
    cut = max(0, len(sentence) - budget)
    if cut > first_marker:
        raise SpanLost(f"{example.id}: left truncation of {cut} tokens would remove an entity")
    sentence = sentence[cut:]
    offset = 1 - cut
    sentence_entities = {k: [p + offset for p in v] for k, v in positions.items()}
    template_start = 1 + len(sentence) + 1
    ids = [vocab.cls_id] + sentence + [vocab.sep_id] + tmpl + [vocab.sep_id]
    template_entities = {k: [p + template_start for p in v] for k, v in tpos.items()}
    return _Layout(ids, template_start + slot_start, sentence_entities, template_entities,
                   template_start, (template_start + slot_start, len(slot_ids)), cut > 0)


def render_prompt(example: Example, template: PromptTemplate, backend: "ModelBackend") -> PromptInstance:
    lay = _layout(example, template, backend, [backend.vocab.mask_id])
    return PromptInstance(
        token_ids=tuple(lay.ids),
        mask_position=lay.mask_position,
        entity_token_positions=lay.sentence_entities,
        source_id=example.id,
        truncated=lay.truncated,
        template_entity_positions=lay.template_entities,
        template_start=lay.template_start,
    )


def gold_slot_ids(example: Example, schema: RelationSchema, backend: "ModelBackend") -> list[int]:
    word_set = resolve_vocab(schema.word_set(schema.label(example.relation)), backend)
    return [i for units in word_set.vocab_ids for i in units]


def render_entity_masked(
    example: Example,
    template: PromptTemplate,
    backend: "ModelBackend",
    schema: RelationSchema,
    which: Entity | str = RANDOM,
    rng: np.random.Generator | None = None,
) -> EntityMaskedInstance:
    """Mask one entity's sentence tokens; the relation slot holds the gold label words.

    The entity's copy inside the template is masked as well so it cannot be
    copied back, but only the sentence positions are prediction targets.
    """
    if which == RANDOM:
        if rng is None:
            raise ConfigError("RANDOM entity choice needs a seeded generator")
        which = (Entity.SUBJECT, Entity.OBJECT)[int(rng.integers(2))]
    which = Entity(which)
    lay = _layout(example, template, backend, gold_slot_ids(example, schema, backend))
    positions = tuple(lay.sentence_entities[which])
    hidden = tuple(lay.template_entities[which])
    targets = tuple(lay.ids[p] for p in positions)
    ids = list(lay.ids)
    for p in positions + hidden:
        ids[p] = backend.vocab.mask_id
    return EntityMaskedInstance(
        token_ids=tuple(ids),
        masked_positions=positions,
        target_ids=targets,
        masked_entity=which,
        source_id=example.id,
        hidden_positions=hidden,
        truncated=lay.truncated,
    )


def render_plain(example: Example, template: PromptTemplate, backend: "ModelBackend") -> list[int]:
    """``[CLS] sentence [SEP]`` with entity markers, for head-based fine-tuning."""
    e1, e1_end, e2, e2_end = _marker_ids(template, backend)
    ids = []
    (ss, se), (os_, oe) = example.subj_span, example.obj_span
    for i, word in enumerate(example.tokens):
        if i == ss:
            ids.append(e1)
        if i == os_:
            ids.append(e2)
        ids.extend(backend.encode_word(word))
        if i == se - 1:
            ids.append(e1_end)
        if i == oe - 1:
            ids.append(e2_end)
    budget = backend.max_len - 2
    if len(ids) > budget:
        first = min(ids.index(e1), ids.index(e2))
        cut = len(ids) - budget
        if cut > first:
            raise SpanLost(f"{example.id}: left truncation would remove an entity")
        ids = ids[cut:]
    return [backend.vocab.cls_id] + ids + [backend.vocab.sep_id]
