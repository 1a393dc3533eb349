"""Label-word mapping: turns relation label strings into sets of vocabulary words.

A label such as ``per:city_of_death`` is split on ``:`` and ``_``, attribute
abbreviations are expanded (``per`` -> ``person``), conjunctions and
prepositions are dropped, and the surviving fragments become the label words
``person, city, death``.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Sequence

from .errors import (
    ConfigError,
    DuplicateLabel,
    DuplicateWordSet,
    EmptyDecomposition,
    SchemaError,
    UnresolvableWord,
)

if TYPE_CHECKING:
    from .backend.base import ModelBackend

DEFAULT_ABBREVIATIONS = {"per": "person", "org": "organization", "gpe": "country"}
DEFAULT_STOPWORDS = frozenset({"of", "by", "in", "and", "or"})
DEFAULT_NA_WORD = "none"

_SPLIT_RE = re.compile(r"[:_]")

# The 42 relation types of TACRED / TACRED-Revisit.
TACRED_LABELS = (
    "no_relation",
    "org:alternate_names",
    "org:city_of_headquarters",
    "org:country_of_headquarters",
    "org:dissolved",
    "org:founded",
    "org:founded_by",
    "org:member_of",
    "org:members",
    "org:number_of_employees/members",
    "org:parents",
    "org:political/religious_affiliation",
    "org:shareholders",
    "org:stateorprovince_of_headquarters",
    "org:subsidiaries",
    "org:top_members/employees",
    "org:website",
    "per:age",
    "per:alternate_names",
    "per:cause_of_death",
    "per:charges",
    "per:children",
    "per:cities_of_residence",
    "per:city_of_birth",
    "per:city_of_death",
    "per:countries_of_residence",
    "per:country_of_birth",
    "per:country_of_death",
    "per:date_of_birth",
    "per:date_of_death",
    "per:employee_of",
    "per:origin",
    "per:other_family",
    "per:parents",
    "per:religion",
    "per:schools_attended",
    "per:siblings",
    "per:spouse",
    "per:stateorprovince_of_birth",
    "per:stateorprovince_of_death",
    "per:stateorprovinces_of_residence",
    "per:title",
)


@dataclass(frozen=True)
class RuleConfig:
    abbreviations: dict = field(default_factory=lambda: dict(DEFAULT_ABBREVIATIONS))
    stopwords: frozenset = DEFAULT_STOPWORDS
    na_word: str = DEFAULT_NA_WORD

    def __hash__(self):
        return hash((tuple(sorted(self.abbreviations.items())), self.stopwords, self.na_word))

    @classmethod
    def from_dict(cls, data: dict) -> "RuleConfig":
        unknown = set(data) - {"abbreviations", "stopwords", "na_word"}
        if unknown:
            raise ConfigError(f"unknown rule config keys: {sorted(unknown)}")
        abbreviations = dict(DEFAULT_ABBREVIATIONS)
        abbreviations.update({k.lower(): v.lower() for k, v in data.get("abbreviations", {}).items()})
        stopwords = data.get("stopwords")
        stopwords = DEFAULT_STOPWORDS if stopwords is None else frozenset(s.lower() for s in stopwords)
        na_word = data.get("na_word", DEFAULT_NA_WORD)
        if not na_word or any(ch.isspace() for ch in na_word):
            raise ConfigError(f"na_word must be a single non-empty word, got {na_word!r}")
        return cls(abbreviations=abbreviations, stopwords=stopwords, na_word=na_word.lower())

    @classmethod
    def load(cls, path) -> "RuleConfig":
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def to_dict(self) -> dict:
        return {
            "abbreviations": dict(sorted(self.abbreviations.items())),
            "stopwords": sorted(self.stopwords),
            "na_word": self.na_word,
        }


def tacred_rules() -> RuleConfig:
    """Rules for the full TACRED label set.

    With the default stopwords ``org:founded`` and ``org:founded_by`` both
    reduce to {organization, founded}; keeping "by" keeps the mapping injective.
    """
    return RuleConfig(stopwords=DEFAULT_STOPWORDS - {"by"})


@dataclass(frozen=True)
class RelationLabel:
    raw: str
    class_index: int

    def __post_init__(self):
        if not self.raw or any(ch.isspace() for ch in self.raw):
            raise SchemaError(f"relation label must be non-empty without whitespace: {self.raw!r}")
        if self.class_index < 0:
            raise SchemaError(f"negative class index for {self.raw!r}")


@dataclass(frozen=True)
class LabelWordSet:
    label: RelationLabel
    words: tuple[str, ...]
    vocab_ids: tuple[tuple[int, ...], ...] = ()

    @property
    def resolved(self) -> bool:
        return len(self.vocab_ids) == len(self.words)


@dataclass(frozen=True)
class RelationSchema:
    labels: tuple[RelationLabel, ...]
    na_label: RelationLabel | None = None
    rules: RuleConfig = field(default_factory=RuleConfig)
    word_sets: tuple[tuple[str, ...], ...] = field(default=(), repr=False)

    @property
    def abbreviation_table(self) -> dict:
        return self.rules.abbreviations

    @property
    def stopword_list(self) -> frozenset:
        return self.rules.stopwords

    def __len__(self):
        return len(self.labels)

    def label(self, raw: str) -> RelationLabel:
        for label in self.labels:
            if label.raw == raw:
                return label
        raise SchemaError(f"unknown relation label {raw!r}")

    def index(self, raw: str) -> int:
        return self.label(raw).class_index

    @property
    def na_index(self) -> int | None:
        return None if self.na_label is None else self.na_label.class_index

    def word_set(self, label: RelationLabel) -> LabelWordSet:
        return LabelWordSet(label, self.word_sets[label.class_index])

    def export(self) -> list[dict]:
        return [
            {"label": label.raw, "class_index": label.class_index, "words": list(words)}
            for label, words in zip(self.labels, self.word_sets)
        ]


def split_label(raw: str, rules: RuleConfig, is_na: bool = False) -> tuple[str, ...]:
    if is_na:
        return (rules.na_word,)
    words = []
    for fragment in _SPLIT_RE.split(raw):
        if not fragment:
            continue
        key = fragment.lower()
        fragment = rules.abbreviations.get(key, fragment)
        if key in rules.stopwords or fragment.lower() in rules.stopwords:
            continue
        word = fragment.lower()
        if word not in words:
            words.append(word)
    if not words:
        raise EmptyDecomposition(f"every fragment of {raw!r} was dropped")
    return tuple(words)


def decompose(label: RelationLabel, schema: RelationSchema) -> LabelWordSet:
    """Label words for ``label`` under the schema's rules.

    Raises DuplicateWordSet if another label of the schema reduces to the
    same set of words.
    """
    if label not in schema.labels:
        raise SchemaError(f"{label.raw!r} is not part of the schema")
    words = split_label(label.raw, schema.rules, is_na=label == schema.na_label)
    for other in schema.labels:
        if other == label:
            continue
        other_words = split_label(other.raw, schema.rules, is_na=other == schema.na_label)
        if set(other_words) == set(words):
            raise DuplicateWordSet(
                f"{label.raw!r} and {other.raw!r} both decompose to {sorted(words)}"
            )
    return LabelWordSet(label, words)


def resolve_vocab(word_set: LabelWordSet, backend: "ModelBackend") -> LabelWordSet:
    ids = []
    for word in word_set.words:
        units = tuple(backend.tokenize_word(word))
        if not units:
            raise UnresolvableWord(f"label word {word!r} has no vocabulary units")
        ids.append(units)
    return replace(word_set, vocab_ids=tuple(ids))


def build_schema(
    label_strings: Sequence[str],
    na_string: str | None = None,
    rule_config: RuleConfig | None = None,
) -> RelationSchema:
    if not label_strings:
        raise SchemaError("a schema needs at least one label")
    rules = rule_config or RuleConfig()
    seen = set()
    for raw in label_strings:
        if raw in seen:
            raise DuplicateLabel(f"label {raw!r} appears more than once")
        seen.add(raw)
    labels = tuple(RelationLabel(raw, i) for i, raw in enumerate(label_strings))
    na_label = None
    if na_string is not None:
        if na_string not in seen:
            raise SchemaError(f"N/A label {na_string!r} is not among the labels")
        na_label = labels[list(label_strings).index(na_string)]

    word_sets = []
    owners: dict[frozenset, str] = {}
    for label in labels:
        words = split_label(label.raw, rules, is_na=label == na_label)
        key = frozenset(words)
        if key in owners:
            raise DuplicateWordSet(
                f"{owners[key]!r} and {label.raw!r} both decompose to {sorted(words)}"
            )
        owners[key] = label.raw
        word_sets.append(words)
    return RelationSchema(labels, na_label, rules, tuple(word_sets))


def resolve_schema(schema: RelationSchema, backend: "ModelBackend") -> list[LabelWordSet]:
    """Resolved word sets for every class, in class-index order."""
    return [resolve_vocab(schema.word_set(label), backend) for label in schema.labels]


def load_schema_labels(path) -> list[str]:
    """Read label strings from a JSON list, a schema export, or one label per line."""
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError:
        return [line.strip() for line in text.splitlines() if line.strip()]
    if isinstance(data, dict) and "labels" in data:
        data = data["labels"]
    return [item["label"] if isinstance(item, dict) else str(item) for item in data]


def label_words(schema: RelationSchema) -> Iterable[str]:
    for words in schema.word_sets:
        yield from words
