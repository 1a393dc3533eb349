"""Dataset ingestion: JSON-lines records and converters for public layouts.

Sentence-level record::

    {"id": ..., "tokens": [...], "subj_span": [s, e], "obj_span": [s, e], "relation": ...}

Dialogue-level record::

    {"id": ..., "turns": [{"speaker": ..., "tokens": [...]}, ...],
     "subj": ..., "obj": ..., "relations": [...]}

Dialogues are flattened to ``speaker : utterance`` turns in order; a record
with several relations becomes one single-label example per relation.
"""
from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .errors import DataFormatError, InvalidExample
from .prompts import Example
from .verbalizer import RelationSchema, RuleConfig, build_schema

log = logging.getLogger(__name__)

_WORD_RE = re.compile(r"\w+|[^\w\s]")
DEV_HOLDOUT_FRACTION = 0.1
DEV_HOLDOUT_SEED = 0


def simple_tokenize(text: str) -> list[str]:
    return _WORD_RE.findall(text)


def flatten_dialogue(turns: list[dict]) -> list[str]:
    tokens = []
    for turn in turns:
        speaker = turn["speaker"]
        tokens.extend(speaker.split() if isinstance(speaker, str) else list(speaker))
        tokens.append(":")
        tokens.extend(turn["tokens"])
    return tokens


def _occurrences(tokens: list[str], phrase: list[str]) -> list[tuple[int, int]]:
    low = [t.lower() for t in tokens]
    target = [t.lower() for t in phrase]
    n = len(target)
    return [(i, i + n) for i in range(len(low) - n + 1) if low[i : i + n] == target]


def locate_entities(tokens: list[str], subj: list[str], obj: list[str], rid: str):
    """Latest non-overlapping occurrences of both mentions.

    Later mentions survive left truncation, so they are preferred.
    """
    subj_occ = _occurrences(tokens, subj)
    obj_occ = _occurrences(tokens, obj)
    if not subj_occ or not obj_occ:
        missing = "subject" if not subj_occ else "object"
        raise DataFormatError(f"{rid}: {missing} mention not found in dialogue")
    for s in reversed(subj_occ):
        for o in reversed(obj_occ):
            if s[1] <= o[0] or o[1] <= s[0]:
                return s, o
    raise DataFormatError(f"{rid}: subject and object mentions always overlap")


def parse_record(record: dict) -> list[Example]:
    try:
        if "turns" in record:
            tokens = flatten_dialogue(record["turns"])
            subj = record["subj"].split() if isinstance(record["subj"], str) else record["subj"]
            obj = record["obj"].split() if isinstance(record["obj"], str) else record["obj"]
            s, o = locate_entities(tokens, subj, obj, record["id"])
            relations = record["relations"]
            if isinstance(relations, str):
                relations = [relations]
            if not relations:
                raise DataFormatError(f"{record['id']}: no relations")
            if len(relations) == 1:
                return [Example(str(record["id"]), tokens, s, o, relations[0])]
            return [Example(f"{record['id']}#{j}", tokens, s, o, r) for j, r in enumerate(relations)]
        return [Example(str(record["id"]), record["tokens"], record["subj_span"],
                        record["obj_span"], record["relation"])]
    except KeyError as exc:
        raise DataFormatError(f"record {record.get('id', '?')} lacks field {exc}") from None
    except InvalidExample as exc:
        raise DataFormatError(str(exc)) from None


def read_jsonl(path) -> list[Example]:
    examples = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from None
            examples.extend(parse_record(record))
    return examples


def write_jsonl(path, examples: Iterable[Example]):
    with open(path, "w") as f:
        for ex in examples:
            f.write(json.dumps(ex.to_dict()) + "\n")


def convert_tacred(records: list[dict]) -> Iterator[dict]:
    """TACRED-style JSON (inclusive ``*_end`` indices) to sentence records."""
    for r in records:
        yield {
            "id": r["id"],
            "tokens": r["token"],
            "subj_span": [r["subj_start"], r["subj_end"] + 1],
            "obj_span": [r["obj_start"], r["obj_end"] + 1],
            "relation": r["relation"],
        }


def convert_dialogre(documents: list) -> Iterator[dict]:
    """DialogRE JSON (``[[lines, relations], ...]``) to dialogue records."""
    for d, (lines, relations) in enumerate(documents):
        turns = []
        for line in lines:
            speaker, _, text = line.partition(":")
            turns.append({"speaker": speaker.strip(), "tokens": simple_tokenize(text)})
        for j, rel in enumerate(relations):
            yield {
                "id": f"{d}-{j}",
                "turns": turns,
                "subj": simple_tokenize(rel["x"]),
                "obj": simple_tokenize(rel["y"]),
                "relations": list(rel["r"]),
            }


@dataclass
class Dataset:
    train: list[Example]
    dev: list[Example]
    test: list[Example]
    name: str = "dataset"
    labels: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.labels:
            seen = {ex.relation for split in (self.train, self.dev, self.test) for ex in split}
            self.labels = sorted(seen)
        ids = [ex.id for split in (self.train, self.dev, self.test) for ex in split]
        if len(ids) != len(set(ids)):
            raise DataFormatError(f"{self.name}: example ids are not unique across splits")

    def by_id(self) -> dict[str, Example]:
        return {ex.id: ex for split in (self.train, self.dev, self.test) for ex in split}

    def schema(self, na_label: str | None = "no_relation", rules: RuleConfig | None = None) -> RelationSchema:
        na = na_label if na_label in self.labels else None
        return build_schema(self.labels, na, rules)

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for name in ("train", "dev", "test"):
            write_jsonl(directory / f"{name}.jsonl", getattr(self, name))

    @classmethod
    def load(cls, directory) -> "Dataset":
        directory = Path(directory)
        if not directory.is_dir():
            raise DataFormatError(f"dataset directory {directory} does not exist")
        train_path, test_path = directory / "train.jsonl", directory / "test.jsonl"
        for p in (train_path, test_path):
            if not p.exists():
                raise DataFormatError(f"missing {p}")
        train = read_jsonl(train_path)
        test = read_jsonl(test_path)
        dev_path = directory / "dev.jsonl"
        if dev_path.exists():
            dev = read_jsonl(dev_path)
        else:
            train, dev = holdout_dev(train)
        return cls(train, dev, test, name=directory.name)


def holdout_dev(train: list[Example], fraction: float = DEV_HOLDOUT_FRACTION,
                seed: int = DEV_HOLDOUT_SEED) -> tuple[list[Example], list[Example]]:
    """Seeded dev holdout for datasets without an official dev split."""
    rng = np.random.default_rng(seed)
    n_dev = max(1, int(round(fraction * len(train))))
    picked = set(rng.choice(len(train), size=n_dev, replace=False).tolist())
    keep = [ex for i, ex in enumerate(train) if i not in picked]
    dev = [ex for i, ex in enumerate(train) if i in picked]
    return keep, dev
