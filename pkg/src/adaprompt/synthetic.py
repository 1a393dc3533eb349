"""Templated relation corpus for desk-scale end-to-end runs.

Each relation has a pool of trigger phrases. Labelled examples are drawn
from templates of the form ``[prefix] SUBJ TRIGGER OBJ [suffix] .``. The
unlabelled pre-training corpus mixes plain sentences with glosses that tie
each trigger to its relation's descriptive words ("paris is the birth city
of ..."), which is the relational knowledge prompt tuning is meant to
reuse.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backend.vocab import DEFAULT_MARKERS
from .data import Dataset
from .prompts import Example

FIRST_NAMES = (
    "john", "mary", "peter", "linda", "james", "susan", "robert", "karen", "david", "nancy",
    "paul", "laura", "mark", "emma", "george", "alice", "frank", "helen", "henry", "ruth",
)
LAST_NAMES = (
    "smith", "jones", "brown", "miller", "davis", "wilson", "moore", "taylor", "clark", "lewis",
    "walker", "hall", "young", "king", "wright", "scott", "green", "baker", "adams", "nelson",
)
CITIES = (
    "paris", "london", "berlin", "madrid", "rome", "vienna", "dublin", "oslo", "prague", "lisbon",
    "boston", "chicago", "denver", "seattle", "austin", "toronto", "sydney", "tokyo", "cairo", "lima",
)
ORG_STEMS = (
    "acme", "globex", "initech", "umbrella", "stark", "wayne", "hooli", "vandelay", "monarch", "cyberdyne",
    "oscorp", "tyrell", "wonka", "soylent", "aperture",
)
ORG_SUFFIXES = ("corp", "group", "institute", "college", "labs")

PREFIXES = ((), ("yesterday", ","), ("reportedly", ","), ("it", "is", "known", "that"),
            ("sources", "say", "that"), ("in", "short", ","))
SUFFIXES = ((), ("last", "year"), ("long", "ago"), ("according", "to", "friends"),
            ("as", "reported"), ("years", "ago"))


@dataclass(frozen=True)
class RelationSpec:
    label: str
    obj_type: str
    triggers: tuple
    glosses: tuple  # "{s}" / "{o}" / "{w}" placeholders
    descriptors: tuple = ()  # words filling "{w}"


RELATIONS = (
    RelationSpec(
        "no_relation", "any",
        ("visited", "heard about", "wrote about", "flew over", "mentioned", "criticized",
         "photographed", "read about"),
        ("{s} has none known relation to {o}", "there is none link between {s} and {o}",
         "{s} is {w} {o}"),
        ("none", "unrelated"),
    ),
    RelationSpec(
        "per:city_of_birth", "city",
        ("was born in", "is a native of", "came into the world in", "was delivered in",
         "hails by birth from", "entered life in", "first saw light in", "is born in"),
        ("{o} is the birth city of {s}", "{s} is a person whose birth city is {o}",
         "{s} is {w} {o}"),
        ("birth", "city", "native"),
    ),
    RelationSpec(
        "per:city_of_death", "city",
        ("died in", "passed away in", "was killed in", "perished in", "lost life in",
         "drew a last breath in", "was slain in", "expired in"),
        ("{o} is the death city of {s}", "{s} is a person whose death city is {o}",
         "{s} is {w} {o}"),
        ("death", "city", "deceased"),
    ),
    RelationSpec(
        "per:cities_of_residence", "city",
        ("lives in", "resides in", "moved to", "settled in", "has a home in", "dwells in",
         "relocated to", "stays in"),
        ("{o} is the residence city of {s}", "{s} is a person whose residence is {o}",
         "{s} is {w} {o}"),
        ("residence", "cities", "resident"),
    ),
    RelationSpec(
        "per:employee_of", "org",
        ("works for", "is employed by", "joined", "is on the staff of", "was hired by",
         "earns a salary from", "serves at", "labors at"),
        ("{s} is an employee of {o}", "{s} is a person who is employee at {o}",
         "{s} is {w} {o}"),
        ("employee", "staff", "worker"),
    ),
    RelationSpec(
        "per:schools_attended", "org",
        ("studied at", "graduated from", "attended", "enrolled at", "was a student at",
         "earned a degree from", "took classes at", "majored at"),
        ("{o} is one of the schools attended by {s}", "{s} is a person who attended schools at {o}",
         "{s} is {w} {o}"),
        ("schools", "attended", "student"),
    ),
)


class SyntheticCorpus:
    def __init__(self, seed: int = 0, relations=RELATIONS, markers=DEFAULT_MARKERS):
        self.rng = np.random.default_rng(seed)
        self.relations = relations
        self.markers = tuple(markers)

    def _choice(self, seq):
        return seq[int(self.rng.integers(len(seq)))]

    def person(self) -> list[str]:
        return [self._choice(FIRST_NAMES), self._choice(LAST_NAMES)]

    def entity(self, kind: str) -> list[str]:
        if kind == "any":
            kind = self._choice(("city", "org"))
        if kind == "city":
            return [self._choice(CITIES)]
        return [self._choice(ORG_STEMS), self._choice(ORG_SUFFIXES)]

    def sentence(self, rel: RelationSpec):
        subj = self.person()
        obj = self.entity(rel.obj_type)
        prefix = list(self._choice(PREFIXES))
        suffix = list(self._choice(SUFFIXES))
        trigger = self._choice(rel.triggers).split()
        tokens = prefix + subj + trigger + obj + suffix + ["."]
        s0 = len(prefix)
        o0 = s0 + len(subj) + len(trigger)
        return tokens, (s0, s0 + len(subj)), (o0, o0 + len(obj))

    def gloss(self, rel: RelationSpec, marked: bool = False) -> list[str]:
        tokens, s, o = self.sentence(rel)
        subj = " ".join(tokens[slice(*s)])
        obj = " ".join(tokens[slice(*o)])
        word = self._choice(rel.descriptors) if rel.descriptors else ""
        if not marked:
            text = self._choice(rel.glosses).format(s=subj, o=obj, w=word)
            return tokens + text.split() + ["."]
        e1, e1_end, e2, e2_end = self.markers
        tokens = (tokens[: s[0]] + [e1] + tokens[s[0] : s[1]] + [e1_end] + tokens[s[1] : o[0]]
                  + [e2] + tokens[o[0] : o[1]] + [e2_end] + tokens[o[1] :])
        text = f"{e1} {subj} {e1_end} is {word} {e2} {obj} {e2_end} ."
        return tokens + ["[SEP]"] + text.split()

    def examples(self, per_class: int, prefix: str) -> list[Example]:
        out = []
        for rel in self.relations:
            for i in range(per_class):
                tokens, s, o = self.sentence(rel)
                out.append(Example(f"{prefix}-{rel.label}-{i}", tokens, s, o, rel.label))
        order = self.rng.permutation(len(out))
        return [out[i] for i in order]

    def pretraining_corpus(self, n_sentences: int, gloss_fraction: float = 0.1,
                           marked_fraction: float = 0.7) -> list[list[str]]:
        """Plain sentences, plain glosses, and marker-annotated glosses.

        The marked glosses put entity markers around the mentions and state
        the relation as ``[E1] s [/E1] is <word> [E2] o [/E2] .``, the shape
        entity-marker pre-training gives a model.
        """
        corpus = []
        for _ in range(n_sentences):
            rel = self._choice(self.relations)
            u = self.rng.random()
            if u < marked_fraction:
                corpus.append(self.gloss(rel, marked=True))
            elif u < marked_fraction + gloss_fraction:
                corpus.append(self.gloss(rel))
            else:
                corpus.append(self.sentence(rel)[0])
        return corpus


def make_synthetic(seed: int = 0, train_per_class: int = 200, dev_per_class: int = 20,
                   test_per_class: int = 100, pretrain_sentences: int = 4000):
    """Return ``(dataset, pretraining corpus)``."""
    gen = SyntheticCorpus(seed)
    train = gen.examples(train_per_class, "train")
    dev = gen.examples(dev_per_class, "dev")
    test = gen.examples(test_per_class, "test")
    dataset = Dataset(train, dev, test, name="synthetic", labels=[r.label for r in gen.relations])
    corpus = SyntheticCorpus(seed + 1000).pretraining_corpus(pretrain_sentences)
    return dataset, corpus


def vocabulary_words(relations=RELATIONS) -> set[str]:
    """Every word the generator can emit, plus template words."""
    words = set(FIRST_NAMES) | set(LAST_NAMES) | set(CITIES) | set(ORG_STEMS) | set(ORG_SUFFIXES)
    for group in (PREFIXES, SUFFIXES):
        for p in group:
            words.update(p)
    for rel in relations:
        for t in rel.triggers:
            words.update(t.split())
        for g in rel.glosses:
            words.update(w for w in g.split() if not w.startswith("{"))
        words.update(rel.descriptors)
    words.update({"the", "relation", "between", "and", "is", ".", "none"})
    return words
