import numpy as np
import pytest
import torch

from adaprompt.backend.toy import ToyBackend, ToyMLMConfig
from adaprompt.backend.vocab import Vocab
from adaprompt.prompts import Example
from adaprompt.verbalizer import build_schema

TOY_WORDS = [
    "douglas", "flint", "chief", "financial", "officer", "will", "replace", "departing",
    "stephen", "green", "as", "chairman", "of", "the", "banking", "giant", "people", "close",
    "to", "situation", "said", "is", "relation", "between", "and", ".", ",", "person", "title",
    "city", "death", "birth", "none", "organization", "founded", "employee", "paris", "john",
    "smith", "was", "born", "in", "died", "works", "for", "acme", "corp", "play", "##ing",
    "##s", "spouse", "lives", "residence",
]


def make_vocab(markers=None):
    if markers is None:
        return Vocab(TOY_WORDS)
    return Vocab(TOY_WORDS, markers)


def tiny_backend(d=8, layers=1, heads=2, ffn=16, max_len=48, seed=0, double=True):
    backend = ToyBackend(make_vocab(), ToyMLMConfig(d=d, layers=layers, heads=heads, ffn=ffn,
                                                    max_len=max_len, seed=seed))
    if double:
        backend.double()
    backend.eval()
    return backend


@pytest.fixture
def vocab():
    return make_vocab()


@pytest.fixture
def backend():
    return tiny_backend()


@pytest.fixture
def schema():
    return build_schema(["no_relation", "per:title", "per:city_of_death", "per:city_of_birth"],
                        "no_relation")


def random_example(rng: np.random.Generator, labels, words=TOY_WORDS[:40], max_tokens=20, idx=0):
    n = int(rng.integers(2, max_tokens + 1))
    tokens = [words[int(rng.integers(len(words)))] for _ in range(n)]
    # two disjoint non-empty spans
    while True:
        a = sorted(rng.choice(n + 1, size=2, replace=False).tolist())
        b = sorted(rng.choice(n + 1, size=2, replace=False).tolist())
        if a[0] < a[1] and b[0] < b[1] and (a[1] <= b[0] or b[1] <= a[0]):
            break
    return Example(f"ex{idx}", tokens, tuple(a), tuple(b), labels[int(rng.integers(len(labels)))])


@pytest.fixture(autouse=True)
def _torch_threads():
    torch.set_num_threads(1)
    yield


@pytest.fixture(scope="session")
def synthetic():
    """(dataset, corpus, pre-trained backend); built once per session."""
    from checks import synthetic_setup

    torch.set_num_threads(1)
    return synthetic_setup()


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
