"""Shared check routines used by the unit tests and the acceptance suite."""
import numpy as np
import torch

from adaprompt.objectives import total_loss
from adaprompt.prompts import RANDOM, PromptTemplate, render_entity_masked, render_prompt
from adaprompt.scoring import LabelScorer
from adaprompt.verbalizer import build_schema

from conftest import random_example, tiny_backend

GRAD_LABELS = ["no_relation", "per:title", "per:city_of_death", "per:city_of_birth"]
# components whose gradients are both below this are compared absolutely
GRAD_FLOOR = 1e-6


def random_batch(rng, backend, schema, size, entity=True):
    batch = []
    for i in range(size):
        ex = random_example(rng, GRAD_LABELS, max_tokens=8, idx=i)
        masked = render_entity_masked(ex, PromptTemplate(), backend, schema, RANDOM, rng) if entity else None
        batch.append((render_prompt(ex, PromptTemplate(), backend), masked, schema.index(ex.relation)))
    return batch


def grad_check(seed, eps=1e-4, batch_size=3):
    """Max relative error between autograd and central differences of the total loss."""
    rng = np.random.default_rng(seed)
    backend = tiny_backend(d=8, layers=1, heads=2, ffn=16, max_len=32, seed=seed)
    assert backend.num_parameters() <= 2000, backend.num_parameters()
    schema = build_schema(GRAD_LABELS, "no_relation")
    scorer = LabelScorer(schema, backend)
    batch = random_batch(rng, backend, schema, batch_size)
    backend.train()
    params = list(backend.parameters())
    analytic = torch.autograd.grad(total_loss(batch, scorer).total, params)
    worst = 0.0
    with torch.no_grad():
        for p, g in zip(params, analytic):
            flat, gflat = p.view(-1), g.reshape(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + eps
                up = total_loss(batch, scorer).total.item()
                flat[i] = orig - eps
                down = total_loss(batch, scorer).total.item()
                flat[i] = orig
                num = (up - down) / (2 * eps)
                a = gflat[i].item()
                err = abs(a - num) / max(abs(a), abs(num), GRAD_FLOOR)
                worst = max(worst, err)
    return worst


# settings of the synthetic end-to-end run
SYNTH_TOY = dict(d=32, layers=2, heads=2, max_len=64, seed=0)
SYNTH_PRETRAIN = dict(steps=500, lr=3e-3, batch_size=128)


TIMINGS = {}


def synthetic_setup():
    """Synthetic 6-relation dataset plus a toy MLM pre-trained on its corpus."""
    import time

    from adaprompt.backend.toy import ToyMLMConfig, pretrain_toy
    from adaprompt.synthetic import make_synthetic, vocabulary_words

    start = time.perf_counter()
    dataset, corpus = make_synthetic(seed=0)
    settings = dict(SYNTH_PRETRAIN)
    steps = settings.pop("steps")
    backend = pretrain_toy(corpus, ToyMLMConfig(**SYNTH_TOY), steps, extra_words=sorted(vocabulary_words()),
                           **settings)
    TIMINGS["synthetic_setup"] = time.perf_counter() - start
    return dataset, corpus, backend
