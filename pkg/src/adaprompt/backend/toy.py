"""A small BERT-style masked language model that trains in seconds on a CPU."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import torch
import torch.nn.functional as F
from torch import nn

from ..errors import ConfigError, LengthExceeded, NonFiniteLoss, VocabOverflow
from .base import ModelBackend
from .vocab import Vocab

log = logging.getLogger(__name__)


@dataclass
class ToyMLMConfig:
    d: int = 32
    layers: int = 2
    heads: int = 2
    ffn: int | None = None
    vocab_size: int = 512
    max_len: int = 128
    seed: int = 0

    def __post_init__(self):
        if self.d % self.heads:
            raise ConfigError(f"d={self.d} is not divisible by heads={self.heads}")
        if self.layers < 1 or self.max_len < 4:
            raise ConfigError("toy model needs at least one layer and max_len >= 4")

    @property
    def ffn_dim(self) -> int:
        return self.ffn or 4 * self.d


class _SelfAttention(nn.Module):
    def __init__(self, d: int, heads: int):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(d, 3 * d)
        self.out = nn.Linear(d, d)

    def forward(self, x, key_mask):
        b, t, d = x.shape
        dh = d // self.heads
        q, k, v = self.qkv(x).split(d, dim=-1)
        q, k, v = (z.view(b, t, self.heads, dh).transpose(1, 2) for z in (q, k, v))
        scores = q @ k.transpose(-1, -2) / math.sqrt(dh)
        scores = scores.masked_fill(~key_mask[:, None, None, :], float("-inf"))
        ctx = scores.softmax(dim=-1) @ v
        return self.out(ctx.transpose(1, 2).reshape(b, t, d))


class _Block(nn.Module):
    def __init__(self, d: int, heads: int, ffn: int):
        super().__init__()
        self.attn = _SelfAttention(d, heads)
        self.norm1 = nn.LayerNorm(d)
        self.fc1 = nn.Linear(d, ffn)
        self.fc2 = nn.Linear(ffn, d)
        self.norm2 = nn.LayerNorm(d)

    def forward(self, x, key_mask):
        x = self.norm1(x + self.attn(x, key_mask))
        return self.norm2(x + self.fc2(F.gelu(self.fc1(x))))


class ToyMLM(nn.Module):
    """Post-norm transformer encoder with tied input/output embeddings."""

    def __init__(self, config: ToyMLMConfig, vocab_size: int):
        super().__init__()
        d = config.d
        self.config = config
        self.tok = nn.Embedding(vocab_size, d)
        self.pos = nn.Embedding(config.max_len, d)
        self.emb_norm = nn.LayerNorm(d)
        self.blocks = nn.ModuleList(
            [_Block(d, config.heads, config.ffn_dim) for _ in range(config.layers)]
        )
        self.head_dense = nn.Linear(d, d)
        self.head_norm = nn.LayerNorm(d)
        self.out_bias = nn.Parameter(torch.zeros(vocab_size))
        self.apply(self._init)

    @staticmethod
    def _init(mod):
        if isinstance(mod, (nn.Linear, nn.Embedding)):
            nn.init.normal_(mod.weight, std=0.02 if isinstance(mod, nn.Linear) else 0.1)
            if isinstance(mod, nn.Linear):
                nn.init.zeros_(mod.bias)

    def features(self, input_ids, attention_mask):
        t = input_ids.shape[1]
        if t > self.pos.num_embeddings:
            raise LengthExceeded(f"sequence length {t} exceeds max_len {self.pos.num_embeddings}")
        positions = torch.arange(t, device=input_ids.device)
        x = self.emb_norm(self.tok(input_ids) + self.pos(positions)[None])
        key_mask = attention_mask.bool()
        for block in self.blocks:
            x = block(x, key_mask)
        return x

    def transform(self, x):
        return self.head_norm(F.gelu(self.head_dense(x)))


class ToyBackend(ModelBackend):
    name = "toy"

    def __init__(self, vocab: Vocab, config: ToyMLMConfig, model: ToyMLM | None = None):
        if len(vocab) > config.vocab_size:
            raise VocabOverflow(f"vocabulary has {len(vocab)} entries, limit is {config.vocab_size}")
        self.vocab = vocab
        self.config = config
        if model is None:
            with torch.random.fork_rng(devices=[]):
                torch.manual_seed(config.seed)
                model = ToyMLM(config, len(vocab))
        self.model = model
        self.max_len = config.max_len
        self.hidden_size = config.d
        self.history: list[float] = []

    @property
    def module(self) -> nn.Module:
        return self.model

    def tokenize_word(self, word: str) -> list[int]:
        return self.vocab.tokenize_word(word)

    def features(self, input_ids, attention_mask):
        return self.model.features(input_ids, attention_mask)

    def transform(self, features):
        return self.model.transform(features)

    @property
    def output_embeddings(self):
        return self.model.tok.weight

    @property
    def output_bias(self):
        return self.model.out_bias

    def double(self) -> "ToyBackend":
        self.model.double()
        return self

    def flat_parameters(self) -> torch.Tensor:
        return torch.cat([p.detach().reshape(-1) for p in self.model.parameters()])

    def num_parameters(self) -> int:
        return sum(p.numel() for p in self.model.parameters())

    def save(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "config.json").write_text(
            json.dumps({"backend": "toy", "model": asdict(self.config)}, indent=2)
        )
        (directory / "vocab.json").write_text(self.vocab.to_json())
        torch.save(self.model.state_dict(), directory / "params.pt")
        return directory

    @classmethod
    def load(cls, directory) -> "ToyBackend":
        directory = Path(directory)
        meta = json.loads((directory / "config.json").read_text())
        config = ToyMLMConfig(**meta["model"])
        vocab = Vocab.from_json((directory / "vocab.json").read_text())
        backend = cls(vocab, config)
        state = torch.load(directory / "params.pt", weights_only=True)
        if next(iter(state.values())).dtype == torch.float64:
            backend.double()
        backend.model.load_state_dict(state)
        return backend


def _pad(seqs: Sequence[Sequence[int]], pad_id: int):
    width = max(len(s) for s in seqs)
    ids = torch.full((len(seqs), width), pad_id, dtype=torch.long)
    attn = torch.zeros((len(seqs), width), dtype=torch.long)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = torch.tensor(s, dtype=torch.long)
        attn[i, : len(s)] = 1
    return ids, attn


def corpus_to_ids(corpus: Sequence[Sequence[str]], vocab: Vocab, max_len: int) -> list[list[int]]:
    out = []
    for seq in corpus:
        ids = [vocab.cls_id]
        for word in seq:
            if word in vocab and vocab.id_of(word) in vocab.special_ids():
                ids.append(vocab.id_of(word))
            else:
                ids.extend(vocab.encode_word(word))
        ids = ids[: max_len - 1] + [vocab.sep_id]
        out.append(ids)
    return out


def mask_tokens(ids: torch.Tensor, attn: torch.Tensor, vocab: Vocab, rate: float,
                generator: torch.Generator):
    """BERT-style corruption: of the selected positions 80% become [MASK],
    10% a random ordinary token, 10% stay unchanged."""
    special = torch.tensor(sorted(vocab.special_ids()))
    candidates = attn.bool() & ~torch.isin(ids, special)
    draw = torch.rand(ids.shape, generator=generator)
    selected = candidates & (draw < rate)
    # at least one target per row
    for row in range(ids.shape[0]):
        if not selected[row].any() and candidates[row].any():
            cols = candidates[row].nonzero().flatten()
            pick = cols[torch.randint(len(cols), (1,), generator=generator)]
            selected[row, pick] = True
    labels = torch.where(selected, ids, torch.full_like(ids, -100))
    action = torch.rand(ids.shape, generator=generator)
    n_special = len(vocab.specials)
    random_ids = torch.randint(n_special, len(vocab), ids.shape, generator=generator)
    corrupted = ids.clone()
    corrupted[selected & (action < 0.8)] = vocab.mask_id
    swap = selected & (action >= 0.8) & (action < 0.9)
    corrupted[swap] = random_ids[swap]
    return corrupted, labels


def mlm_loss(backend: ModelBackend, ids, attn, labels) -> torch.Tensor:
    logits = backend.vocab_logits(backend.encode(ids, attn))
    return F.cross_entropy(logits.reshape(-1, logits.shape[-1]), labels.reshape(-1), ignore_index=-100)


def pretrain_toy(
    corpus: Sequence[Sequence[str]],
    config: ToyMLMConfig | None = None,
    steps: int = 500,
    *,
    vocab: Vocab | None = None,
    extra_words: Sequence[str] = (),
    batch_size: int = 32,
    lr: float = 1e-3,
    mask_rate: float = 0.15,
) -> ToyBackend:
    """Random-masking MLM pre-training of a fresh toy model.

    The returned backend carries the per-step training losses in ``history``.
    """
    config = config or ToyMLMConfig()
    if vocab is None:
        vocab = Vocab.build(corpus, extra=extra_words, max_size=config.vocab_size)
    backend = ToyBackend(vocab, config)
    if steps <= 0:
        return backend
    data = corpus_to_ids(corpus, vocab, config.max_len)
    gen = torch.Generator().manual_seed(config.seed + 1)
    opt = torch.optim.Adam(backend.model.parameters(), lr=lr)
    backend.train()
    order = torch.randperm(len(data), generator=gen).tolist()
    cursor = 0
    for step in range(steps):
        if cursor + batch_size > len(order):
            order = torch.randperm(len(data), generator=gen).tolist()
            cursor = 0
        batch = [data[i] for i in order[cursor : cursor + batch_size]]
        cursor += batch_size
        ids, attn = _pad(batch, vocab.pad_id)
        inputs, labels = mask_tokens(ids, attn, vocab, mask_rate, gen)
        loss = mlm_loss(backend, inputs, attn, labels)
        if not torch.isfinite(loss):
            raise NonFiniteLoss(f"pre-training loss became {loss.item()} at step {step}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        backend.history.append(loss.item())
    backend.eval()
    log.info("pretrained toy MLM for %d steps: loss %.3f -> %.3f",
             steps, backend.history[0], backend.history[-1])
    return backend


@torch.no_grad()
def masked_token_accuracy(backend: ToyBackend, corpus: Sequence[Sequence[str]],
                          mask_rate: float = 0.15, seed: int = 0, batch_size: int = 64) -> float:
    """Fraction of masked positions whose argmax prediction is the original token.

    Every selected position is replaced by [MASK] (no random/keep branches).
    """
    vocab = backend.vocab
    data = corpus_to_ids(corpus, vocab, backend.max_len)
    gen = torch.Generator().manual_seed(seed)
    special = torch.tensor(sorted(vocab.special_ids()))
    backend.eval()
    hits = total = 0
    for start in range(0, len(data), batch_size):
        ids, attn = _pad(data[start : start + batch_size], vocab.pad_id)
        candidates = attn.bool() & ~torch.isin(ids, special)
        selected = candidates & (torch.rand(ids.shape, generator=gen) < mask_rate)
        inputs = ids.masked_fill(selected, vocab.mask_id)
        pred = backend.vocab_logits(backend.encode(inputs, attn)).argmax(-1)
        hits += (pred[selected] == ids[selected]).sum().item()
        total += selected.sum().item()
    return hits / max(total, 1)
