"""Adapter for pretrained Hugging Face masked language models (BERT family).

``transformers`` is imported lazily so the toy backend works without it.
"""
from __future__ import annotations

import json
from pathlib import Path

import torch
import torch.nn.functional as F
from torch import nn

from ..errors import UnknownBackend
from .base import ModelBackend
from .vocab import DEFAULT_MARKERS


class HFVocab:
    """Vocabulary view over a Hugging Face tokenizer."""

    def __init__(self, tokenizer):
        self.tokenizer = tokenizer
        self._table = tokenizer.get_vocab()

    def refresh(self):
        self._table = self.tokenizer.get_vocab()

    def __len__(self):
        return len(self.tokenizer)

    def __contains__(self, token):
        return token in self._table

    def id_of(self, token: str) -> int:
        return self._table[token]

    def token(self, idx: int) -> str:
        return self.tokenizer.convert_ids_to_tokens(idx)

    def decode(self, ids):
        return self.tokenizer.convert_ids_to_tokens(list(ids))

    pad_id = property(lambda self: self.tokenizer.pad_token_id)
    unk_id = property(lambda self: self.tokenizer.unk_token_id)
    cls_id = property(lambda self: self.tokenizer.cls_token_id)
    sep_id = property(lambda self: self.tokenizer.sep_token_id)
    mask_id = property(lambda self: self.tokenizer.mask_token_id)

    def special_ids(self) -> set[int]:
        return set(self.tokenizer.all_special_ids)


class HFMaskedLMBackend(ModelBackend):
    name = "external:hf-bert"

    def __init__(self, model, tokenizer, markers=DEFAULT_MARKERS, seed: int = 0, max_len: int | None = None):
        self.model = model
        self.tokenizer = tokenizer
        added = [m for m in markers if m not in tokenizer.get_vocab()]
        if added:
            tokenizer.add_special_tokens({"additional_special_tokens": list(markers)})
            old = model.get_input_embeddings().weight.shape[0]
            model.resize_token_embeddings(len(tokenizer))
            std = getattr(model.config, "initializer_range", 0.02)
            gen = torch.Generator().manual_seed(seed)
            with torch.no_grad():
                emb = model.get_input_embeddings().weight
                emb[old:] = torch.randn(emb.shape[0] - old, emb.shape[1], generator=gen, dtype=emb.dtype) * std
        self.vocab = HFVocab(tokenizer)
        self.max_len = max_len or min(model.config.max_position_embeddings,
                                      getattr(tokenizer, "model_max_length", 10**9))
        self.hidden_size = model.config.hidden_size
        self.markers = tuple(markers)

    @classmethod
    def from_pretrained(cls, path, markers=DEFAULT_MARKERS, seed: int = 0, max_len: int | None = None):
        from transformers import AutoModelForMaskedLM, AutoTokenizer

        tokenizer = AutoTokenizer.from_pretrained(path)
        model = AutoModelForMaskedLM.from_pretrained(path)
        model.eval()
        return cls(model, tokenizer, markers, seed, max_len)

    @property
    def module(self) -> nn.Module:
        return self.model

    def tokenize_word(self, word: str) -> list[int]:
        pieces = self.tokenizer.tokenize(word)
        ids = self.tokenizer.convert_tokens_to_ids(pieces)
        if not ids or self.vocab.unk_id in ids:
            return []
        return list(ids)

    def features(self, input_ids, attention_mask):
        out = self.model.base_model(input_ids=input_ids, attention_mask=attention_mask)
        return out.last_hidden_state

    def transform(self, features):
        if hasattr(self.model, "cls"):
            return self.model.cls.predictions.transform(features)
        head = self.model.lm_head
        return head.layer_norm(F.gelu(head.dense(features)))

    @property
    def output_embeddings(self):
        return self.model.get_output_embeddings().weight

    @property
    def output_bias(self):
        return self.model.get_output_embeddings().bias

    def save(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.model.save_pretrained(directory)
        self.tokenizer.save_pretrained(directory)
        (directory / "adapter.json").write_text(
            json.dumps({"backend": self.name, "markers": list(self.markers), "max_len": self.max_len})
        )
        return directory


ADAPTERS = {"hf-bert": HFMaskedLMBackend.from_pretrained}


def load_external(name: str, path, **kwargs) -> ModelBackend:
    try:
        factory = ADAPTERS[name]
    except KeyError:
        raise UnknownBackend(f"no external adapter named {name!r}; known: {sorted(ADAPTERS)}") from None
    return factory(path, **kwargs)
