"""The masked-language-model interface every backend implements."""
from __future__ import annotations

import copy
from abc import ABC, abstractmethod

import torch
from torch import nn


class ModelBackend(ABC):
    """A masked LM seen through the operations prompt tuning needs.

    ``encode`` returns the vectors the output layer consumes, so that
    ``vocab_logits(h)[w] == output_embedding(w) @ h + bias[w]`` for every
    token ``w``. ``features`` returns the raw encoder states, used by the
    head-based fine-tuning baseline.
    """

    vocab: object
    max_len: int
    hidden_size: int
    name: str = "backend"

    @property
    @abstractmethod
    def module(self) -> nn.Module:
        """The trainable torch module."""

    @abstractmethod
    def tokenize_word(self, word: str) -> list[int]:
        """Vocabulary units for one word, empty if it cannot be represented."""

    def encode_word(self, word: str) -> list[int]:
        return self.tokenize_word(word) or [self.vocab.unk_id]

    @abstractmethod
    def features(self, input_ids: torch.Tensor, attention_mask: torch.Tensor) -> torch.Tensor:
        """Encoder output, shape (batch, length, d_model)."""

    @abstractmethod
    def transform(self, features: torch.Tensor) -> torch.Tensor:
        """Map encoder output into the space of the output embeddings."""

    def encode(self, input_ids: torch.Tensor, attention_mask: torch.Tensor) -> torch.Tensor:
        return self.transform(self.features(input_ids, attention_mask))

    @property
    @abstractmethod
    def output_embeddings(self) -> torch.Tensor:
        """Output-layer weight matrix, shape (vocab, d)."""

    @property
    def output_bias(self) -> torch.Tensor | None:
        return None

    def output_embedding(self, token_id: int) -> torch.Tensor:
        return self.output_embeddings[token_id]

    def vocab_logits(self, hidden: torch.Tensor) -> torch.Tensor:
        logits = hidden @ self.output_embeddings.T
        if self.output_bias is not None:
            logits = logits + self.output_bias
        return logits

    @property
    def vocab_size(self) -> int:
        return self.output_embeddings.shape[0]

    @property
    def dtype(self) -> torch.dtype:
        return self.output_embeddings.dtype

    def parameters(self):
        return self.module.parameters()

    def train(self, mode: bool = True):
        self.module.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def clone(self) -> "ModelBackend":
        return copy.deepcopy(self)
