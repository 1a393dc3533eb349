"""Word-level vocabulary with greedy word-piece fallback for the toy backend."""
from __future__ import annotations

import json
from collections.abc import Iterable

from ..errors import VocabOverflow

PAD, UNK, CLS, SEP, MASK = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"
DEFAULT_MARKERS = ("[E1]", "[/E1]", "[E2]", "[/E2]")
CONTINUATION = "##"


class Vocab:
    """Bidirectional token <-> id map.

    Special tokens occupy the first ids. Ordinary entries are lowercase words
    or ``##``-prefixed continuation pieces; a word missing from the table is
    split greedily into the longest known pieces, the way WordPiece does.
    """

    def __init__(self, tokens: Iterable[str], markers: Iterable[str] = DEFAULT_MARKERS):
        self.markers = tuple(markers)
        self.specials = (PAD, UNK, CLS, SEP, MASK) + self.markers
        self._id_to_token: list[str] = []
        self._token_to_id: dict[str, int] = {}
        for tok in self.specials:
            self._add(tok)
        for tok in tokens:
            if tok not in self._token_to_id:
                self._add(tok)

    def _add(self, token: str):
        self._token_to_id[token] = len(self._id_to_token)
        self._id_to_token.append(token)

    @classmethod
    def build(cls, corpus: Iterable[Iterable[str]], extra: Iterable[str] = (),
              markers: Iterable[str] = DEFAULT_MARKERS, max_size: int | None = None) -> "Vocab":
        words = set(extra)
        for seq in corpus:
            words.update(w.lower() for w in seq)
        markers = tuple(markers)
        words -= set(markers) | {PAD, UNK, CLS, SEP, MASK}
        vocab = cls(sorted(words), markers)
        if max_size is not None and len(vocab) > max_size:
            raise VocabOverflow(f"vocabulary has {len(vocab)} entries, limit is {max_size}")
        return vocab

    def __len__(self):
        return len(self._id_to_token)

    def __contains__(self, token):
        return token in self._token_to_id

    def id_of(self, token: str) -> int:
        return self._token_to_id[token]

    def token(self, idx: int) -> str:
        return self._id_to_token[idx]

    @property
    def tokens(self) -> list[str]:
        return list(self._id_to_token)

    pad_id = property(lambda self: self._token_to_id[PAD])
    unk_id = property(lambda self: self._token_to_id[UNK])
    cls_id = property(lambda self: self._token_to_id[CLS])
    sep_id = property(lambda self: self._token_to_id[SEP])
    mask_id = property(lambda self: self._token_to_id[MASK])

    def special_ids(self) -> set[int]:
        return {self._token_to_id[t] for t in self.specials}

    def tokenize_word(self, word: str) -> list[int]:
        """Vocabulary ids for one word; an empty list when no split exists."""
        if word in self._token_to_id:
            return [self._token_to_id[word]]
        word = word.lower()
        if word in self._token_to_id:
            return [self._token_to_id[word]]
        pieces = []
        start = 0
        while start < len(word):
            end = len(word)
            found = None
            while end > start:
                piece = word[start:end]
                if start > 0:
                    piece = CONTINUATION + piece
                if piece in self._token_to_id and piece not in self.specials:
                    found = self._token_to_id[piece]
                    break
                end -= 1
            if found is None:
                return []
            pieces.append(found)
            start = end
        return pieces

    def encode_word(self, word: str) -> list[int]:
        return self.tokenize_word(word) or [self.unk_id]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self._id_to_token[i] for i in ids]

    def to_json(self) -> str:
        return json.dumps({"tokens": self._id_to_token, "markers": list(self.markers)})

    @classmethod
    def from_json(cls, text: str) -> "Vocab":
        data = json.loads(text)
        markers = tuple(data["markers"])
        n_special = 5 + len(markers)
        return cls(data["tokens"][n_special:], markers)
