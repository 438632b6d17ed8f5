"""Whitespace word-level tokenizer for the desk-scale models.

The vocabulary is built from the training texts; decoding joins words
with single spaces, so any text that round-trips ``" ".join(t.split())``
regenerates byte-identically.
"""

from __future__ import annotations

import json
from pathlib import Path

PAD, BOS, EOS, UNK = 0, 1, 2, 3
_SPECIALS = ["<pad>", "<bos>", "<eos>", "<unk>"]


class WordTokenizer:
    def __init__(self, words: list[str]):
        self.id_to_word = _SPECIALS + list(words)
        self.word_to_id = {w: i for i, w in enumerate(self.id_to_word)}

    @classmethod
    def from_texts(cls, texts) -> "WordTokenizer":
        seen: dict[str, None] = {}
        for text in texts:
            for word in text.split():
                seen.setdefault(word, None)
        return cls(list(seen))

    @property
    def vocab_size(self) -> int:
        return len(self.id_to_word)

    def encode(self, text: str, *, add_bos: bool = False, add_eos: bool = False) -> list[int]:
        ids = [self.word_to_id.get(w, UNK) for w in text.split()]
        if add_bos:
            ids = [BOS] + ids
        if add_eos:
            ids = ids + [EOS]
        return ids

    def decode(self, ids) -> str:
        words = [self.id_to_word[i] for i in ids if i >= len(_SPECIALS)]
        return " ".join(words)

    def save(self, path: str | Path) -> None:
        payload = {"words": self.id_to_word[len(_SPECIALS):]}
        Path(path).write_text(json.dumps(payload, ensure_ascii=False))

    @classmethod
    def load(cls, path: str | Path) -> "WordTokenizer":
        payload = json.loads(Path(path).read_text())
        return cls(payload["words"])
