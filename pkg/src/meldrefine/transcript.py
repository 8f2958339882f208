"""Transcript normalization and concatenation for forced alignment.

Utterance texts are uppercased, stripped of punctuation, and mapped onto the
character vocabulary the acoustic model emits posteriors over; whitespace
runs become single word-delimiter tokens. Each utterance is wrapped in
boundary delimiters before concatenation, and the recorded bounds cover the
inner span only, so delimiter frames never leak into utterance timings.
"""

from __future__ import annotations

import json
import string
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

DEFAULT_VOCAB_RESOURCE = "vocab_en_char.json"
WORD_DELIMITER = "|"

# Unicode variants MELD texts actually contain, folded before tokenisation.
_APOSTROPHES = {"’": "'", "‘": "'", "ʼ": "'", "´": "'", "`": "'"}
_SPACE_LIKE = {"–": " ", "—": " ", "‒": " ", "―": " ", "…": " ", " ": " ", "\t": " "}


class EmptyTranscriptError(ValueError):
    """Every utterance of a dialogue normalized to nothing."""


@dataclass(frozen=True)
class Vocabulary:
    """Character vocabulary with the CTC blank fixed at index 0."""

    symbols: tuple[str, ...]
    word_delimiter: str = WORD_DELIMITER

    def __post_init__(self):
        if not self.symbols:
            raise ValueError("empty vocabulary")
        if len(set(self.symbols)) != len(self.symbols):
            raise ValueError("duplicate vocabulary symbols")
        if self.word_delimiter not in self.symbols:
            raise ValueError(f"word delimiter {self.word_delimiter!r} not in vocabulary")
        if self.symbols.index(self.word_delimiter) == 0:
            raise ValueError("word delimiter cannot be the blank (index 0)")
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(self.symbols)})

    @property
    def blank_index(self) -> int:
        return 0

    @property
    def blank(self) -> str:
        return self.symbols[0]

    @property
    def word_delimiter_index(self) -> int:
        return self._index[self.word_delimiter]

    def __len__(self) -> int:
        return len(self.symbols)

    def index(self, symbol: str) -> int | None:
        return self._index.get(symbol)

    def decode(self, indices: list[int]) -> str:
        """Render token indices back to text; delimiters become spaces."""
        out = []
        for i in indices:
            sym = self.symbols[i]
            out.append(" " if sym == self.word_delimiter else sym)
        return "".join(out)

    def to_json(self) -> str:
        return json.dumps(list(self.symbols), ensure_ascii=False)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    @classmethod
    def from_symbols(cls, symbols, word_delimiter: str = WORD_DELIMITER) -> "Vocabulary":
        return cls(tuple(symbols), word_delimiter)

    @classmethod
    def load(cls, path: str | Path, word_delimiter: str = WORD_DELIMITER) -> "Vocabulary":
        return cls.from_symbols(json.loads(Path(path).read_text(encoding="utf-8")), word_delimiter)

    @classmethod
    def default(cls) -> "Vocabulary":
        payload = resources.files("meldrefine.data").joinpath(DEFAULT_VOCAB_RESOURCE).read_text("utf-8")
        return cls.from_symbols(json.loads(payload))


@dataclass(frozen=True)
class Bound:
    """Inclusive index range of one utterance's inner tokens in the concatenation."""

    utterance_id: int
    first: int
    last: int


@dataclass
class ConcatTranscript:
    chars: list[int]
    bounds: list[Bound]
    dropped: list[tuple[int, str]] = field(default_factory=list)
    empty_utterances: list[int] = field(default_factory=list)


def normalize_utterance(text: str, vocab: Vocabulary) -> tuple[list[int], list[str]]:
    """Tokenise one utterance text against the vocabulary.

    Returns (indices, dropped) where dropped lists characters that survived
    the punctuation rules but have no vocabulary entry (digits, accents, ...)
    in input order. An empty indices list is the empty-utterance flag; the
    caller decides whether to drop the utterance.
    """
    for src, dst in {**_APOSTROPHES, **_SPACE_LIKE}.items():
        text = text.replace(src, dst)
    text = text.upper()

    keep_apostrophe = vocab.index("'") is not None
    punctuation = set(string.punctuation)
    if keep_apostrophe:
        punctuation.discard("'")
    text = "".join(ch for ch in text if ch not in punctuation)

    indices: list[int] = []
    dropped: list[str] = []
    wd = vocab.word_delimiter_index
    for word in text.split():
        token_start = len(indices)
        for ch in word:
            idx = vocab.index(ch)
            if idx is None or idx == vocab.blank_index:
                dropped.append(ch)
            else:
                indices.append(idx)
        if len(indices) > token_start:
            indices.append(wd)
    if indices and indices[-1] == wd:
        indices.pop()
    return indices, dropped


def concat_transcripts(
    texts: list[tuple[int, str]], vocab: Vocabulary
) -> ConcatTranscript:
    """Concatenate normalized utterances, each wrapped in boundary delimiters.

    The wrapping tokens stand in for start/end-of-utterance markers; bounds
    index the inner tokens only. Raises EmptyTranscriptError when nothing at
    all survives normalization.
    """
    wd = vocab.word_delimiter_index
    chars: list[int] = []
    bounds: list[Bound] = []
    dropped: list[tuple[int, str]] = []
    empty: list[int] = []
    for utterance_id, text in texts:
        indices, drops = normalize_utterance(text, vocab)
        dropped.extend((utterance_id, ch) for ch in drops)
        chars.append(wd)
        if indices:
            bounds.append(Bound(utterance_id, len(chars), len(chars) + len(indices) - 1))
            chars.extend(indices)
        else:
            empty.append(utterance_id)
        chars.append(wd)
    if not bounds:
        raise EmptyTranscriptError(
            f"all {len(texts)} utterances normalized to empty sequences"
        )
    return ConcatTranscript(chars, bounds, dropped, empty)
