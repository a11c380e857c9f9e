"""Corpus ingestion: vocabulary, token streams, document chunks and BPTT batches.

Input text is expected to be pre-tokenized, one sentence per line, with tokens
separated by whitespace (the WikiText convention).
"""

from __future__ import annotations

import hashlib
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

UNK = "<unk>"
EOS = "<eos>"

DISCOURSE = "discourse"
SENTENCE = "sentence"
MODES = (DISCOURSE, SENTENCE)


class CorpusError(ValueError):
    pass


def _lines(text: str | Iterable[str]) -> Iterator[list[str]]:
    if isinstance(text, str):
        text = text.splitlines()
    for line in text:
        words = line.split()
        if words:
            yield words


@dataclass
class Vocabulary:
    """Dense bidirectional word/id map with reserved ``<unk>`` and ``<eos>``."""

    words: list[str]
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.index = {w: i for i, w in enumerate(self.words)}
        if len(self.index) != len(self.words):
            raise CorpusError("duplicate words in vocabulary")
        for tok in (UNK, EOS):
            if tok not in self.index:
                raise CorpusError(f"vocabulary lacks reserved token {tok}")

    @property
    def unk_id(self) -> int:
        return self.index[UNK]

    @property
    def eos_id(self) -> int:
        return self.index[EOS]

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return word in self.index

    def lookup(self, word: str) -> int:
        return self.index.get(word, self.unk_id)

    def encode(self, words: Sequence[str]) -> list[int]:
        return [self.lookup(w) for w in words]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.words[i] for i in ids]

    def digest(self) -> str:
        """SHA-256 over the ordered word list; used to bind checkpoints to a vocabulary."""
        return hashlib.sha256("\n".join(self.words).encode("utf-8")).hexdigest()

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for w in self.words:
                f.write(w + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as f:
            words = [line.rstrip("\n") for line in f]
        return cls([w for w in words if w])


def build_vocabulary(corpus, min_count: int = 1, max_size: int | None = None) -> Vocabulary:
    """Build a vocabulary ordered by descending frequency, ties broken lexicographically.

    Words seen fewer than ``min_count`` times are dropped (they will map to
    ``<unk>``). ``max_size`` bounds the number of regular words; the two
    reserved tokens come on top of that.
    """
    counts = Counter()
    for words in _lines(corpus):
        counts.update(words)
    if not counts:
        raise CorpusError("cannot build a vocabulary from an empty corpus")
    counts.pop(UNK, None)
    counts.pop(EOS, None)
    kept = sorted((w for w, c in counts.items() if c >= min_count),
                  key=lambda w: (-counts[w], w))
    if max_size is not None:
        kept = kept[:max_size]
    return Vocabulary(kept + [UNK, EOS])


@dataclass
class TokenStream:
    tokens: np.ndarray
    eos_id: int
    mode: str = DISCOURSE

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.int64)
        if self.mode not in MODES:
            raise CorpusError(f"unknown mode {self.mode!r}")

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def sentence_boundaries(self) -> np.ndarray:
        return np.flatnonzero(self.tokens == self.eos_id)

    def sentences(self) -> list[np.ndarray]:
        """Split at eos; each sentence keeps its terminating eos."""
        ends = self.sentence_boundaries + 1
        parts = np.split(self.tokens, ends)
        return [p for p in parts if len(p)]


def tokenize(text, vocab: Vocabulary, mode: str = DISCOURSE) -> TokenStream:
    ids: list[int] = []
    eos = vocab.eos_id
    for words in _lines(text):
        ids.extend(vocab.encode(words))
        ids.append(eos)
    return TokenStream(np.array(ids, dtype=np.int64), eos, mode)


def detokenize(stream: TokenStream, vocab: Vocabulary) -> list[str]:
    return [" ".join(vocab.decode(sent[:-1] if sent[-1] == stream.eos_id else sent))
            for sent in stream.sentences()]


@dataclass
class DocumentChunks:
    chunks: list[Counter]
    chunk_size_sentences: int

    def __len__(self) -> int:
        return len(self.chunks)

    def total_counts(self) -> Counter:
        total = Counter()
        for c in self.chunks:
            total.update(c)
        return total


def chunk_documents(stream: TokenStream, sentences_per_chunk: int = 100) -> DocumentChunks:
    """Group consecutive sentences into pseudo-documents of equal sentence count."""
    if sentences_per_chunk < 1:
        raise CorpusError("sentences_per_chunk must be >= 1")
    sentences = stream.sentences()
    if not sentences:
        raise CorpusError("stream contains no sentences")
    chunks = []
    for start in range(0, len(sentences), sentences_per_chunk):
        block = np.concatenate(sentences[start:start + sentences_per_chunk])
        chunks.append(Counter(block.tolist()))
    assert len(chunks) == math.ceil(len(sentences) / sentences_per_chunk)
    return DocumentChunks(chunks, sentences_per_chunk)


def batch_iterator(stream, batch_size: int, unroll_steps: int):
    """Yield ``(inputs, targets)`` blocks of shape ``(batch_size, unroll_steps)``.

    The stream is cut into ``batch_size`` contiguous lanes; block ``k`` of lane
    ``b`` continues exactly where block ``k-1`` stopped, so recurrent state can
    be carried from one block to the next.
    """
    tokens = np.asarray(getattr(stream, "tokens", stream), dtype=np.int64)
    if len(tokens) < batch_size * unroll_steps + 1:
        raise CorpusError(
            f"stream of {len(tokens)} tokens is too short for "
            f"batch_size={batch_size}, unroll_steps={unroll_steps}")
    lane_len = len(tokens) // batch_size
    lanes = tokens[:lane_len * batch_size].reshape(batch_size, lane_len)
    # Targets need one token past the last input in the lane.
    n_blocks = (lane_len - 1) // unroll_steps
    for k in range(n_blocks):
        s = k * unroll_steps
        yield lanes[:, s:s + unroll_steps], lanes[:, s + 1:s + unroll_steps + 1]


def num_batches(n_tokens: int, batch_size: int, unroll_steps: int) -> int:
    return (n_tokens // batch_size - 1) // unroll_steps
