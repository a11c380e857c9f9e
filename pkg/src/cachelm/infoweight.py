"""Per-word information weights: one minus the normalized entropy of a word's
distribution over document chunks.

A word concentrated in a single chunk gets weight 1; a word spread evenly over
all chunks gets weight 0. The same measure is the classic log-entropy global
weight used for LSA term-document matrices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .corpus import DocumentChunks, Vocabulary


class InfoWeightError(ValueError):
    pass


@dataclass
class InfoWeights:
    """Weight table indexed by word id, together with the vocabulary it belongs to."""

    vocab: Vocabulary
    weights: np.ndarray
    num_documents: int
    source_chunk_size: int

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.shape != (len(self.vocab),):
            raise InfoWeightError(
                f"weight table has shape {self.weights.shape}, vocabulary has {len(self.vocab)} words")

    def __getitem__(self, word_id) -> float:
        return float(self.weights[word_id])

    def of_word(self, word: str) -> float:
        return self[self.vocab.lookup(word)]

    def as_dict(self) -> dict[str, float]:
        return {w: float(x) for w, x in zip(self.vocab.words, self.weights)}


def compute_info_weights(chunks: DocumentChunks, vocab: Vocabulary) -> InfoWeights:
    n_docs = len(chunks)
    if n_docs < 2:
        raise InfoWeightError(f"need at least 2 document chunks, got {n_docs}")
    V = len(vocab)
    sparse = []
    totals = np.zeros(V)
    for j, chunk in enumerate(chunks.chunks):
        ids = np.fromiter(chunk.keys(), dtype=np.int64, count=len(chunk))
        vals = np.fromiter(chunk.values(), dtype=np.float64, count=len(chunk))
        if len(ids) and (ids.max() >= V or ids.min() < 0):
            raise InfoWeightError(f"chunk {j} holds a word id outside the vocabulary")
        totals[ids] += vals
        sparse.append((ids, vals))
    neg_entropy = np.zeros(V)
    for ids, vals in sparse:
        p = vals / totals[ids]
        neg_entropy[ids] += p * np.log(p)
    seen = totals > 0
    weights = np.zeros(V)
    # Unseen words carry no evidence of content value and stay at 0.
    weights[seen] = 1.0 + neg_entropy[seen] / math.log(n_docs)
    np.clip(weights, 0.0, 1.0, out=weights)
    return InfoWeights(vocab, weights, n_docs, chunks.chunk_size_sentences)


def save_info_weights(iw: InfoWeights, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"#chunk_size={iw.source_chunk_size}\t#num_docs={iw.num_documents}\n")
        for word, lam in zip(iw.vocab.words, iw.weights):
            f.write(f"{word}\t{float(lam)!r}\n")


def load_info_weights(path, vocab: Vocabulary | None = None) -> InfoWeights:
    """Read a weight table. With ``vocab`` given, the table is re-indexed onto it
    and every vocabulary word must be present."""
    words, lams = [], []
    chunk_size = num_docs = 0
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if lineno == 1 and line.startswith("#"):
                try:
                    fields = dict(part.lstrip("#").split("=", 1) for part in line.split("\t"))
                    chunk_size = int(fields["chunk_size"])
                    num_docs = int(fields["num_docs"])
                except (KeyError, ValueError) as e:
                    raise InfoWeightError(f"{path}:{lineno}: malformed header {line!r}") from e
                continue
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise InfoWeightError(f"{path}:{lineno}: expected 'word<TAB>weight', got {line!r}")
            try:
                lam = float(parts[1])
            except ValueError:
                raise InfoWeightError(f"{path}:{lineno}: weight {parts[1]!r} is not a number") from None
            if not 0.0 <= lam <= 1.0:
                raise InfoWeightError(f"{path}:{lineno}: weight {lam} outside [0, 1]")
            words.append(parts[0])
            lams.append(lam)
    if vocab is None:
        return InfoWeights(Vocabulary(words), np.array(lams), num_docs, chunk_size)
    table = dict(zip(words, lams))
    missing = [w for w in vocab.words if w not in table]
    if missing:
        raise InfoWeightError(f"{path}: no weight for {len(missing)} vocabulary words, e.g. {missing[0]!r}")
    return InfoWeights(vocab, np.array([table[w] for w in vocab.words]), num_docs, chunk_size)
