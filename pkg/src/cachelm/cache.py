"""Word caches for LM adaptation.

Two cache distributions are provided over the same FIFO store:

* the regular cache, a (optionally exponentially decayed) unigram over the
  words currently held, and
* the neural cache, which weighs each stored word by ``exp(theta * h_t . h_j)``
  where ``h_j`` is the LSTM output that predicted it and ``h_t`` the current one.

An information-weight threshold ``phi`` makes the cache selective: words whose
weight falls below it are never stored, although the clock still advances.
"""

from __future__ import annotations

import copy
from collections import deque
from dataclasses import dataclass

import numpy as np

REGULAR = "regular"
NEURAL = "neural"


class CacheError(ValueError):
    pass


@dataclass(frozen=True)
class CacheConfig:
    capacity: int = 100
    kind: str = NEURAL
    decay: float = 0.0
    theta: float = 0.3
    selective_threshold: float = 0.0
    normalize_hidden: bool = False
    reset_at_eos: bool = False

    def __post_init__(self):
        if self.capacity < 0:
            raise CacheError("capacity must be >= 0")
        if self.kind not in (REGULAR, NEURAL):
            raise CacheError(f"unknown cache kind {self.kind!r}")
        if self.decay < 0:
            raise CacheError("decay must be >= 0")
        # theta == 0 is accepted so the flat limit can be tested; the CLI demands > 0.
        if self.theta < 0:
            raise CacheError("theta must be >= 0")
        if not 0.0 <= self.selective_threshold <= 1.0:
            raise CacheError("selective threshold must lie in [0, 1]")

    @property
    def enabled(self) -> bool:
        return self.capacity > 0


@dataclass(frozen=True)
class CacheEntry:
    word_id: int
    hidden: np.ndarray | None
    timestep: int
    info_weight: float


@dataclass
class SparseDist:
    """Distribution over a handful of word ids; everything else has probability 0."""

    ids: np.ndarray
    probs: np.ndarray

    @classmethod
    def empty(cls) -> "SparseDist":
        return cls(np.zeros(0, dtype=np.int64), np.zeros(0))

    def __len__(self) -> int:
        return len(self.ids)

    def __bool__(self) -> bool:
        return len(self.ids) > 0

    def get(self, word_id: int) -> float:
        hit = np.flatnonzero(self.ids == word_id)
        return float(self.probs[hit[0]]) if len(hit) else 0.0

    def as_dict(self) -> dict[int, float]:
        return {int(i): float(p) for i, p in zip(self.ids, self.probs)}

    def to_dense(self, size: int) -> np.ndarray:
        out = np.zeros(size)
        out[self.ids] = self.probs
        return out


class CacheState:
    """Bounded FIFO of cache entries plus a clock.

    The clock counts every insertion attempt, including those rejected by the
    selective threshold, so decay ages are measured in tokens.
    """

    def __init__(self, capacity: int, hidden_size: int | None = None):
        self.capacity = capacity
        self.hidden_size = hidden_size
        self.entries: deque[CacheEntry] = deque(maxlen=capacity) if capacity > 0 else deque(maxlen=0)
        self.current_time = 0

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __repr__(self) -> str:
        return f"CacheState(capacity={self.capacity}, size={len(self)}, time={self.current_time})"

    def word_ids(self) -> list[int]:
        return [e.word_id for e in self.entries]

    def clear(self) -> None:
        self.entries.clear()

    def same_as(self, other: "CacheState") -> bool:
        """Structural equality, hidden vectors compared bit for bit."""
        if (self.capacity, self.current_time, len(self)) != (other.capacity, other.current_time, len(other)):
            return False
        for a, b in zip(self.entries, other.entries):
            if (a.word_id, a.timestep, a.info_weight) != (b.word_id, b.timestep, b.info_weight):
                return False
            if (a.hidden is None) != (b.hidden is None):
                return False
            if a.hidden is not None and a.hidden.tobytes() != b.hidden.tobytes():
                return False
        return True


def new_cache(config: CacheConfig, hidden_size: int | None = None) -> CacheState:
    return CacheState(config.capacity, hidden_size)


def clone_cache(cache: CacheState) -> CacheState:
    # Entries are frozen and their hidden vectors are never written in place,
    # so copying the deque is enough to isolate the clone.
    out = copy.copy(cache)
    out.entries = deque(cache.entries, maxlen=cache.entries.maxlen)
    return out


def cache_insert(cache: CacheState, word_id: int, hidden, info_weight: float,
                 config: CacheConfig) -> CacheState:
    """Admit ``word_id`` (with the hidden state that predicted it) if its weight
    reaches the selective threshold. Mutates and returns ``cache``."""
    if hidden is not None:
        hidden = np.array(hidden, dtype=np.float64)
        if hidden.ndim != 1:
            raise CacheError(f"hidden state must be a vector, got shape {hidden.shape}")
        if cache.hidden_size is None:
            cache.hidden_size = hidden.shape[0]
        elif hidden.shape[0] != cache.hidden_size:
            raise CacheError(f"hidden state has size {hidden.shape[0]}, cache expects {cache.hidden_size}")
        hidden.flags.writeable = False
    elif config.kind == NEURAL and config.enabled:
        raise CacheError("neural cache entries need a hidden state")
    if cache.capacity > 0 and info_weight >= config.selective_threshold:
        cache.entries.append(CacheEntry(int(word_id), hidden, cache.current_time, float(info_weight)))
    cache.current_time += 1
    return cache


def _aggregate(word_ids: np.ndarray, weights: np.ndarray) -> SparseDist:
    ids, inverse = np.unique(word_ids, return_inverse=True)
    mass = np.zeros(len(ids))
    np.add.at(mass, inverse, weights)
    return SparseDist(ids, mass / mass.sum())


def regular_cache_prob(cache: CacheState, config: CacheConfig) -> SparseDist:
    if not len(cache):
        return SparseDist.empty()
    word_ids = np.fromiter((e.word_id for e in cache.entries), dtype=np.int64, count=len(cache))
    if config.decay == 0:
        return _aggregate(word_ids, np.ones(len(word_ids)))
    ages = cache.current_time - np.fromiter((e.timestep for e in cache.entries), dtype=np.float64,
                                            count=len(cache))
    # Shift by the youngest age; the constant cancels in the normalization.
    return _aggregate(word_ids, np.exp(-config.decay * (ages - ages.min())))


def _hidden_matrix(cache: CacheState) -> np.ndarray:
    return np.stack([e.hidden for e in cache.entries])


def neural_cache_prob(cache: CacheState, h_t, config: CacheConfig) -> SparseDist:
    h_t = np.asarray(h_t, dtype=np.float64)
    if not np.all(np.isfinite(h_t)):
        raise CacheError("query hidden state contains non-finite values")
    if not len(cache):
        return SparseDist.empty()
    if cache.hidden_size is not None and h_t.shape != (cache.hidden_size,):
        raise CacheError(f"query has shape {h_t.shape}, cache holds vectors of size {cache.hidden_size}")
    H = _hidden_matrix(cache)
    sims = H @ h_t
    if config.normalize_hidden:
        norms = np.linalg.norm(H, axis=1) * np.linalg.norm(h_t)
        sims = np.divide(sims, norms, out=np.zeros_like(sims), where=norms > 0)
    logits = config.theta * sims
    scores = np.exp(logits - logits.max())
    word_ids = np.fromiter((e.word_id for e in cache.entries), dtype=np.int64, count=len(cache))
    return _aggregate(word_ids, scores)


def cache_prob(cache: CacheState, h_t, config: CacheConfig) -> SparseDist:
    if config.kind == REGULAR:
        return regular_cache_prob(cache, config)
    return neural_cache_prob(cache, h_t, config)

