"""Combining the LM distribution with a cache distribution."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cache import SparseDist
from .infoweight import InfoWeights

LINEAR = "linear"
IW = "iw"

PROB_FLOOR = 1e-12
LOG_FLOOR = math.log(PROB_FLOOR)
MAX_GAMMA = 0.5


class MixError(ValueError):
    pass


@dataclass(frozen=True)
class MixConfig:
    """``lambda_interp`` is read in linear mode, ``gamma`` and ``iw`` in IW mode."""

    mode: str = LINEAR
    lambda_interp: float = 0.1
    gamma: float = 0.0
    iw: InfoWeights | None = None

    def __post_init__(self):
        if self.mode not in (LINEAR, IW):
            raise MixError(f"unknown interpolation mode {self.mode!r}")
        if self.mode == LINEAR and not 0.0 <= self.lambda_interp <= 1.0:
            raise MixError(f"interpolation weight {self.lambda_interp} outside [0, 1]")
        if self.mode == IW:
            if not 0.0 <= self.gamma <= MAX_GAMMA:
                raise MixError(f"gamma {self.gamma} outside [0, {MAX_GAMMA}]")
            if self.iw is None:
                raise MixError("IW interpolation needs an information-weight table")

    @property
    def is_identity(self) -> bool:
        """True when the mixture can only ever reproduce the LM distribution."""
        return self.lambda_interp == 0 if self.mode == LINEAR else self.gamma == 0


def _dense(p_cache, size: int) -> np.ndarray:
    if isinstance(p_cache, SparseDist):
        return p_cache.to_dense(size)
    return np.asarray(p_cache, dtype=np.float64)


def _is_empty(p_cache) -> bool:
    if isinstance(p_cache, SparseDist):
        return not p_cache
    return not np.any(p_cache)


def mix_linear(p_lm, p_cache, lam: float) -> np.ndarray:
    if not 0.0 <= lam <= 1.0:
        raise MixError(f"interpolation weight {lam} outside [0, 1]")
    p_lm = np.asarray(p_lm, dtype=np.float64)
    if lam == 0 or _is_empty(p_cache):
        return p_lm.copy()
    out = (1.0 - lam) * p_lm
    if isinstance(p_cache, SparseDist):
        out[p_cache.ids] += lam * p_cache.probs
    else:
        out += lam * np.asarray(p_cache, dtype=np.float64)
    return out


def mix_iw(p_lm, p_cache, gamma: float, weights) -> np.ndarray:
    """Per-word interpolation weight ``gamma * lambda_w``, renormalized over the vocabulary.

    Words outside the cache lose ``gamma * lambda_w`` of their LM mass, so the
    raw mixture no longer sums to one and has to be rescaled.
    """
    if not 0.0 <= gamma <= MAX_GAMMA:
        raise MixError(f"gamma {gamma} outside [0, {MAX_GAMMA}]")
    p_lm = np.asarray(p_lm, dtype=np.float64)
    if gamma == 0 or _is_empty(p_cache):
        return p_lm.copy()
    lam = weights.weights if isinstance(weights, InfoWeights) else np.asarray(weights, dtype=np.float64)
    w = gamma * lam
    m = (1.0 - w) * p_lm
    if isinstance(p_cache, SparseDist):
        m[p_cache.ids] += w[p_cache.ids] * p_cache.probs
    else:
        m += w * _dense(p_cache, len(p_lm))
    return m / m.sum()


def mix(p_lm, p_cache, config: MixConfig) -> np.ndarray:
    if config.mode == LINEAR:
        return mix_linear(p_lm, p_cache, config.lambda_interp)
    return mix_iw(p_lm, p_cache, config.gamma, config.iw)


class FloorCounter:
    """Counts how often a log probability had to be floored."""

    def __init__(self):
        self.count = 0

    def __repr__(self):
        return f"FloorCounter({self.count})"


def log_prob_of(p, word_id: int, floor_counter: FloorCounter | None = None) -> float:
    prob = float(p[word_id])
    if prob < PROB_FLOOR:
        if floor_counter is not None:
            floor_counter.count += 1
        return LOG_FLOOR
    return math.log(prob)
