"""Word error rate and paired-bootstrap probability of improvement.

The bootstrap is the paired per-utterance one: utterances are resampled
with replacement, the same indices for both systems, and system B "wins" a
replicate when its total error count is lower than A's. Ties count half.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


class WerError(ValueError):
    pass


@dataclass(frozen=True)
class UttErrors:
    utterance_id: str
    substitutions: int
    insertions: int
    deletions: int
    ref_len: int

    @property
    def errors(self) -> int:
        return self.substitutions + self.insertions + self.deletions


def align_wer(ref: Sequence[str], hyp: Sequence[str], utterance_id: str = "") -> UttErrors:
    """Minimum edit distance alignment with unit costs.

    When several alignments reach the minimum, the backtrace prefers a
    substitution, then an insertion, then a deletion at each step.
    """
    n, m = len(ref), len(hyp)
    # Plain lists: these tables are tiny and numpy scalar indexing dominates otherwise.
    d = [list(range(m + 1))]
    for i in range(1, n + 1):
        r = ref[i - 1]
        prev = d[i - 1]
        row = [i]
        for j in range(1, m + 1):
            row.append(min(prev[j - 1] + (r != hyp[j - 1]), row[j - 1] + 1, prev[j] + 1))
        d.append(row)
    subs = ins = dels = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and d[i][j] == d[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1]):
            subs += ref[i - 1] != hyp[j - 1]
            i, j = i - 1, j - 1
        elif j > 0 and d[i][j] == d[i][j - 1] + 1:
            ins += 1
            j -= 1
        else:
            dels += 1
            i -= 1
    assert subs + ins + dels == d[n][m]
    return UttErrors(utterance_id, int(subs), ins, dels, n)


def corpus_wer(errors: Sequence[UttErrors]) -> float:
    """WER in percent over a set of utterances."""
    if not errors:
        raise WerError("no utterances to score")
    ref_len = sum(e.ref_len for e in errors)
    if ref_len == 0:
        raise WerError("total reference length is zero")
    return 100.0 * sum(e.errors for e in errors) / ref_len


def score_corpus(refs: dict[str, Sequence[str]], hyps: dict[str, Sequence[str]]) -> list[UttErrors]:
    missing = set(refs) ^ set(hyps)
    if missing:
        raise WerError(f"reference and hypothesis sets differ, e.g. {sorted(missing)[0]!r}")
    return [align_wer(refs[u], hyps[u], u) for u in refs]


@dataclass(frozen=True)
class BootstrapResult:
    poi: float
    samples: int
    seed: int


def _error_counts(errors) -> tuple[list[str] | None, np.ndarray]:
    if len(errors) and isinstance(errors[0], UttErrors):
        return [e.utterance_id for e in errors], np.array([e.errors for e in errors], dtype=np.int64)
    return None, np.asarray(errors, dtype=np.int64)


def bootstrap_poi(errors_a, errors_b, samples: int = 10000, seed: int = 0,
                  block: int = 1000) -> BootstrapResult:
    """Probability (in percent) that system B improves over system A.

    ``errors_a``/``errors_b`` are per-utterance ``UttErrors`` (matched by id and
    order) or plain per-utterance error counts. Replicates are drawn in blocks
    of ``block`` from a single seeded generator, so the result depends only on
    ``seed`` and ``samples``.
    """
    if samples < 1:
        raise WerError("need at least one bootstrap sample")
    ids_a, a = _error_counts(errors_a)
    ids_b, b = _error_counts(errors_b)
    if len(a) != len(b) or (ids_a is not None and ids_b is not None and ids_a != ids_b):
        raise WerError("systems A and B were scored on different utterance sets")
    if len(a) == 0:
        raise WerError("no utterances to resample")
    rng = np.random.default_rng(seed)
    n = len(a)
    diff = b - a
    wins = ties = 0
    done = 0
    while done < samples:
        k = min(block, samples - done)
        idx = rng.integers(0, n, size=(k, n))
        delta = diff[idx].sum(axis=1)
        wins += int(np.count_nonzero(delta < 0))
        ties += int(np.count_nonzero(delta == 0))
        done += k
    return BootstrapResult(100.0 * (wins + 0.5 * ties) / samples, samples, seed)
