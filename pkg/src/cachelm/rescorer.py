"""N-best rescoring with a cache-augmented LSTM.

Each hypothesis is scored as

    acoustic_logp + lm_scale * sum_t log P_new(w_t) + L * word_insertion_penalty

where ``P_new`` interpolates, per token, the first-pass n-gram probability with
the LSTM+cache probability. The LSTM runs at sentence level (fresh state per
hypothesis, eos as start symbol) while the cache is handed from the selected
hypothesis of one utterance to every hypothesis of the next.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .cache import CacheConfig, CacheState, cache_insert, cache_prob, clone_cache, new_cache
from .corpus import SENTENCE, Vocabulary
from .infoweight import InfoWeights
from .lstm import output_distribution, run_lstm
from .mixer import LOG_FLOOR, PROB_FLOOR, MixConfig, mix
from .wer import UttErrors, align_wer, corpus_wer

logger = logging.getLogger(__name__)


class RescoreError(ValueError):
    pass


@dataclass
class Hypothesis:
    words: list[str]
    acoustic_logp: float
    ngram_logp: float
    rank: int = 0
    ngram_word_logps: list[float] | None = None

    def __post_init__(self):
        if not (math.isfinite(self.acoustic_logp) and math.isfinite(self.ngram_logp)):
            raise RescoreError(f"non-finite first-pass score in hypothesis {' '.join(self.words)!r}")
        if self.ngram_word_logps is not None and len(self.ngram_word_logps) not in (self.L, self.L + 1):
            raise RescoreError(
                f"{len(self.ngram_word_logps)} per-word n-gram scores for a {self.L}-word hypothesis")

    @property
    def L(self) -> int:
        return len(self.words)

    def ngram_token_logps(self) -> np.ndarray:
        """n-gram log probability for each scored token (the words, then eos).

        Without a per-word column the hypothesis score is split evenly over the
        L + 1 tokens. A per-word column without the eos term leaves the
        remainder of the hypothesis score to eos.
        """
        n = self.L + 1
        if self.ngram_word_logps is None:
            return np.full(n, self.ngram_logp / n)
        scores = np.asarray(self.ngram_word_logps, dtype=np.float64)
        if len(scores) == self.L:
            scores = np.append(scores, self.ngram_logp - scores.sum())
        return scores


@dataclass
class NBestList:
    utterance_id: str
    hypotheses: list[Hypothesis]

    def __len__(self) -> int:
        return len(self.hypotheses)


@dataclass(frozen=True)
class RescoreConfig:
    lambda_lstm: float = 0.5
    lm_scale: float = 1.0
    word_insertion_penalty: float = 0.0
    cache: CacheConfig = field(default_factory=lambda: CacheConfig(capacity=0))
    mix: MixConfig = field(default_factory=MixConfig)
    transfer_cache: bool = True

    def __post_init__(self):
        if not 0.0 <= self.lambda_lstm <= 1.0:
            raise RescoreError(f"lambda_lstm {self.lambda_lstm} outside [0, 1]")
        if not self.lm_scale > 0:
            raise RescoreError("lm_scale must be positive")


@dataclass
class ScoredHypothesis:
    total: float
    lm_sum: float
    lstm_logps: np.ndarray
    new_logps: np.ndarray
    cache: CacheState


class LstmScorer:
    """Sentence-level LSTM outputs for token sequences, memoized.

    Hypotheses in an N-best list share most of their words and are rescored
    many times during a grid search, so outputs are cached per token sequence.
    """

    def __init__(self, model, vocab: Vocabulary, iw: InfoWeights | None = None):
        self.model = model
        self.vocab = vocab
        self.iw = iw
        if model.vocab_digest and model.vocab_digest != vocab.digest():
            raise RescoreError("model was trained with a different vocabulary")
        if iw is not None and len(iw.weights) != len(vocab):
            raise RescoreError("information-weight table does not match the vocabulary")
        self._memo: dict[tuple[int, ...], tuple[np.ndarray, np.ndarray]] = {}

    def encode(self, words: Sequence[str]) -> tuple[int, ...]:
        return tuple(self.vocab.encode(words))

    def outputs(self, ids: tuple[int, ...]):
        """Hidden states and distributions for inputs ``eos w_1 .. w_L``."""
        hit = self._memo.get(ids)
        if hit is None:
            eos = self.vocab.eos_id
            hs, _ = run_lstm(self.model, (eos,) + ids, SENTENCE, reset_id=eos)
            hit = (hs, output_distribution(self.model, hs))
            self._memo[ids] = hit
        return hit

    def weight(self, word_id: int) -> float:
        return float(self.iw.weights[word_id]) if self.iw is not None else 1.0


def _logaddexp_weighted(log_a: float, wa: float, log_b: float, wb: float) -> float:
    terms = [math.log(w) + x for w, x in ((wa, log_a), (wb, log_b)) if w > 0]
    if len(terms) == 1:
        return terms[0]
    hi = max(terms)
    return hi + math.log(sum(math.exp(t - hi) for t in terms))


def score_hypothesis(scorer: LstmScorer, hyp: Hypothesis, cache: CacheState | None,
                     config: RescoreConfig) -> ScoredHypothesis:
    """Score one hypothesis starting from a clone of ``cache``.

    The returned ``cache`` is this hypothesis' own outgoing cache; the incoming
    one is never modified.
    """
    if config.cache.selective_threshold > 0 and scorer.iw is None:
        raise RescoreError("a selective cache needs an information-weight table")
    ids = scorer.encode(hyp.words)
    targets = ids + (scorer.vocab.eos_id,)
    hs, probs = scorer.outputs(ids)
    ngram = hyp.ngram_token_logps()
    out_cache = clone_cache(cache) if cache is not None else new_cache(config.cache, scorer.model.hidden_size)
    lstm_logps = np.empty(len(targets))
    new_logps = np.empty(len(targets))
    lam = config.lambda_lstm
    for t, target in enumerate(targets):
        p_lm = probs[t]
        if config.cache.enabled and len(out_cache):
            p = mix(p_lm, cache_prob(out_cache, hs[t], config.cache), config.mix)
        else:
            p = p_lm
        pt = float(p[target])
        lstm_logps[t] = math.log(pt) if pt >= PROB_FLOOR else LOG_FLOOR
        new_logps[t] = _logaddexp_weighted(ngram[t], 1.0 - lam, lstm_logps[t], lam)
        if config.cache.enabled:
            cache_insert(out_cache, target, hs[t], scorer.weight(target), config.cache)
    # With the LSTM switched off the first-pass LM score is reproduced exactly,
    # not as a float sum of its even split.
    lm_sum = hyp.ngram_logp if lam == 0 else float(np.sum(new_logps))
    total = hyp.acoustic_logp + config.lm_scale * lm_sum + hyp.L * config.word_insertion_penalty
    return ScoredHypothesis(total, lm_sum, lstm_logps, new_logps, out_cache)


@dataclass
class Selection:
    utterance_id: str
    index: int
    hypothesis: Hypothesis
    total: float


@dataclass
class ScoreRow:
    utterance_id: str
    index: int
    rank: int
    acoustic_logp: float
    ngram_logp: float
    lstm_logp: float
    lm_sum: float
    L: int
    total: float
    selected: bool


@dataclass
class SessionResult:
    selections: list[Selection]
    table: list[ScoreRow]
    final_cache: CacheState | None = None
    caches: list[CacheState] = field(default_factory=list)

    def best_words(self) -> dict[str, list[str]]:
        return {s.utterance_id: s.hypothesis.words for s in self.selections}

    def selections_tsv(self) -> str:
        rows = ["utt_id\tindex\trank\ttotal\twords"]
        rows += [f"{s.utterance_id}\t{s.index}\t{s.hypothesis.rank}\t{s.total!r}\t{' '.join(s.hypothesis.words)}"
                 for s in self.selections]
        return "\n".join(rows) + "\n"

    def table_tsv(self) -> str:
        rows = ["utt_id\tindex\trank\tacoustic_logp\tngram_logp\tlstm_logp\tlm_sum\tL\ttotal\tselected"]
        rows += [f"{r.utterance_id}\t{r.index}\t{r.rank}\t{r.acoustic_logp!r}\t{r.ngram_logp!r}\t"
                 f"{r.lstm_logp!r}\t{r.lm_sum!r}\t{r.L}\t{r.total!r}\t{int(r.selected)}" for r in self.table]
        return "\n".join(rows) + "\n"


def rescore_session(scorer: LstmScorer, lists: Sequence[NBestList], config: RescoreConfig) -> SessionResult:
    """Rescore utterances in spoken order, carrying the winner's cache forward."""
    seen = set()
    session_cache = new_cache(config.cache, scorer.model.hidden_size)
    selections, table, caches = [], [], []
    for nbest in lists:
        if not nbest.hypotheses:
            raise RescoreError(f"utterance {nbest.utterance_id!r} has an empty N-best list")
        if nbest.utterance_id in seen:
            raise RescoreError(f"utterance {nbest.utterance_id!r} appears twice in the session")
        seen.add(nbest.utterance_id)
        scored = [score_hypothesis(scorer, h, session_cache, config) for h in nbest.hypotheses]
        # Highest total wins; on ties the lowest index (first-pass order) does.
        best = max(range(len(scored)), key=lambda k: (scored[k].total, -k))
        for k, (h, s) in enumerate(zip(nbest.hypotheses, scored)):
            table.append(ScoreRow(nbest.utterance_id, k, h.rank, h.acoustic_logp, h.ngram_logp,
                                  float(np.sum(s.lstm_logps)), s.lm_sum, h.L, s.total, k == best))
        selections.append(Selection(nbest.utterance_id, best, nbest.hypotheses[best], scored[best].total))
        if config.transfer_cache:
            session_cache = scored[best].cache
        caches.append(session_cache)
    return SessionResult(selections, table, session_cache, caches)


def session_wer(result: SessionResult, references: dict[str, Sequence[str]]) -> tuple[float, list[UttErrors]]:
    errors = []
    for s in result.selections:
        if s.utterance_id not in references:
            raise RescoreError(f"no reference for utterance {s.utterance_id!r}")
        errors.append(align_wer(references[s.utterance_id], s.hypothesis.words, s.utterance_id))
    return corpus_wer(errors), errors


def first_pass_selection(lists: Sequence[NBestList]) -> dict[str, list[str]]:
    """The hypothesis ranked first by the first pass (lowest rank, then position)."""
    out = {}
    for nbest in lists:
        best = min(range(len(nbest)), key=lambda k: (nbest.hypotheses[k].rank, k))
        out[nbest.utterance_id] = nbest.hypotheses[best].words
    return out


# --- grid search -------------------------------------------------------------

GRID_KEYS = ("lambda_lstm", "lm_scale", "word_insertion_penalty", "lambda_interp", "gamma",
             "phi", "theta", "decay", "cache_size")


def apply_point(base: RescoreConfig, point: dict) -> RescoreConfig:
    unknown = set(point) - set(GRID_KEYS)
    if unknown:
        raise RescoreError(f"unknown grid parameters: {sorted(unknown)}")
    cache_kw = {}
    if "phi" in point:
        cache_kw["selective_threshold"] = point["phi"]
    if "theta" in point:
        cache_kw["theta"] = point["theta"]
    if "decay" in point:
        cache_kw["decay"] = point["decay"]
    if "cache_size" in point:
        cache_kw["capacity"] = int(point["cache_size"])
    mix_kw = {k: point[k] for k in ("lambda_interp", "gamma") if k in point}
    top = {k: point[k] for k in ("lambda_lstm", "lm_scale", "word_insertion_penalty") if k in point}
    return replace(base, cache=replace(base.cache, **cache_kw), mix=replace(base.mix, **mix_kw), **top)


@dataclass
class GridPoint:
    params: dict
    config: RescoreConfig
    wer: float
    errors: list[UttErrors]


@dataclass
class GridResult:
    points: list[GridPoint]
    best: GridPoint

    def to_tsv(self) -> str:
        keys = sorted({k for p in self.points for k in p.params}, key=GRID_KEYS.index)
        rows = ["\t".join(keys + ["wer", "best"])]
        for p in self.points:
            rows.append("\t".join([repr(p.params[k]) for k in keys] + [repr(p.wer), str(int(p is self.best))]))
        return "\n".join(rows) + "\n"


def expand_grid(grid: dict[str, Iterable]) -> list[dict]:
    keys = [k for k in GRID_KEYS if k in grid]
    unknown = set(grid) - set(GRID_KEYS)
    if unknown:
        raise RescoreError(f"unknown grid parameters: {sorted(unknown)}")
    values = [list(grid[k]) for k in keys]
    if not keys or any(not v for v in values):
        raise RescoreError("empty parameter grid")
    return [dict(zip(keys, combo)) for combo in itertools.product(*values)]


def _tie_key(point: GridPoint):
    mixw = point.config.mix.lambda_interp if point.config.mix.mode == "linear" else point.config.mix.gamma
    return (point.wer, mixw, point.config.lm_scale)


def grid_search(scorer: LstmScorer, lists: Sequence[NBestList], references: dict[str, Sequence[str]],
                grid: dict[str, Iterable], base: RescoreConfig) -> GridResult:
    """Exhaustive search for the configuration with the lowest WER.

    Ties go to the smaller cache interpolation weight, then the smaller LM
    scale, then the earlier grid point.
    """
    missing = [n.utterance_id for n in lists if n.utterance_id not in references]
    if missing:
        raise RescoreError(f"no reference for utterance {missing[0]!r}")
    points = []
    for params in expand_grid(grid):
        config = apply_point(base, params)
        wer, errors = session_wer(rescore_session(scorer, lists, config), references)
        points.append(GridPoint(params, config, wer, errors))
        logger.info("grid point %s: WER %.3f", params, wer)
    best = min(points, key=_tie_key)
    return GridResult(points, best)


# --- file formats ------------------------------------------------------------

def read_nbest(path) -> list[NBestList]:
    """Parse ``utt_id, rank, acoustic_logp, ngram_logp, words[, per-word n-gram logps]`` TSV."""
    lists: list[NBestList] = []
    index: dict[str, NBestList] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) not in (5, 6):
                raise RescoreError(f"{path}:{lineno}: expected 5 or 6 tab-separated fields, got {len(parts)}")
            utt = parts[0]
            try:
                rank = int(parts[1])
                ac = float(parts[2])
                ng = float(parts[3])
                per_word = [float(x) for x in parts[5].split()] if len(parts) == 6 else None
                hyp = Hypothesis(parts[4].split(), ac, ng, rank, per_word)
            except (ValueError, RescoreError) as e:
                raise RescoreError(f"{path}:{lineno}: {e}") from None
            if utt not in index:
                index[utt] = NBestList(utt, [])
                lists.append(index[utt])
            elif lists[-1].utterance_id != utt:
                raise RescoreError(f"{path}:{lineno}: utterance {utt!r} is not contiguous")
            index[utt].hypotheses.append(hyp)
    return lists


def write_nbest(lists: Sequence[NBestList], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for nbest in lists:
            for h in nbest.hypotheses:
                fields_ = [nbest.utterance_id, str(h.rank), repr(h.acoustic_logp), repr(h.ngram_logp),
                           " ".join(h.words)]
                if h.ngram_word_logps is not None:
                    fields_.append(" ".join(repr(x) for x in h.ngram_word_logps))
                f.write("\t".join(fields_) + "\n")


def read_references(path) -> dict[str, list[str]]:
    refs = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            utt, _, text = line.partition("\t")
            if utt in refs:
                raise RescoreError(f"{path}:{lineno}: duplicate utterance {utt!r}")
            refs[utt] = text.split()
    return refs


def write_references(refs: dict[str, Sequence[str]], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for utt, words in refs.items():
            f.write(f"{utt}\t{' '.join(words)}\n")
