"""Perplexity of cache-augmented LMs and the per-information-weight bucket analysis.

Every evaluation is a single left-to-right pass. At each position the LM
emits its distribution and hidden state, the cache distribution is built from
that hidden state, the two are mixed and the target is scored; only then is
``(target, hidden state)`` offered to the cache.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cache import CacheConfig, cache_insert, cache_prob, new_cache
from .corpus import DISCOURSE, MODES, Vocabulary
from .infoweight import InfoWeights
from .mixer import FloorCounter, MixConfig, log_prob_of, mix

BUCKET_EDGES = (0.2, 0.4, 0.6, 0.8)
BUCKET_LABELS = ("0.0-0.2", "0.2-0.4", "0.4-0.6", "0.6-0.8", "0.8-1.0")
NO_CACHE = CacheConfig(capacity=0)


class EvaluationError(ValueError):
    pass


def bucket_of(weights) -> np.ndarray:
    """Index of the width-0.2 bucket, the last one closed at 1.0."""
    return np.searchsorted(BUCKET_EDGES, np.asarray(weights), side="right")


@dataclass
class BucketStats:
    label: str
    tokens: int
    fraction_higher: float
    mean_rel_improvement: float


@dataclass
class EvalReport:
    perplexity: float
    token_count: int
    floor_events: int
    log_prob_sum: float
    buckets: list[BucketStats] = field(default_factory=list)

    def to_tsv(self) -> str:
        lines = ["key\tvalue",
                 f"perplexity\t{self.perplexity!r}",
                 f"token_count\t{self.token_count}",
                 f"floor_events\t{self.floor_events}",
                 f"log_prob_sum\t{self.log_prob_sum!r}"]
        if self.buckets:
            lines.append("")
            lines.append(bucket_table_tsv(self.buckets))
        return "\n".join(lines) + "\n"


def bucket_table_tsv(buckets: list[BucketStats]) -> str:
    rows = ["bucket\ttokens\tfraction_higher\tmean_rel_improvement"]
    rows += [f"{b.label}\t{b.tokens}\t{b.fraction_higher!r}\t{b.mean_rel_improvement!r}" for b in buckets]
    return "\n".join(rows)


@dataclass
class _Trace:
    """Per-token record of one system's pass."""

    log_probs: np.ndarray
    mixed: np.ndarray
    baseline: np.ndarray
    weights: np.ndarray | None
    floor_events: int


def _lm_outputs(model, inputs, mode):
    if hasattr(model, "iter_outputs"):
        return model.iter_outputs(inputs, mode)
    raise EvaluationError(f"{type(model).__name__} does not provide iter_outputs()")


def _check_inputs(model, tokens, mode, vocab, iw):
    if mode not in MODES:
        raise EvaluationError(f"unknown evaluation mode {mode!r}")
    if vocab is not None:
        digest = getattr(model, "vocab_digest", "")
        if digest and digest != vocab.digest():
            raise EvaluationError("model was trained with a different vocabulary")
    if len(tokens) == 0:
        raise EvaluationError("cannot evaluate an empty stream")
    V = model.vocab_size
    if tokens.min() < 0 or tokens.max() >= V:
        raise EvaluationError(f"stream holds ids outside the model vocabulary (size {V})")
    if iw is not None and len(iw.weights) != V:
        raise EvaluationError("information-weight table does not match the model vocabulary")


def _run(model, stream, systems, mode, iw: InfoWeights | None, eos_id: int | None,
         vocab: Vocabulary | None = None) -> list[_Trace]:
    tokens = np.asarray(getattr(stream, "tokens", stream), dtype=np.int64)
    for source in (stream, model):
        if eos_id is None:
            eos_id = getattr(source, "eos_id", None)
    if eos_id is None:
        raise EvaluationError("eos id unknown; pass eos_id or a TokenStream")
    _check_inputs(model, tokens, mode, vocab, iw)
    for cache_cfg, _ in systems:
        if cache_cfg.selective_threshold > 0 and iw is None:
            raise EvaluationError("a selective cache needs an information-weight table")
    # Prepending eos lets the first token be predicted like any sentence start.
    inputs = np.concatenate([[eos_id], tokens[:-1]])
    T = len(tokens)
    caches = [new_cache(c, getattr(model, "hidden_size", None)) for c, _ in systems]
    floors = [FloorCounter() for _ in systems]
    log_probs = np.empty((len(systems), T))
    mixed = np.empty((len(systems), T))
    baseline = np.empty(T)
    lam = iw.weights if iw is not None else None
    t = 0
    for hs, probs in _lm_outputs(model, inputs, mode):
        for h, p_lm in zip(hs, probs):
            target = tokens[t]
            baseline[t] = p_lm[target]
            w_target = float(lam[target]) if lam is not None else 1.0
            for k, ((cache_cfg, mix_cfg), cache) in enumerate(zip(systems, caches)):
                if cache_cfg.enabled and len(cache):
                    p = mix(p_lm, cache_prob(cache, h, cache_cfg), mix_cfg)
                else:
                    p = p_lm
                mixed[k, t] = p[target]
                log_probs[k, t] = log_prob_of(p, target, floors[k])
                if cache_cfg.enabled:
                    cache_insert(cache, target, h, w_target, cache_cfg)
                    if cache_cfg.reset_at_eos and target == eos_id:
                        cache.clear()
            t += 1
    weights = lam[tokens] if lam is not None else None
    return [_Trace(log_probs[k], mixed[k], baseline, weights, floors[k].count)
            for k in range(len(systems))]


def _bucket_stats(trace: _Trace) -> list[BucketStats]:
    idx = bucket_of(trace.weights)
    out = []
    for b, label in enumerate(BUCKET_LABELS):
        sel = idx == b
        n = int(sel.sum())
        out.append(BucketStats(label, n, *_compare(trace.mixed[sel], trace.baseline[sel])))
    return out


def _compare(mixed: np.ndarray, baseline: np.ndarray) -> tuple[float, float]:
    if len(mixed) == 0:
        return math.nan, math.nan
    higher = mixed > baseline
    frac = float(np.mean(mixed >= baseline))
    rel = float(np.mean((mixed[higher] - baseline[higher]) / baseline[higher])) if higher.any() else 0.0
    return frac, rel


def _report(trace: _Trace) -> EvalReport:
    total = float(np.sum(trace.log_probs))
    T = len(trace.log_probs)
    buckets = _bucket_stats(trace) if trace.weights is not None else []
    return EvalReport(math.exp(-total / T), T, trace.floor_events, total, buckets)


def evaluate_perplexity(model, stream, cache_config: CacheConfig | None = None,
                        mix_config: MixConfig | None = None, mode: str = DISCOURSE,
                        iw: InfoWeights | None = None, eos_id: int | None = None,
                        vocab: Vocabulary | None = None) -> EvalReport:
    """Perplexity of ``model`` combined with a cache over ``stream``.

    With ``cache_config`` omitted (or of capacity 0) this is the plain LM
    perplexity. ``iw`` supplies the admission weights for a selective cache and
    enables the per-bucket breakdown in the report.
    """
    cache_config = cache_config or NO_CACHE
    mix_config = mix_config or MixConfig()
    trace, = _run(model, stream, [(cache_config, mix_config)], mode, iw, eos_id, vocab)
    return _report(trace)


@dataclass
class SystemAnalysis:
    name: str
    report: EvalReport
    overall_fraction: float
    fraction_above_phi: float
    mean_rel_improvement: float
    mean_rel_improvement_above_phi: float
    tokens_above_phi: int


@dataclass
class BucketAnalysis:
    phi: float
    systems: list[SystemAnalysis]

    def table(self) -> str:
        """Aligned text table: one row per bucket, one column per system (percent)."""
        names = [s.name for s in self.systems]
        width = max(12, *(len(n) for n in names)) + 2
        lines = ["IW range".ljust(10) + "tokens".rjust(8) + "".join(n.rjust(width) for n in names)]
        for b, label in enumerate(BUCKET_LABELS):
            n = self.systems[0].report.buckets[b].tokens
            cells = "".join(f"{100 * s.report.buckets[b].fraction_higher:{width}.1f}" for s in self.systems)
            lines.append(label.ljust(10) + f"{n:8d}" + cells)
        lines.append("all".ljust(10) + f"{self.systems[0].report.token_count:8d}"
                     + "".join(f"{100 * s.overall_fraction:{width}.1f}" for s in self.systems))
        lines.append(f"> {self.phi:g}".ljust(10) + " " * 8
                     + "".join(f"{100 * s.fraction_above_phi:{width}.1f}" for s in self.systems))
        return "\n".join(lines)

    def to_tsv(self) -> str:
        rows = ["system\tbucket\ttokens\tfraction_higher\tmean_rel_improvement"]
        for s in self.systems:
            for b in s.report.buckets:
                rows.append(f"{s.name}\t{b.label}\t{b.tokens}\t{b.fraction_higher!r}\t{b.mean_rel_improvement!r}")
            rows.append(f"{s.name}\tall\t{s.report.token_count}\t{s.overall_fraction!r}\t{s.mean_rel_improvement!r}")
            rows.append(f"{s.name}\t>{self.phi!r}\t{s.tokens_above_phi}\t{s.fraction_above_phi!r}"
                        f"\t{s.mean_rel_improvement_above_phi!r}")
        return "\n".join(rows) + "\n"


def bucket_analysis(model, stream, systems, iw: InfoWeights, phi: float = 0.2,
                    mode: str = DISCOURSE, eos_id: int | None = None,
                    vocab: Vocabulary | None = None) -> BucketAnalysis:
    """How often each system's mixed probability of the target reaches the plain
    LM probability, split by the target's information weight.

    ``systems`` maps a name to ``(cache_config, mix_config)``; all systems are
    scored in the same pass over the LM outputs.
    """
    if iw is None:
        raise EvaluationError("bucket analysis needs an information-weight table")
    items = list(systems.items()) if isinstance(systems, dict) else list(systems)
    traces = _run(model, stream, [cfg for _, cfg in items], mode, iw, eos_id, vocab)
    out = []
    for (name, _), trace in zip(items, traces):
        above = trace.weights > phi
        frac_all, rel_all = _compare(trace.mixed, trace.baseline)
        frac_above, rel_above = _compare(trace.mixed[above], trace.baseline[above])
        out.append(SystemAnalysis(name, _report(trace), frac_all, frac_above, rel_all, rel_above,
                                   int(above.sum())))
    return BucketAnalysis(phi, out)
