"""Acceptance criteria, one test each, at their stated tolerances.

Every test prints a single PASS/FAIL line; the lines are repeated together in
the terminal summary.
"""

import itertools
import math
import time

import numpy as np
import pytest

from cachelm.cache import REGULAR, CacheConfig, cache_insert, neural_cache_prob, new_cache, regular_cache_prob
from cachelm.corpus import Vocabulary
from cachelm.evaluator import bucket_analysis, evaluate_perplexity
from cachelm.infoweight import InfoWeights, compute_info_weights
from cachelm.lstm import gradient_check
from cachelm.mixer import IW, LINEAR, MixConfig, mix_iw, mix_linear
from cachelm.rescorer import (LstmScorer, RescoreConfig, first_pass_selection, grid_search, rescore_session,
                              session_wer)
from cachelm.synthetic import UnigramLM, session_references, synthetic_nbest
from cachelm.wer import align_wer, bootstrap_poi, corpus_wer, score_corpus
from conftest import ACCEPTANCE_LINES, small_model
from oracles import exact_poi, exhaustive_alignments, naive_neural_cache
from test_infoweight import chunks_of
from test_evaluator import random_stream


def verdict(number, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def filled(config, words, hiddens, H):
    cache = new_cache(config, H)
    for w, h in zip(words, hiddens):
        cache_insert(cache, int(w), h, 1.0, config)
    return cache


def test_01_theta_zero_equivalence():
    rng = np.random.default_rng(101)
    start = time.perf_counter()
    worst = 0.0
    n_cfg, r_cfg = CacheConfig(capacity=50, theta=0.0), CacheConfig(capacity=50, kind=REGULAR, decay=0.0)
    for _ in range(1000):
        size, H = int(rng.integers(1, 51)), int(rng.integers(1, 9))
        words, hs = rng.integers(0, 30, size), rng.normal(size=(size, H))
        a = neural_cache_prob(filled(n_cfg, words, hs, H), rng.normal(size=H), n_cfg)
        b = regular_cache_prob(filled(r_cfg, words, [None] * size, None), r_cfg)
        assert (a.ids == b.ids).all()
        worst = max(worst, float(np.max(np.abs(a.probs - b.probs))))
    elapsed = time.perf_counter() - start
    verdict(1, worst <= 1e-12 and elapsed < 5, f"max |diff| {worst:.2e} (<= 1e-12), {elapsed:.2f}s (< 5s)")


def test_02_neural_cache_oracle():
    rng = np.random.default_rng(102)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        size, H = int(rng.integers(1, 51)), int(rng.integers(1, 9))
        cfg = CacheConfig(capacity=50, theta=float(rng.uniform(0.01, 2)))
        words, hs = rng.integers(0, 30, size), rng.normal(size=(size, H))
        h_t = rng.normal(size=H)
        d = neural_cache_prob(filled(cfg, words, hs, H), h_t, cfg)
        ref = naive_neural_cache(list(words), list(hs), h_t, cfg.theta)
        assert set(d.as_dict()) == set(ref)
        worst = max(worst, max(abs(d.get(w) - p) for w, p in ref.items()))
    elapsed = time.perf_counter() - start
    verdict(2, worst <= 1e-10 and elapsed < 10, f"max |diff| {worst:.2e} (<= 1e-10), {elapsed:.2f}s (< 10s)")


def test_03_normalization():
    rng = np.random.default_rng(103)
    worst = {"mix_linear": 0.0, "mix_iw": 0.0, "regular": 0.0, "neural": 0.0}
    for _ in range(10_000):
        V = int(rng.integers(1, 60))
        p = rng.dirichlet(np.full(V, 0.3))
        size, H = int(rng.integers(1, 30)), 4
        words = rng.integers(0, V, size)
        n_cfg = CacheConfig(capacity=50, theta=float(rng.uniform(0.01, 3)))
        r_cfg = CacheConfig(capacity=50, kind=REGULAR, decay=float(rng.uniform(0, 2)))
        q_n = neural_cache_prob(filled(n_cfg, words, rng.normal(scale=3, size=(size, H)), H),
                                rng.normal(scale=3, size=H), n_cfg)
        q_r = regular_cache_prob(filled(r_cfg, words, [None] * size, None), r_cfg)
        worst["neural"] = max(worst["neural"], abs(q_n.probs.sum() - 1))
        worst["regular"] = max(worst["regular"], abs(q_r.probs.sum() - 1))
        worst["mix_linear"] = max(worst["mix_linear"], abs(mix_linear(p, q_n, rng.uniform()).sum() - 1))
        worst["mix_iw"] = max(worst["mix_iw"],
                              abs(mix_iw(p, q_r, rng.uniform(0, 0.5), rng.uniform(0, 1, V)).sum() - 1))
    ok = max(worst.values()) <= 1e-9
    verdict(3, ok, "max |sum - 1| " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + " (<= 1e-9)")


def test_04_iw_reduces_to_linear_and_gamma_zero():
    rng = np.random.default_rng(104)
    worst = 0.0
    for _ in range(1000):
        V = int(rng.integers(2, 50))
        p, q = rng.dirichlet(np.ones(V)), rng.dirichlet(np.ones(V))
        c, gamma = rng.uniform(), rng.uniform(0, 0.5)
        worst = max(worst, float(np.max(np.abs(mix_iw(p, q, gamma, np.full(V, c)) - mix_linear(p, q, gamma * c)))))
    V = 40
    stream = random_stream(V=V, T=10_000, seed=4)
    model = small_model(V=V, H=8, scale=0.5, eos_id=V - 1)
    words = [f"w{i}" for i in range(V - 2)] + ["<unk>", "<eos>"]
    iw = InfoWeights(Vocabulary(words), rng.uniform(0, 1, V), 10, 5)
    base = evaluate_perplexity(model, stream)
    mixed = evaluate_perplexity(model, stream, CacheConfig(capacity=100), MixConfig(IW, gamma=0.0, iw=iw), iw=iw)
    same = base.perplexity == mixed.perplexity and base.log_prob_sum == mixed.log_prob_sum
    verdict(4, worst <= 1e-12 and same,
            f"IW vs linear max |diff| {worst:.1e} (<= 1e-12); gamma=0 ppl {mixed.perplexity!r} "
            f"{'==' if same else '!='} baseline {base.perplexity!r} over {len(stream)} tokens")


def test_05_iw_closed_forms():
    vocab = Vocabulary(["w", "x", "<unk>", "<eos>"])
    W, X = 0, 1
    single = [{X: 1} for _ in range(7)]
    single[2][W] = 13
    lam_single = compute_info_weights(chunks_of(single), vocab)[W]
    lam_uniform = compute_info_weights(chunks_of([{W: 3, X: 1} for _ in range(11)]), vocab)[W]
    errs = []
    for N in (3, 10, 50):
        two = [{X: 1} for _ in range(N)]
        two[0][W] = two[N - 1][W] = 5
        errs.append(abs(compute_info_weights(chunks_of(two), vocab)[W] - (1 - math.log(2) / math.log(N))))
    ok = lam_single == 1.0 and abs(lam_uniform) <= 1e-12 and max(errs) <= 1e-12
    verdict(5, ok, f"single-chunk {lam_single!r}, uniform {lam_uniform:.1e}, two-chunk max err {max(errs):.1e}")


def test_06_gradient_check():
    errors = []
    for seed in range(5):
        rng = np.random.default_rng(600 + seed)
        model = small_model(V=7, H=4, E=3, seed=seed, scale=0.5)
        x, y = rng.integers(0, 7, (2, 5)), rng.integers(0, 7, (2, 5))
        errors.append(gradient_check(model, x, y).max_error)
    verdict(6, max(errors) < 1e-4, f"max relative error {max(errors):.2e} over 5 models (< 1e-4)")


def test_07_bootstrap():
    rng = np.random.default_rng(107)
    a = list(rng.integers(0, 6, 30))
    self_poi = bootstrap_poi(a, a, 10_000, seed=1).poi
    worst_sum = 0.0
    for s in range(20):
        x, y = list(rng.integers(0, 6, 25)), list(rng.integers(0, 6, 25))
        worst_sum = max(worst_sum, abs(bootstrap_poi(x, y, 2000, s).poi + bootstrap_poi(y, x, 2000, s).poi - 100))
    z_max = 0.0
    for x, y in [([1, 0], [0, 1]), ([2, 0, 1], [1, 1, 0]), ([0, 3, 1, 0], [1, 0, 1, 2]), ([4, 1, 2], [2, 2, 2]),
                 ([1, 2, 0, 0, 3], [0, 2, 1, 0, 1])]:
        exact = exact_poi(x, y) / 100
        n = 10_000
        sampled = bootstrap_poi(x, y, n, seed=7).poi / 100
        # a replicate scores 1, 1/2 or 0, so its standard deviation is at most 1/2
        se = 0.5 / math.sqrt(n)
        z_max = max(z_max, abs(sampled - exact) / se)
    ok = self_poi == 50.0 and worst_sum <= 1e-9 and z_max <= 3
    verdict(7, ok, f"poi(A,A) {self_poi!r}; max |poi(A,B)+poi(B,A)-100| {worst_sum:.1e}; "
                   f"max |sampled-exact| {z_max:.2f} standard errors (<= 3)")


def test_08_wer_exhaustive():
    seqs = [s for k in range(7) for s in itertools.product("abc", repeat=k)]
    mismatches = 0
    try:
        for ref in seqs:
            for hyp in seqs:
                e = align_wer(ref, hyp)
                cost, splits = exhaustive_alignments(ref, hyp)
                mismatches += e.errors != cost or (e.substitutions, e.insertions, e.deletions) not in splits
    finally:
        exhaustive_alignments.cache_clear()
    verdict(8, mismatches == 0, f"{mismatches} disagreements over {len(seqs) ** 2} sequence pairs")


def neural100(phi=0.0):
    return CacheConfig(capacity=100, theta=0.3, selective_threshold=phi)


@pytest.fixture(scope="module")
def toy_ppl(toy, toy_model):
    start = time.perf_counter()
    base = evaluate_perplexity(toy_model, toy.valid).perplexity
    linear = evaluate_perplexity(toy_model, toy.valid, neural100(), MixConfig(LINEAR, 0.1)).perplexity
    selective = evaluate_perplexity(toy_model, toy.valid, neural100(0.2), MixConfig(IW, gamma=0.5, iw=toy.iw),
                                    iw=toy.iw).perplexity
    return base, linear, selective, time.perf_counter() - start


def test_09_toy_linear_cache_gain(toy, toy_model, toy_ppl):
    base, linear, _, elapsed = toy_ppl
    gain = (base - linear) / base
    total = elapsed + sum(h.seconds for h in toy_model.history)
    verdict(9, gain >= 0.05 and total < 900,
            f"valid ppl {base:.2f} -> {linear:.2f} with a 100-entry linear neural cache, gain {100 * gain:.1f}% "
            f"(>= 5%); vocab {len(toy.vocab)}, {len(toy.train)} training tokens, {total:.0f}s (< 900s)")


def test_10_selective_iw_not_worse(toy_ppl):
    _, linear, selective, _ = toy_ppl
    verdict(10, selective <= 1.01 * linear,
            f"IW-selective (gamma 0.5, phi 0.2) {selective:.2f} vs linear {linear:.2f} (<= 1% slack)")


def test_11_rescoring_session(toy, toy_model):
    start = time.perf_counter()
    lang = toy.language
    first_pass = UnigramLM(toy.train_lines, toy.vocab.words)
    rng = np.random.default_rng(5)
    dev, dev_refs = synthetic_nbest(session_references(lang, 11, 100), lang, first_pass, rng, n_best=20, prefix="dev")
    test, test_refs = synthetic_nbest(session_references(lang, 12, 100), lang, first_pass, rng, n_best=20,
                                      prefix="tst")
    scorer = LstmScorer(toy_model, toy.vocab, toy.iw)
    base = RescoreConfig(cache=neural100(0.2), mix=MixConfig(IW, gamma=0.5, iw=toy.iw))
    grid = {"lambda_lstm": [0.5, 0.75, 1.0], "lm_scale": [0.5, 1.0, 2.0], "gamma": [0.3, 0.5]}
    tuned = grid_search(scorer, dev, dev_refs, grid, base)
    wer, errors = session_wer(rescore_session(scorer, test, tuned.best.config), test_refs)
    first_errors = score_corpus(test_refs, first_pass_selection(test))
    first_wer = corpus_wer(first_errors)
    poi = bootstrap_poi(first_errors, errors, 10_000, seed=1).poi
    elapsed = time.perf_counter() - start
    verdict(11, wer < first_wer and poi > 95 and elapsed < 600,
            f"test WER {first_wer:.2f} (first pass) -> {wer:.2f} at {tuned.best.params}, poi {poi:.1f}% (> 95), "
            f"{elapsed:.0f}s (< 600s)")


def test_12_bucket_shape(toy, toy_model):
    systems = {"iw-selective": (neural100(0.2), MixConfig(IW, gamma=0.5, iw=toy.iw))}
    analysis = bucket_analysis(toy_model, toy.valid, systems, toy.iw, phi=0.2, vocab=toy.vocab)
    fractions = [b.fraction_higher for b in analysis.systems[0].report.buckets]
    counts = [b.tokens for b in analysis.systems[0].report.buckets]
    rising = all(a < b for a, b in zip(fractions[1:], fractions[2:]))
    shown = ", ".join(f"{100 * f:.1f}% of {n}" for f, n in zip(fractions, counts))
    verdict(12, fractions[0] <= 0.01 and rising,
            f"fraction interpolated >= baseline by bucket: {shown}; low bucket <= 1%, rising over the rest")


def test_13_full_scale_reproduction():
    line = "SKIP criterion 13: optional full-scale run on the real benchmark corpus, not part of this suite"
    ACCEPTANCE_LINES.append(line)
    pytest.skip(line)
