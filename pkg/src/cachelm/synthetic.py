"""Synthetic data for desk-scale experiments.

``ToyLanguage`` generates documents from a small phrase grammar: determiner
noun phrases, verbs that prefer a particular preposition, and conjunctions
joining clauses. Nouns come mostly from a few topic words drawn per document,
so they recur within a document and rarely outside it, while genre words and
function words spread evenly. This is the structure a cache is meant to exploit.

``synthetic_nbest`` turns reference sentences into N-best lists with planted
confusions (mostly topic words swapped for other topic words) and first-pass
scores from a unigram LM plus a noisy acoustic score.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .rescorer import Hypothesis, NBestList

DETERMINERS = ["the", "a", "its", "their", "this", "his"]
PREPOSITIONS = ["of", "in", "to", "for", "on", "with", "by", "at", "from", "into"]
CONJUNCTIONS = ["and", "but", "which", "that", "while"]
AUXILIARIES = ["was", "is", "were", "are", "has", "had"]
FUNCTION_WORDS = DETERMINERS + PREPOSITIONS + CONJUNCTIONS + AUXILIARIES

_ONSETS = ["b", "c", "d", "f", "g", "h", "j", "k", "l", "m", "n", "p", "r", "s", "t", "v", "w", "z",
           "br", "ch", "dr", "fl", "gr", "kl", "pr", "sh", "st", "tr"]
_VOWELS = ["a", "e", "i", "o", "u", "ai", "ou", "ea"]
_CODAS = ["", "n", "r", "s", "l", "m", "x", "nd", "rt"]


def _pseudo_words(rng: np.random.Generator, n: int, taken: set[str]) -> list[str]:
    out = []
    while len(out) < n:
        syllables = rng.integers(2, 4)
        w = "".join(_ONSETS[rng.integers(len(_ONSETS))] + _VOWELS[rng.integers(len(_VOWELS))]
                    for _ in range(syllables)) + _CODAS[rng.integers(len(_CODAS))]
        if w not in taken:
            taken.add(w)
            out.append(w)
    return out


def _zipf(n: int, s: float = 1.0) -> np.ndarray:
    p = 1.0 / np.arange(1, n + 1) ** s
    return p / p.sum()


@dataclass
class ToyLanguage:
    """A tiny phrase grammar over four word classes.

    Sentences are ``NP VP (CONJ NP VP)?`` where a noun phrase is a determiner,
    an optional genre adjective and a noun, and a verb phrase is an optional
    auxiliary, a verb and usually a prepositional phrase. Each verb prefers one
    preposition, so function words are predictable from context while nouns
    come from the document's topic words.
    """

    verbs: list[str]
    genre_words: list[list[str]]
    topic_words: list[str]
    verb_preposition: dict[str, str]
    topics_per_doc: int = 4
    p_topic_noun: float = 0.6
    p_background_noun: float = 0.02

    @classmethod
    def create(cls, seed: int = 0, n_verbs: int = 60, n_genres: int = 12, genre_size: int = 25,
               n_topic: int = 100, topics_per_doc: int = 4) -> "ToyLanguage":
        rng = np.random.default_rng(seed)
        taken = set(FUNCTION_WORDS)
        verbs = _pseudo_words(rng, n_verbs, taken)
        genres = [_pseudo_words(rng, genre_size, taken) for _ in range(n_genres)]
        topic = _pseudo_words(rng, n_topic, taken)
        preps = {v: PREPOSITIONS[rng.integers(len(PREPOSITIONS))] for v in verbs}
        return cls(verbs, genres, topic, preps, topics_per_doc)

    @property
    def function_words(self) -> list[str]:
        return list(FUNCTION_WORDS)

    @property
    def words(self) -> list[str]:
        return FUNCTION_WORDS + self.verbs + [w for g in self.genre_words for w in g] + self.topic_words

    def document(self, rng: np.random.Generator, n_sentences: int) -> list[list[str]]:
        genre = self.genre_words[rng.integers(len(self.genre_words))]
        topics = [self.topic_words[i] for i in rng.choice(len(self.topic_words), self.topics_per_doc, replace=False)]
        p_det = _zipf(len(DETERMINERS))
        p_aux = _zipf(len(AUXILIARIES))
        p_conj = _zipf(len(CONJUNCTIONS))
        p_verb = _zipf(len(self.verbs))
        p_genre = _zipf(len(genre), 0.7)
        p_topic = _zipf(len(topics), 0.5)

        def pick(words, p):
            return words[rng.choice(len(words), p=p)]

        def noun_phrase():
            out = [pick(DETERMINERS, p_det)]
            if rng.random() < 0.4:
                out.append(pick(genre, p_genre))
            r = rng.random()
            if r < self.p_background_noun:
                out.append(self.topic_words[rng.integers(len(self.topic_words))])
            elif r < self.p_topic_noun:
                out.append(pick(topics, p_topic))
            else:
                out.append(pick(genre, p_genre))
            return out

        def verb_phrase():
            out = [pick(AUXILIARIES, p_aux)] if rng.random() < 0.4 else []
            verb = pick(self.verbs, p_verb)
            out.append(verb)
            if rng.random() < 0.8:
                prep = self.verb_preposition[verb] if rng.random() < 0.9 else PREPOSITIONS[rng.integers(len(PREPOSITIONS))]
                out += [prep] + noun_phrase()
            return out

        sentences = []
        for _ in range(n_sentences):
            sent = noun_phrase() + verb_phrase()
            if rng.random() < 0.4:
                sent += [pick(CONJUNCTIONS, p_conj)] + noun_phrase() + verb_phrase()
            sentences.append(sent)
        return sentences

    def corpus(self, rng: np.random.Generator, n_tokens: int, doc_sentences=(30, 60)) -> list[list[list[str]]]:
        """Documents until at least ``n_tokens`` tokens (eos included) are produced."""
        docs, total = [], 0
        while total < n_tokens:
            doc = self.document(rng, int(rng.integers(doc_sentences[0], doc_sentences[1] + 1)))
            docs.append(doc)
            total += sum(len(s) + 1 for s in doc)
        return docs


def lines_of(docs) -> list[str]:
    return [" ".join(s) for doc in docs for s in doc]


def toy_corpus(seed: int = 0, train_tokens: int = 50000, valid_tokens: int = 6000,
               test_tokens: int = 6000, language: ToyLanguage | None = None):
    """Train/valid/test line lists drawn from one toy language."""
    language = language or ToyLanguage.create(seed)
    rng = np.random.default_rng(seed + 1000)
    return (language,
            lines_of(language.corpus(rng, train_tokens)),
            lines_of(language.corpus(rng, valid_tokens)),
            lines_of(language.corpus(rng, test_tokens)))


class UnigramLM:
    """Add-one unigram model standing in for a first-pass n-gram LM."""

    def __init__(self, lines, vocabulary_words):
        counts = Counter(w for line in lines for w in line.split())
        counts["<eos>"] = len(lines)
        words = set(vocabulary_words) | set(counts) | {"<eos>"}
        total = sum(counts.values()) + len(words)
        self._logp = {w: math.log((counts[w] + 1) / total) for w in words}
        self._unk = math.log(1 / total)

    def logp(self, word: str) -> float:
        return self._logp.get(word, self._unk)

    def sentence_logps(self, words) -> list[float]:
        return [self.logp(w) for w in words] + [self.logp("<eos>")]


def _corrupt(rng, sent: list[str], language: ToyLanguage, max_edits: int = 3) -> tuple[list[str], int]:
    topical = set(language.topic_words) | {w for g in language.genre_words for w in g}
    out = list(sent)
    n_edits = int(rng.integers(1, max_edits + 1))
    done = 0
    for _ in range(n_edits):
        r = rng.random()
        topical_pos = [i for i, w in enumerate(out) if w in topical]
        if r < 0.7 and topical_pos:
            i = topical_pos[rng.integers(len(topical_pos))]
            out[i] = language.topic_words[rng.integers(len(language.topic_words))]
        elif r < 0.85:
            i = int(rng.integers(len(out)))
            out[i] = FUNCTION_WORDS[rng.integers(len(FUNCTION_WORDS))]
        elif r < 0.93 and len(out) > 2:
            del out[int(rng.integers(len(out)))]
        else:
            out.insert(int(rng.integers(len(out) + 1)),
                       FUNCTION_WORDS[rng.integers(len(FUNCTION_WORDS))])
        done += 1
    return out, done


def synthetic_nbest(references: list[list[str]], language: ToyLanguage, first_pass_lm: UnigramLM,
                    rng: np.random.Generator, n_best: int = 20, first_pass_scale: float = 1.0,
                    edit_cost: float = 2.0, acoustic_noise: float = 2.5,
                    prefix: str = "utt") -> tuple[list[NBestList], dict[str, list[str]]]:
    """N-best lists with the reference planted among confusable alternatives.

    Acoustic scores penalize each planted edit by ``edit_cost`` and add Gaussian
    noise, so the first pass frequently prefers a wrong hypothesis. Lists are
    ordered by first-pass score ``acoustic + first_pass_scale * unigram``.
    """
    lists, refs = [], {}
    for u, ref in enumerate(references):
        utt = f"{prefix}{u:04d}"
        refs[utt] = list(ref)
        cands = {tuple(ref): 0}
        tries = 0
        while len(cands) < n_best and tries < 50 * n_best:
            hyp, edits = _corrupt(rng, ref, language)
            cands.setdefault(tuple(hyp), edits)
            tries += 1
        hyps = []
        for words, edits in cands.items():
            ac = -edit_cost * edits + acoustic_noise * float(rng.standard_normal())
            ng = float(np.sum(first_pass_lm.sentence_logps(words)))
            hyps.append(Hypothesis(list(words), ac, ng))
        hyps.sort(key=lambda h: -(h.acoustic_logp + first_pass_scale * h.ngram_logp))
        for rank, h in enumerate(hyps, 1):
            h.rank = rank
        lists.append(NBestList(utt, hyps))
    return lists, refs


def session_references(language: ToyLanguage, seed: int, n_utterances: int) -> list[list[str]]:
    """Consecutive sentences from freshly generated documents."""
    rng = np.random.default_rng(seed)
    sentences: list[list[str]] = []
    while len(sentences) < n_utterances:
        sentences.extend(language.document(rng, int(rng.integers(30, 61))))
    return sentences[:n_utterances]
