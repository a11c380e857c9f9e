"""Cache-augmented LSTM language models: regular and neural caches,
information-weighted interpolation and selective caching, with perplexity
evaluation, N-best rescoring and bootstrap significance testing."""

from .cache import CacheConfig, CacheState, cache_insert, clone_cache, neural_cache_prob, regular_cache_prob
from .corpus import Vocabulary, batch_iterator, build_vocabulary, chunk_documents, tokenize
from .evaluator import bucket_analysis, evaluate_perplexity
from .infoweight import InfoWeights, compute_info_weights, load_info_weights, save_info_weights
from .lstm import LstmModel, TrainConfig, forward_step, gradient_check, load_checkpoint, save_checkpoint, train
from .mixer import MixConfig, log_prob_of, mix_iw, mix_linear
from .rescorer import (Hypothesis, LstmScorer, NBestList, RescoreConfig, grid_search, rescore_session,
                       score_hypothesis)
from .wer import align_wer, bootstrap_poi, corpus_wer

__version__ = "0.1.0"
