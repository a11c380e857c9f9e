"""Command-line driver: ``cachelm <command> [options]``.

Every option may also be given in a ``key=value`` config file passed with
``--config``; explicit flags win over the file. The resolved configuration is
logged to stderr before any work starts. Failures print a single line
``cachelm: error: <kind>: <message>`` to stderr and exit non-zero (2 for usage
errors, 1 otherwise).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from . import __version__
from .cache import NEURAL, REGULAR, CacheConfig
from .corpus import DISCOURSE, MODES, Vocabulary, build_vocabulary, chunk_documents, tokenize
from .evaluator import bucket_analysis, evaluate_perplexity
from .infoweight import compute_info_weights, load_info_weights, save_info_weights
from .lstm import LstmModel, TrainConfig, load_checkpoint, save_checkpoint, train
from .mixer import IW, LINEAR, MAX_GAMMA, MixConfig
from .rescorer import (GRID_KEYS, LstmScorer, RescoreConfig, first_pass_selection, grid_search,
                       read_nbest, read_references, rescore_session, session_wer, write_nbest,
                       write_references)
from .wer import bootstrap_poi, corpus_wer, score_corpus

logger = logging.getLogger("cachelm")


class UsageError(Exception):
    pass


# Built-in defaults, applied after the config file and the flags are merged.
DEFAULTS = {
    "seed": 1,
    "mode": DISCOURSE,
    "min_count": 1,
    "chunk_size": 100,
    "hidden_size": 512,
    "batch_size": 20,
    "unroll_steps": 35,
    "keep_prob": 0.5,
    "clip_norm": 5.0,
    "lr": 1.0,
    "lr_decay": 0.8,
    "constant_epochs": 6,
    "patience": 3,
    "max_epochs": 39,
    "init_range": 0.05,
    "cache_size": 0,
    "cache_kind": NEURAL,
    "theta": 0.3,
    "alpha_decay": 0.0,
    "selective": False,
    "phi": 0.2,
    "normalize_hidden": False,
    "reset_at_eos": False,
    "interp": LINEAR,
    "lambda_": 0.1,
    "gamma": MAX_GAMMA,
    "lambda_lstm": 0.5,
    "beta": 1.0,
    "omega": 0.0,
    "samples": 10000,
    "train_tokens": 50000,
    "valid_tokens": 6000,
    "test_tokens": 6000,
    "utterances": 100,
    "n_best": 20,
}

# Flags that only make sense together with another setting.
_NEURAL_ONLY = ("theta", "normalize_hidden")
_REGULAR_ONLY = ("alpha_decay",)
_CACHE_FLAGS = ("cache_kind", "theta", "alpha_decay", "selective", "phi", "normalize_hidden",
                "reset_at_eos", "interp", "lambda_", "gamma")


_FLAGS = {"train_corpus": "--train", "valid_corpus": "--valid", "log_path": "--log", "lambda_": "--lambda"}


def _flag(key: str) -> str:
    return _FLAGS.get(key, "--" + key.replace("_", "-"))


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_io(p, *names, required=()):
    helps = {
        "corpus": "text corpus, one sentence per line",
        "vocab": "vocabulary file, one word per line",
        "iw": "information-weight table",
        "model": "LSTM checkpoint (.npz)",
        "nbest": "N-best TSV",
        "refs": "reference transcripts TSV (utt_id, words)",
        "out": "output path",
    }
    for name in names:
        flag = "--" + name.replace("_", "-")
        text = helps.get(name, name)
        if name in required:
            text += " (required)"
        p.add_argument(flag, dest=name, default=None, help=text)


def _add_cache(p):
    g = p.add_argument_group("cache and interpolation")
    g.add_argument("--cache-size", type=int, default=None, help="cache capacity; 0 disables the cache")
    g.add_argument("--cache-kind", choices=(NEURAL, REGULAR), default=None)
    g.add_argument("--theta", type=float, default=None, help="neural cache flatness")
    g.add_argument("--alpha-decay", type=float, default=None, help="regular cache exponential decay")
    g.add_argument("--selective", action="store_true", default=None,
                   help="admit only words with information weight >= --phi")
    g.add_argument("--phi", type=float, default=None, help="selective-cache threshold")
    g.add_argument("--normalize-hidden", action="store_true", default=None,
                   help="cosine similarity in the neural cache")
    g.add_argument("--reset-at-eos", action="store_true", default=None)
    g.add_argument("--interp", choices=(LINEAR, IW), default=None, help="interpolation scheme")
    g.add_argument("--lambda", dest="lambda_", type=float, default=None, help="linear interpolation weight")
    g.add_argument("--gamma", type=float, default=None, help="IW interpolation scale (<= 0.5)")


def _add_rescore(p):
    g = p.add_argument_group("rescoring")
    g.add_argument("--lambda-lstm", type=float, default=None, help="LSTM weight against the n-gram score")
    g.add_argument("--beta", type=float, default=None, help="LM scale")
    g.add_argument("--omega", type=float, default=None, help="word insertion penalty")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cachelm", description="Cache-augmented LSTM language models.")
    parser.add_argument("--version", action="version", version=f"cachelm {__version__}")
    common = _Parser(add_help=False)
    common.add_argument("--config", default=None, help="key=value file; flags override it")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("make-toy", parents=[common], help="write a synthetic topical corpus and N-best sessions")
    p.add_argument("--out-dir", default=None, help="output directory (required)")
    for name in ("train_tokens", "valid_tokens", "test_tokens", "utterances", "n_best"):
        p.add_argument("--" + name.replace("_", "-"), type=int, default=None)

    p = sub.add_parser("build-vocab", parents=[common], help="vocabulary from a training corpus")
    _add_io(p, "corpus", "out", required=("corpus", "out"))
    p.add_argument("--min-count", type=int, default=None)
    p.add_argument("--max-size", type=int, default=None)

    p = sub.add_parser("build-iw", parents=[common], help="information weights from a training corpus")
    _add_io(p, "corpus", "vocab", "out", required=("corpus", "vocab", "out"))
    p.add_argument("--chunk-size", type=int, default=None, help="sentences per pseudo-document")

    p = sub.add_parser("train", parents=[common], help="train the LSTM language model")
    _add_io(p, "vocab", "out", required=("vocab", "out"))
    p.add_argument("--train", dest="train_corpus", default=None, help="training corpus (required)")
    p.add_argument("--valid", dest="valid_corpus", default=None, help="validation corpus (required)")
    p.add_argument("--log", dest="log_path", default=None, help="per-epoch TSV log")
    p.add_argument("--mode", choices=MODES, default=None)
    for name, typ in (("hidden_size", int), ("embedding_size", int), ("batch_size", int),
                      ("unroll_steps", int), ("keep_prob", float), ("clip_norm", float), ("lr", float),
                      ("lr_decay", float), ("constant_epochs", int), ("patience", int),
                      ("max_epochs", int), ("init_range", float)):
        p.add_argument("--" + name.replace("_", "-"), type=typ, default=None)

    p = sub.add_parser("eval-ppl", parents=[common], help="perplexity with an optional cache")
    _add_io(p, "model", "vocab", "corpus", "iw", "out", required=("model", "vocab", "corpus"))
    p.add_argument("--mode", choices=MODES, default=None)
    _add_cache(p)

    p = sub.add_parser("analyze-buckets", parents=[common],
                       help="interpolated-vs-baseline fractions per information-weight bucket")
    _add_io(p, "model", "vocab", "corpus", "iw", "out", required=("model", "vocab", "corpus", "iw"))
    p.add_argument("--mode", choices=MODES, default=None)
    _add_cache(p)

    for name, text in (("rescore", "rescore N-best lists"), ("grid-search", "tune rescoring parameters by WER")):
        p = sub.add_parser(name, parents=[common], help=text)
        req = ("model", "vocab", "nbest") + (("refs",) if name == "grid-search" else ())
        _add_io(p, "model", "vocab", "nbest", "refs", "iw", "out", required=req)
        _add_cache(p)
        _add_rescore(p)
        if name == "rescore":
            p.add_argument("--hyp-out", default=None, help="selected hypotheses in reference format")
            p.add_argument("--table", default=None, help="per-hypothesis score table TSV")
        else:
            p.add_argument("--grid", action="append", default=None, metavar="KEY=V1,V2,...",
                           help=f"grid axis; keys: {', '.join(GRID_KEYS)}")

    p = sub.add_parser("bootstrap", parents=[common], help="paired bootstrap probability of improvement")
    _add_io(p, "refs", "out", required=("refs",))
    p.add_argument("--hyp-a", default=None, help="baseline hypotheses (required)")
    p.add_argument("--hyp-b", default=None, help="candidate hypotheses (required)")
    p.add_argument("--samples", type=int, default=None)
    return parser


# --- configuration -----------------------------------------------------------

def read_config_file(path: str) -> dict[str, str]:
    out = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            key = key.strip().lstrip("-").replace("-", "_")
            out["lambda_" if key == "lambda" else key] = value.strip()
    return out


def _actions(parser: argparse.ArgumentParser, command: str) -> dict[str, argparse.Action]:
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    return {a.dest: a for a in sub.choices[command]._actions}


def _convert(action: argparse.Action, raw: str, source: str):
    if isinstance(action, argparse._StoreTrueAction):
        low = raw.lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise UsageError(f"{source}: {action.dest} expects a boolean, got {raw!r}")
        return low in ("true", "1", "yes")
    if isinstance(action, argparse._AppendAction):
        return [part.strip() for part in raw.split(";") if part.strip()]
    try:
        value = action.type(raw) if action.type else raw
    except ValueError:
        raise UsageError(f"{source}: {action.dest} expects {action.type.__name__}, got {raw!r}") from None
    if action.choices and value not in action.choices:
        raise UsageError(f"{source}: {action.dest} must be one of {', '.join(action.choices)}")
    return value


def resolve(parser: argparse.ArgumentParser, args: argparse.Namespace) -> tuple[dict, set[str]]:
    """Merge config file, flags and defaults. Returns the config and the keys set explicitly."""
    actions = _actions(parser, args.command)
    given = {k: v for k, v in vars(args).items() if v is not None and k not in ("config", "verbose", "command")}
    cfg = {}
    if args.config:
        if not os.path.isfile(args.config):
            raise UsageError(f"config file not found: {args.config}")
        for key, raw in read_config_file(args.config).items():
            if key not in actions or key in ("config", "verbose", "help"):
                raise UsageError(f"{args.config}: unknown key {key!r} for command {args.command}")
            cfg[key] = _convert(actions[key], raw, args.config)
    cfg.update(given)
    explicit = set(cfg)
    defaults = dict(DEFAULTS)
    if args.command == "analyze-buckets":
        # The analysis compares cached systems, so a cache is on by default.
        defaults["cache_size"] = 100
    for key in actions:
        if key not in cfg and key in defaults:
            cfg[key] = defaults[key]
    cfg.setdefault("seed", DEFAULTS["seed"])
    return cfg, explicit


def _require(cfg: dict, *keys: str) -> None:
    for key in keys:
        if cfg.get(key) is None:
            raise UsageError(f"missing required option {_flag(key)}")


def _require_files(cfg: dict, *keys: str) -> None:
    for key in keys:
        path = cfg.get(key)
        if path is not None and not os.path.isfile(path):
            raise UsageError(f"{_flag(key)}: file not found: {path}")


def _check_range(cfg, key, lo, hi, lo_open=False):
    v = cfg.get(key)
    if v is None:
        return
    if (v <= lo if lo_open else v < lo) or (hi is not None and v > hi):
        bound = f"({lo}" if lo_open else f"[{lo}"
        raise UsageError(f"{_flag(key)} = {v} outside {bound}, {hi if hi is not None else 'inf'}]")


def validate_cache(cfg: dict, explicit: set[str], command: str = "") -> None:
    if "cache_size" in cfg:
        _check_range(cfg, "cache_size", 0, None)
        if cfg["cache_size"] == 0:
            stray = [k for k in _CACHE_FLAGS if k in explicit]
            if stray:
                raise UsageError(f"{_flag(stray[0])} given but the cache is "
                                 "disabled (set --cache-size > 0)")
    if cfg.get("cache_kind") == REGULAR:
        bad = [k for k in _NEURAL_ONLY if k in explicit]
        if bad:
            raise UsageError(f"{_flag(bad[0])} applies to the neural cache, not --cache-kind regular")
    elif cfg.get("cache_kind") == NEURAL:
        bad = [k for k in _REGULAR_ONLY if k in explicit]
        if bad:
            raise UsageError(f"{_flag(bad[0])} applies to the regular cache, not --cache-kind neural")
    if command != "analyze-buckets":
        # analyze-buckets always scores linear, IW and IW-selective systems.
        if "phi" in explicit and not cfg.get("selective"):
            raise UsageError("--phi requires --selective")
        if cfg.get("interp") == LINEAR and "gamma" in explicit:
            raise UsageError("--gamma applies to --interp iw")
        if cfg.get("interp") == IW and "lambda_" in explicit:
            raise UsageError("--lambda applies to --interp linear")
    if (cfg.get("selective") or cfg.get("interp") == IW) and cfg.get("cache_size", 0) > 0 and not cfg.get("iw"):
        raise UsageError("--selective and --interp iw need an information-weight table (--iw)")
    _check_range(cfg, "theta", 0, None, lo_open=True)
    _check_range(cfg, "alpha_decay", 0, None)
    _check_range(cfg, "phi", 0, 1)
    _check_range(cfg, "lambda_", 0, 1)
    _check_range(cfg, "gamma", 0, MAX_GAMMA)


def validate(cfg: dict, explicit: set[str], command: str) -> None:
    validate_cache(cfg, explicit, command)
    _check_range(cfg, "lambda_lstm", 0, 1)
    _check_range(cfg, "beta", 0, None, lo_open=True)
    _check_range(cfg, "keep_prob", 0, 1, lo_open=True)
    _check_range(cfg, "chunk_size", 1, None)
    _check_range(cfg, "samples", 1, None)
    _check_range(cfg, "min_count", 1, None)
    for key in ("hidden_size", "batch_size", "unroll_steps", "max_epochs", "train_tokens",
                "valid_tokens", "test_tokens", "utterances", "n_best"):
        _check_range(cfg, key, 1, None)
    required = {
        "make-toy": ("out_dir",),
        "build-vocab": ("corpus", "out"),
        "build-iw": ("corpus", "vocab", "out"),
        "train": ("train_corpus", "valid_corpus", "vocab", "out"),
        "eval-ppl": ("model", "vocab", "corpus"),
        "analyze-buckets": ("model", "vocab", "corpus", "iw"),
        "rescore": ("model", "vocab", "nbest"),
        "grid-search": ("model", "vocab", "nbest", "refs", "grid"),
        "bootstrap": ("refs", "hyp_a", "hyp_b"),
    }[command]
    _require(cfg, *required)
    _require_files(cfg, "corpus", "vocab", "iw", "model", "nbest", "refs", "train_corpus",
                   "valid_corpus", "hyp_a", "hyp_b")
    if command == "grid-search":
        parse_grid(cfg["grid"])


def parse_grid(specs: list[str]) -> dict[str, list[float]]:
    grid = {}
    for spec in specs:
        for axis in spec.split(";"):
            if not axis.strip():
                continue
            key, sep, values = axis.partition("=")
            key = key.strip().replace("-", "_")
            if not sep or key not in GRID_KEYS:
                raise UsageError(f"bad grid axis {axis!r}; keys: {', '.join(GRID_KEYS)}")
            try:
                grid[key] = [float(v) for v in values.split(",") if v.strip()]
            except ValueError:
                raise UsageError(f"bad grid values in {axis!r}") from None
            if not grid[key]:
                raise UsageError(f"grid axis {key!r} has no values")
    if not grid:
        raise UsageError("empty grid")
    return grid


def cache_config(cfg: dict) -> CacheConfig:
    return CacheConfig(capacity=cfg["cache_size"], kind=cfg["cache_kind"], decay=cfg["alpha_decay"],
                       theta=cfg["theta"], selective_threshold=cfg["phi"] if cfg["selective"] else 0.0,
                       normalize_hidden=cfg["normalize_hidden"], reset_at_eos=cfg["reset_at_eos"])


def mix_config(cfg: dict, iw) -> MixConfig:
    if cfg["interp"] == IW:
        return MixConfig(IW, gamma=cfg["gamma"], iw=iw)
    return MixConfig(LINEAR, lambda_interp=cfg["lambda_"])


def train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(hidden_size=cfg["hidden_size"], embedding_size=cfg.get("embedding_size"),
                       batch_size=cfg["batch_size"], unroll_steps=cfg["unroll_steps"],
                       dropout_keep_prob=cfg["keep_prob"], grad_clip_norm=cfg["clip_norm"],
                       initial_lr=cfg["lr"], lr_decay=cfg["lr_decay"],
                       constant_lr_epochs=cfg["constant_epochs"], patience=cfg["patience"],
                       max_epochs=cfg["max_epochs"], init_range=cfg["init_range"], seed=cfg["seed"],
                       mode=cfg["mode"])


# --- commands ----------------------------------------------------------------

def _read_lines(path: str) -> list[str]:
    with open(path, encoding="utf-8") as f:
        return f.read().splitlines()


def _write(path: str | None, text: str) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as f:
            f.write(text)


def _iw(cfg, vocab):
    return load_info_weights(cfg["iw"], vocab) if cfg.get("iw") else None


def cmd_make_toy(cfg: dict) -> None:
    from .synthetic import UnigramLM, session_references, synthetic_nbest, toy_corpus

    out = cfg["out_dir"]
    os.makedirs(out, exist_ok=True)
    seed = cfg["seed"]
    lang, tr, va, te = toy_corpus(seed, cfg["train_tokens"], cfg["valid_tokens"], cfg["test_tokens"])
    for name, lines in (("train", tr), ("valid", va), ("test", te)):
        _write(os.path.join(out, f"{name}.txt"), "\n".join(lines) + "\n")
    first_pass = UnigramLM(tr, lang.words)
    rng = np.random.default_rng(seed + 2000)
    for k, name in enumerate(("dev", "eval")):
        refs = session_references(lang, seed + 3000 + k, cfg["utterances"])
        lists, ref_map = synthetic_nbest(refs, lang, first_pass, rng, n_best=cfg["n_best"], prefix=name)
        write_nbest(lists, os.path.join(out, f"{name}.nbest"))
        write_references(ref_map, os.path.join(out, f"{name}.ref"))
    logger.info("wrote toy corpus and N-best sessions to %s", out)


def cmd_build_vocab(cfg: dict) -> None:
    vocab = build_vocabulary(_read_lines(cfg["corpus"]), cfg["min_count"], cfg.get("max_size"))
    vocab.save(cfg["out"])
    logger.info("vocabulary: %d words, digest %s", len(vocab), vocab.digest()[:12])


def cmd_build_iw(cfg: dict) -> None:
    vocab = Vocabulary.load(cfg["vocab"])
    stream = tokenize(_read_lines(cfg["corpus"]), vocab)
    iw = compute_info_weights(chunk_documents(stream, cfg["chunk_size"]), vocab)
    save_info_weights(iw, cfg["out"])
    logger.info("information weights from %d pseudo-documents", iw.num_documents)


def cmd_train(cfg: dict) -> None:
    vocab = Vocabulary.load(cfg["vocab"])
    tc = train_config(cfg)
    train_stream = tokenize(_read_lines(cfg["train_corpus"]), vocab, tc.mode)
    valid_stream = tokenize(_read_lines(cfg["valid_corpus"]), vocab, tc.mode)
    model = LstmModel.initialize(len(vocab), tc, vocab)
    best, history = train(model, train_stream, valid_stream, tc, cfg.get("log_path"))
    save_checkpoint(best, cfg["out"])
    logger.info("best validation perplexity %.3f", min(h.valid_ppl for h in history))


def _eval_inputs(cfg):
    vocab = Vocabulary.load(cfg["vocab"])
    model = load_checkpoint(cfg["model"], vocab)
    stream = tokenize(_read_lines(cfg["corpus"]), vocab, cfg["mode"])
    return vocab, model, stream, _iw(cfg, vocab)


def cmd_eval_ppl(cfg: dict) -> None:
    vocab, model, stream, iw = _eval_inputs(cfg)
    cc = cache_config(cfg)
    mc = mix_config(cfg, iw) if cc.enabled else MixConfig()
    report = evaluate_perplexity(model, stream, cc, mc, cfg["mode"], iw, vocab=vocab)
    _write(cfg.get("out"), report.to_tsv())
    logger.info("perplexity %.4f over %d tokens", report.perplexity, report.token_count)


def cmd_analyze_buckets(cfg: dict) -> None:
    vocab, model, stream, iw = _eval_inputs(cfg)
    if cfg["cache_size"] == 0:
        raise UsageError("analyze-buckets needs a cache (--cache-size > 0)")
    base = cache_config(cfg)
    phi = cfg["phi"]
    systems = {
        "linear": (CacheConfig(base.capacity, base.kind, base.decay, base.theta, 0.0,
                               base.normalize_hidden, base.reset_at_eos),
                   MixConfig(LINEAR, lambda_interp=cfg["lambda_"])),
        "iw": (CacheConfig(base.capacity, base.kind, base.decay, base.theta, 0.0,
                           base.normalize_hidden, base.reset_at_eos),
               MixConfig(IW, gamma=cfg["gamma"], iw=iw)),
        "iw-selective": (CacheConfig(base.capacity, base.kind, base.decay, base.theta, phi,
                                     base.normalize_hidden, base.reset_at_eos),
                         MixConfig(IW, gamma=cfg["gamma"], iw=iw)),
    }
    analysis = bucket_analysis(model, stream, systems, iw, phi, cfg["mode"], vocab=vocab)
    _write(cfg.get("out"), analysis.to_tsv())
    sys.stderr.write(analysis.table() + "\n")


def _rescore_setup(cfg):
    vocab = Vocabulary.load(cfg["vocab"])
    model = load_checkpoint(cfg["model"], vocab)
    iw = _iw(cfg, vocab)
    cc = cache_config(cfg)
    base = RescoreConfig(lambda_lstm=cfg["lambda_lstm"], lm_scale=cfg["beta"],
                         word_insertion_penalty=cfg["omega"], cache=cc,
                         mix=mix_config(cfg, iw) if cc.enabled else MixConfig())
    return LstmScorer(model, vocab, iw), read_nbest(cfg["nbest"]), base


def cmd_rescore(cfg: dict) -> None:
    scorer, lists, config = _rescore_setup(cfg)
    result = rescore_session(scorer, lists, config)
    _write(cfg.get("out"), result.selections_tsv())
    if cfg.get("table"):
        _write(cfg["table"], result.table_tsv())
    if cfg.get("hyp_out"):
        write_references(result.best_words(), cfg["hyp_out"])
    if cfg.get("refs"):
        refs = read_references(cfg["refs"])
        wer, _ = session_wer(result, refs)
        first = corpus_wer(score_corpus({u: refs[u] for u in result.best_words()}, first_pass_selection(lists)))
        logger.info("WER %.3f (first pass %.3f)", wer, first)


def cmd_grid_search(cfg: dict) -> None:
    scorer, lists, base = _rescore_setup(cfg)
    grid = parse_grid(cfg["grid"])
    if base.cache.capacity == 0 and "cache_size" not in grid and any(
            k in grid for k in ("lambda_interp", "gamma", "phi", "theta", "decay")):
        raise UsageError("cache parameters in the grid but the cache is disabled")
    if "gamma" in grid and base.mix.mode != IW:
        raise UsageError("grid axis gamma needs --interp iw")
    if "lambda_interp" in grid and base.mix.mode != LINEAR:
        raise UsageError("grid axis lambda_interp needs --interp linear")
    result = grid_search(scorer, lists, read_references(cfg["refs"]), grid, base)
    _write(cfg.get("out"), result.to_tsv())
    logger.info("best WER %.3f at %s", result.best.wer, result.best.params)


def cmd_bootstrap(cfg: dict) -> None:
    refs = read_references(cfg["refs"])
    a = score_corpus(refs, read_references(cfg["hyp_a"]))
    b = score_corpus(refs, read_references(cfg["hyp_b"]))
    res = bootstrap_poi(a, b, cfg["samples"], cfg["seed"])
    _write(cfg.get("out"), "system_a\tsystem_b\twer_a\twer_b\tpoi\tsamples\tseed\n"
           f"{cfg['hyp_a']}\t{cfg['hyp_b']}\t{corpus_wer(a)!r}\t{corpus_wer(b)!r}\t"
           f"{res.poi!r}\t{res.samples}\t{res.seed}\n")


COMMANDS = {
    "make-toy": cmd_make_toy,
    "build-vocab": cmd_build_vocab,
    "build-iw": cmd_build_iw,
    "train": cmd_train,
    "eval-ppl": cmd_eval_ppl,
    "analyze-buckets": cmd_analyze_buckets,
    "rescore": cmd_rescore,
    "grid-search": cmd_grid_search,
    "bootstrap": cmd_bootstrap,
}


def _fail(kind: str, message: str, code: int) -> int:
    message = " ".join(str(message).split())
    sys.stderr.write(f"cachelm: error: {kind}: {message}\n")
    return code


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        cfg, explicit = resolve(parser, args)
        validate(cfg, explicit, args.command)
    except UsageError as e:
        return _fail("usage", e, 2)
    logger.info("command %s seed %d", args.command, cfg["seed"])
    for key in sorted(cfg):
        logger.info("config %s=%s", key.rstrip("_"), cfg[key])
    try:
        COMMANDS[args.command](cfg)
    except UsageError as e:
        return _fail("usage", e, 2)
    except (ValueError, OSError, RuntimeError, KeyError) as e:
        return _fail(type(e).__name__, e, 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
