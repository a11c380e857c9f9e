"""Single-layer LSTM language model in numpy, trained with truncated BPTT.

Parameters are kept in float64 so that evaluation-time distributions are
normalized to well below 1e-9 and finite-difference gradient checks are
meaningful.

Gate pre-activations are computed as ``[x, h_prev] @ W + b`` with the columns
of ``W`` laid out in the order input, forget, output, candidate.
"""

from __future__ import annotations

import copy
import json
import logging
import math
import time
import zipfile
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Iterator

import numpy as np

from .corpus import DISCOURSE, MODES, SENTENCE, Vocabulary, batch_iterator, num_batches

logger = logging.getLogger(__name__)

PARAM_NAMES = ("embedding", "W", "b", "W_out", "b_out")
GATES = ("input", "forget", "output", "candidate")
CHECKPOINT_FORMAT = "cachelm-lstm/1"


class ModelError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class TrainConfig:
    hidden_size: int = 512
    embedding_size: int | None = None
    batch_size: int = 20
    unroll_steps: int = 35
    dropout_keep_prob: float = 0.5
    grad_clip_norm: float = 5.0
    initial_lr: float = 1.0
    lr_decay: float = 0.8
    constant_lr_epochs: int = 6
    patience: int = 3
    max_epochs: int = 39
    init_range: float = 0.05
    seed: int = 1
    mode: str = DISCOURSE

    def __post_init__(self):
        if self.embedding_size is None:
            self.embedding_size = self.hidden_size
        if self.mode not in MODES:
            raise ModelError(f"unknown training mode {self.mode!r}")
        if not 0.0 < self.dropout_keep_prob <= 1.0:
            raise ModelError("dropout_keep_prob must lie in (0, 1]")
        for name in ("hidden_size", "embedding_size", "batch_size", "unroll_steps", "max_epochs"):
            if getattr(self, name) < 1:
                raise ModelError(f"{name} must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


def learning_rate(epoch: int, config: TrainConfig) -> float:
    """Learning rate for 1-based ``epoch``: constant, then geometric decay."""
    decays = max(0, epoch - config.constant_lr_epochs)
    return config.initial_lr * config.lr_decay ** decays


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softmax(logits, axis=-1):
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(logits, axis=-1):
    z = logits - logits.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


@dataclass
class LmStep:
    hidden_state: np.ndarray
    logits: np.ndarray
    probs: np.ndarray


@dataclass
class LstmModel:
    params: dict[str, np.ndarray]
    config: TrainConfig
    vocab_digest: str = ""
    eos_id: int | None = None

    def __post_init__(self):
        p = self.params
        missing = [n for n in PARAM_NAMES if n not in p]
        if missing:
            raise ModelError(f"missing parameters: {missing}")
        V, E = p["embedding"].shape
        H = p["W_out"].shape[0]
        expected = {"embedding": (V, E), "W": (E + H, 4 * H), "b": (4 * H,),
                    "W_out": (H, V), "b_out": (V,)}
        for name, shape in expected.items():
            if p[name].shape != shape:
                raise ModelError(f"parameter {name} has shape {p[name].shape}, expected {shape}")

    @classmethod
    def initialize(cls, vocab_size: int, config: TrainConfig, vocab: Vocabulary | None = None,
                   rng: np.random.Generator | None = None) -> "LstmModel":
        rng = rng if rng is not None else np.random.default_rng(config.seed)
        V, E, H = vocab_size, config.embedding_size, config.hidden_size
        r = config.init_range
        shapes = {"embedding": (V, E), "W": (E + H, 4 * H), "b": (4 * H,),
                  "W_out": (H, V), "b_out": (V,)}
        params = {n: rng.uniform(-r, r, size=shapes[n]) for n in PARAM_NAMES}
        return cls(params, config,
                   vocab.digest() if vocab is not None else "",
                   vocab.eos_id if vocab is not None else None)

    @property
    def vocab_size(self) -> int:
        return self.params["embedding"].shape[0]

    @property
    def hidden_size(self) -> int:
        return self.params["W_out"].shape[0]

    @property
    def embedding_size(self) -> int:
        return self.params["embedding"].shape[1]

    def num_parameters(self) -> int:
        return sum(v.size for v in self.params.values())

    def zero_state(self, batch: int | None = None):
        shape = (self.hidden_size,) if batch is None else (batch, self.hidden_size)
        return np.zeros(shape), np.zeros(shape)

    def iter_outputs(self, tokens, mode: str = DISCOURSE, chunk: int = 256):
        return iter_lm_outputs(self, tokens, mode, chunk)

    def copy(self) -> "LstmModel":
        return LstmModel({k: v.copy() for k, v in self.params.items()}, copy.copy(self.config),
                         self.vocab_digest, self.eos_id)


def _cell(params, x, h_prev, c_prev):
    H = h_prev.shape[-1]
    xh = np.concatenate([x, h_prev], axis=-1)
    z = xh @ params["W"] + params["b"]
    i = sigmoid(z[..., :H])
    f = sigmoid(z[..., H:2 * H])
    o = sigmoid(z[..., 2 * H:3 * H])
    g = np.tanh(z[..., 3 * H:])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    return h, c, (xh, i, f, o, g, c_prev, tc)


def forward_step(model: LstmModel, word_id: int, state=None):
    """Advance one token; returns the output distribution and the new ``(h, c)``."""
    V, H = model.vocab_size, model.hidden_size
    if not 0 <= word_id < V:
        raise ModelError(f"word id {word_id} outside vocabulary of size {V}")
    h, c = state if state is not None else model.zero_state()
    if np.shape(h) != (H,) or np.shape(c) != (H,):
        raise ModelError(f"state must be two vectors of size {H}")
    x = model.params["embedding"][word_id]
    h, c, _ = _cell(model.params, x, h, c)
    logits = h @ model.params["W_out"] + model.params["b_out"]
    return LmStep(h, logits, softmax(logits)), (h, c)


def run_lstm(model: LstmModel, tokens, mode: str = DISCOURSE, state=None,
             reset_id: int | None = None):
    """Hidden states for every input position of a single sequence.

    In sentence mode the state is zeroed before each input equal to
    ``reset_id`` (the eos id by default), so eos acts as a sentence start.
    Returns ``(hiddens, final_state)`` with ``hiddens`` of shape ``(T, H)``.
    """
    tokens = np.asarray(tokens, dtype=np.int64)
    if len(tokens) and (tokens.min() < 0 or tokens.max() >= model.vocab_size):
        raise ModelError("token id outside the model vocabulary")
    if reset_id is None:
        reset_id = model.eos_id
    if mode == SENTENCE and reset_id is None:
        raise ModelError("sentence mode needs to know the eos id")
    h, c = state if state is not None else model.zero_state()
    p = model.params
    emb = p["embedding"]
    out = np.empty((len(tokens), model.hidden_size))
    H = model.hidden_size
    W, b = p["W"], p["b"]
    E = model.embedding_size
    Wx, Wh = W[:E], W[E:]
    # Input projections do not depend on the recurrence; compute them in one go.
    zx = emb[tokens] @ Wx + b
    for t, tok in enumerate(tokens):
        if mode == SENTENCE and tok == reset_id:
            h, c = np.zeros(H), np.zeros(H)
        z = zx[t] + h @ Wh
        i = sigmoid(z[:H])
        f = sigmoid(z[H:2 * H])
        o = sigmoid(z[2 * H:3 * H])
        g = np.tanh(z[3 * H:])
        c = f * c + i * g
        h = o * np.tanh(c)
        out[t] = h
    return out, (h, c)


def output_distribution(model: LstmModel, hiddens) -> np.ndarray:
    return softmax(hiddens @ model.params["W_out"] + model.params["b_out"])


def output_log_probs(model: LstmModel, hiddens) -> np.ndarray:
    return log_softmax(hiddens @ model.params["W_out"] + model.params["b_out"])


def iter_lm_outputs(model: LstmModel, tokens, mode: str = DISCOURSE, chunk: int = 256,
                    state=None) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield ``(hiddens, probs)`` blocks of at most ``chunk`` positions.

    Blocks keep memory bounded for large vocabularies; the recurrent state
    carries from one block to the next.
    """
    tokens = np.asarray(tokens, dtype=np.int64)
    for s in range(0, len(tokens), chunk):
        hs, state = run_lstm(model, tokens[s:s + chunk], mode, state)
        yield hs, output_distribution(model, hs)


# --- batched training graph -------------------------------------------------

def forward_block(params, inputs, targets, state, keep_prob: float = 1.0,
                  rng: np.random.Generator | None = None, reset_id: int | None = None):
    """Forward a ``(B, T)`` block; returns ``(loss, tape, final_state)``.

    ``loss`` is the cross entropy summed over time and averaged over the batch.
    Dropout (inverted) hits the embedding output and the LSTM output only.
    """
    B, T = inputs.shape
    h, c = state
    H = h.shape[1]
    emb = params["embedding"]
    steps = []
    hs = np.empty((T, B, H))
    masks_in = masks_out = None
    if keep_prob < 1.0:
        masks_in = (rng.random((T, B, emb.shape[1])) < keep_prob) / keep_prob
        masks_out = (rng.random((T, B, H)) < keep_prob) / keep_prob
    resets = []
    for t in range(T):
        x = emb[inputs[:, t]]
        if masks_in is not None:
            x = x * masks_in[t]
        keep = None
        if reset_id is not None:
            keep = (inputs[:, t] != reset_id)[:, None].astype(np.float64)
            h, c = h * keep, c * keep
        resets.append(keep)
        h, c, tape = _cell(params, x, h, c)
        steps.append(tape)
        hs[t] = h
    hd = hs * masks_out if masks_out is not None else hs
    logits = hd.reshape(T * B, H) @ params["W_out"] + params["b_out"]
    logp = log_softmax(logits)
    tgt = targets.T.reshape(-1)
    nll = -logp[np.arange(T * B), tgt]
    if not np.all(np.isfinite(nll)):
        raise TrainingError("non-finite loss in forward pass")
    loss = nll.sum() / B
    tape = dict(inputs=inputs, tgt=tgt, steps=steps, hd=hd, logp=logp, masks_in=masks_in,
                masks_out=masks_out, resets=resets, B=B, T=T, H=H)
    return loss, tape, (h, c)


def backward_block(params, tape) -> dict[str, np.ndarray]:
    B, T, H = tape["B"], tape["T"], tape["H"]
    E = params["embedding"].shape[1]
    dlogits = np.exp(tape["logp"])
    dlogits[np.arange(T * B), tape["tgt"]] -= 1.0
    dlogits /= B
    hd = tape["hd"].reshape(T * B, H)
    grads = {"W_out": hd.T @ dlogits, "b_out": dlogits.sum(axis=0)}
    dhs = (dlogits @ params["W_out"].T).reshape(T, B, H)
    if tape["masks_out"] is not None:
        dhs = dhs * tape["masks_out"]
    dW = np.zeros_like(params["W"])
    db = np.zeros_like(params["b"])
    demb = np.zeros_like(params["embedding"])
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    Wx_T = params["W"][:E].T
    Wh_T = params["W"][E:].T
    for t in reversed(range(T)):
        xh, i, f, o, g, c_prev, tc = tape["steps"][t]
        dh = dhs[t] + dh_next
        do = dh * tc
        dc = dc_next + dh * o * (1.0 - tc * tc)
        di = dc * g
        df = dc * c_prev
        dg = dc * i
        dz = np.concatenate([di * i * (1.0 - i), df * f * (1.0 - f),
                             do * o * (1.0 - o), dg * (1.0 - g * g)], axis=1)
        dW += xh.T @ dz
        db += dz.sum(axis=0)
        dx = dz @ Wx_T
        dh_next = dz @ Wh_T
        dc_next = dc * f
        keep = tape["resets"][t]
        if keep is not None:
            dh_next = dh_next * keep
            dc_next = dc_next * keep
        if tape["masks_in"] is not None:
            dx = dx * tape["masks_in"][t]
        np.add.at(demb, tape["inputs"][:, t], dx)
    grads.update(W=dW, b=db, embedding=demb)
    return grads


def block_loss_and_grads(params, inputs, targets, state=None, reset_id=None):
    """Deterministic (no dropout) loss and gradients for one block."""
    inputs = np.atleast_2d(np.asarray(inputs, dtype=np.int64))
    targets = np.atleast_2d(np.asarray(targets, dtype=np.int64))
    if state is None:
        H = params["W_out"].shape[0]
        state = (np.zeros((inputs.shape[0], H)), np.zeros((inputs.shape[0], H)))
    loss, tape, _ = forward_block(params, inputs, targets, state, reset_id=reset_id)
    return loss, backward_block(params, tape)


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    norm = math.sqrt(sum(float(np.vdot(g, g)) for g in grads.values()))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


# --- gradient check -----------------------------------------------------------

@dataclass
class GradCheckResult:
    max_error: float
    per_param: dict[str, float]
    per_gate: dict[str, float] = field(default_factory=dict)


def gradient_check(model: LstmModel, inputs, targets, eps: float = 1e-5,
                   grad_fn: Callable | None = None, reset_id: int | None = None,
                   abs_floor: float = 1e-6) -> GradCheckResult:
    """Compare analytic gradients with central finite differences on every parameter.

    The relative error of one coordinate is ``|a - n| / max(|a|, |n|, abs_floor)``;
    the floor keeps round-off on vanishing gradients from dominating.
    ``grad_fn(params, inputs, targets)`` may replace the analytic gradient, which
    is how a faulty implementation is injected in tests.
    """
    inputs = np.atleast_2d(np.asarray(inputs, dtype=np.int64))
    targets = np.atleast_2d(np.asarray(targets, dtype=np.int64))
    if inputs.size == 0 or inputs.shape[1] == 0:
        raise ModelError("gradient check needs a non-empty sequence")
    if inputs.shape != targets.shape:
        raise ModelError("inputs and targets must have the same shape")
    params = {k: v.copy() for k, v in model.params.items()}
    if grad_fn is None:
        def grad_fn(p, x, y):
            return block_loss_and_grads(p, x, y, reset_id=reset_id)[1]
    analytic = grad_fn(params, inputs, targets)

    def loss_at(p):
        return block_loss_and_grads(p, inputs, targets, reset_id=reset_id)[0]

    per_param, errors = {}, {}
    for name in PARAM_NAMES:
        theta = params[name]
        num = np.zeros_like(theta)
        flat = theta.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            lp = loss_at(params)
            flat[k] = orig - eps
            lm = loss_at(params)
            flat[k] = orig
            num.reshape(-1)[k] = (lp - lm) / (2 * eps)
        a = analytic[name]
        err = np.abs(a - num) / np.maximum(np.maximum(np.abs(a), np.abs(num)), abs_floor)
        errors[name] = err
        per_param[name] = float(err.max())
    H = model.hidden_size
    per_gate = {}
    for k, gate in enumerate(GATES):
        cols = slice(k * H, (k + 1) * H)
        per_gate[gate] = float(max(errors["W"][:, cols].max(), errors["b"][cols].max()))
    return GradCheckResult(max(per_param.values()), per_param, per_gate)


# --- training -------------------------------------------------------------------

class EarlyStopping:
    """Stops once validation perplexity has failed to beat the best so far
    ``patience`` times (not necessarily in a row)."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = 0
        self.misses = 0

    def update(self, epoch: int, valid_ppl: float) -> bool:
        """Record one epoch; returns True if this epoch is the new best."""
        if valid_ppl < self.best:
            self.best, self.best_epoch = valid_ppl, epoch
            return True
        self.misses += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.misses >= self.patience


@dataclass
class EpochLog:
    epoch: int
    lr: float
    train_ppl: float
    valid_ppl: float
    seconds: float = 0.0


def batched_perplexity(model: LstmModel, tokens, batch_size: int, unroll_steps: int,
                       mode: str = DISCOURSE) -> float:
    """Dropout-free perplexity over contiguous lanes; used for epoch validation."""
    tokens = getattr(tokens, "tokens", tokens)
    batch_size = max(1, min(batch_size, (len(tokens) - 1) // unroll_steps))
    reset_id = model.eos_id if mode == SENTENCE else None
    state = model.zero_state(batch_size)
    total, count = 0.0, 0
    for x, y in batch_iterator(tokens, batch_size, unroll_steps):
        loss, _, state = forward_block(model.params, x, y, state, reset_id=reset_id)
        total += loss * batch_size
        count += x.size
    return math.exp(total / count)


def train(model: LstmModel, train_stream, valid_stream, config: TrainConfig | None = None,
          log_path=None) -> tuple[LstmModel, list[EpochLog]]:
    """SGD with global-norm clipping, a step-decayed learning rate and early stopping.

    Returns a copy of the model holding the parameters of the best validation
    epoch, together with the per-epoch log.
    """
    config = config or model.config
    train_tokens = np.asarray(getattr(train_stream, "tokens", train_stream), dtype=np.int64)
    valid_tokens = np.asarray(getattr(valid_stream, "tokens", valid_stream), dtype=np.int64)
    rng = np.random.default_rng(config.seed + 1)
    reset_id = model.eos_id if config.mode == SENTENCE else None
    model = model.copy()
    best = model.copy()
    stopper = EarlyStopping(config.patience)
    history: list[EpochLog] = []
    n_blocks = num_batches(len(train_tokens), config.batch_size, config.unroll_steps)
    logger.info("training: %d parameters, %d blocks/epoch, config=%s",
                model.num_parameters(), n_blocks, asdict(config))
    for epoch in range(1, config.max_epochs + 1):
        lr = learning_rate(epoch, config)
        start = time.time()
        state = model.zero_state(config.batch_size)
        total = 0.0
        for k, (x, y) in enumerate(batch_iterator(train_tokens, config.batch_size, config.unroll_steps)):
            loss, tape, state = forward_block(model.params, x, y, state, config.dropout_keep_prob,
                                              rng, reset_id)
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, block {k}, lr={lr}")
            grads = backward_block(model.params, tape)
            clip_global_norm(grads, config.grad_clip_norm)
            for name, g in grads.items():
                model.params[name] -= lr * g
            total += loss
        train_ppl = math.exp(total / (n_blocks * config.unroll_steps))
        valid_ppl = batched_perplexity(model, valid_tokens, config.batch_size, config.unroll_steps,
                                       config.mode)
        row = EpochLog(epoch, lr, train_ppl, valid_ppl, time.time() - start)
        history.append(row)
        logger.info("epoch %d lr %.4g train ppl %.3f valid ppl %.3f (%.1fs)",
                    epoch, lr, train_ppl, valid_ppl, row.seconds)
        if stopper.update(epoch, valid_ppl):
            best = model.copy()
        if stopper.should_stop:
            logger.info("validation perplexity failed to improve %d times; stopping", stopper.misses)
            break
    if log_path is not None:
        write_training_log(history, log_path)
    return best, history


def write_training_log(history: list[EpochLog], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("epoch\tlr\ttrain_ppl\tvalid_ppl\n")
        for r in history:
            f.write(f"{r.epoch}\t{r.lr!r}\t{r.train_ppl!r}\t{r.valid_ppl!r}\n")


# --- checkpoints -------------------------------------------------------------------

def save_checkpoint(model: LstmModel, path) -> None:
    """Write parameters as little-endian float64 arrays in an npz container.

    A JSON header records the config, the vocabulary digest and every tensor's
    shape and dtype.
    """
    header = {
        "format": CHECKPOINT_FORMAT,
        "config": asdict(model.config),
        "vocab_digest": model.vocab_digest,
        "eos_id": model.eos_id,
        "gate_order": list(GATES),
        "tensors": {n: {"shape": list(model.params[n].shape), "dtype": "<f8"} for n in PARAM_NAMES},
    }
    arrays = {n: np.ascontiguousarray(model.params[n], dtype="<f8") for n in PARAM_NAMES}
    arrays["__header__"] = np.frombuffer(json.dumps(header, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    with open(path, "wb") as f:
        np.savez(f, **arrays)


def load_checkpoint(path, vocab: Vocabulary | None = None) -> LstmModel:
    try:
        with np.load(path, allow_pickle=False) as data:
            header = json.loads(bytes(data["__header__"]).decode("utf-8"))
            params = {n: np.array(data[n], dtype=np.float64) for n in PARAM_NAMES}
    except (zipfile.BadZipFile, EOFError, KeyError, ValueError, OSError) as e:
        raise CheckpointError(f"{path}: unreadable checkpoint ({e})") from e
    if header.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: unknown checkpoint format {header.get('format')!r}")
    for n, meta in header["tensors"].items():
        if list(params[n].shape) != meta["shape"]:
            raise CheckpointError(f"{path}: tensor {n} has shape {params[n].shape}, header says {meta['shape']}")
    if vocab is not None:
        if vocab.digest() != header["vocab_digest"]:
            raise CheckpointError(
                f"{path}: vocabulary hash mismatch (checkpoint {header['vocab_digest'][:12]}, "
                f"given {vocab.digest()[:12]})")
        if len(vocab) != params["embedding"].shape[0]:
            raise CheckpointError(f"{path}: vocabulary size {len(vocab)} does not match embedding rows")
    try:
        return LstmModel(params, TrainConfig.from_dict(header["config"]), header["vocab_digest"],
                         header.get("eos_id"))
    except ModelError as e:
        raise CheckpointError(f"{path}: {e}") from e
