import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cachelm.corpus import DISCOURSE, SENTENCE, build_vocabulary, tokenize
from cachelm.lstm import (CheckpointError, EarlyStopping, LstmModel, ModelError, TrainConfig,
                          batched_perplexity, block_loss_and_grads, clip_global_norm, forward_block,
                          forward_step, gradient_check, learning_rate, load_checkpoint, output_distribution,
                          run_lstm, save_checkpoint, train, write_training_log)
from conftest import small_model
from oracles import scalar_lstm


class TestConfig:
    def test_defaults(self):
        c = TrainConfig()
        assert (c.hidden_size, c.embedding_size, c.batch_size, c.unroll_steps) == (512, 512, 20, 35)
        assert (c.dropout_keep_prob, c.grad_clip_norm, c.initial_lr, c.lr_decay) == (0.5, 5.0, 1.0, 0.8)
        assert (c.constant_lr_epochs, c.patience, c.max_epochs, c.init_range) == (6, 3, 39, 0.05)

    def test_lr_schedule(self):
        c = TrainConfig()
        assert [learning_rate(e, c) for e in range(1, 7)] == [1.0] * 6
        assert learning_rate(7, c) == pytest.approx(0.8)
        assert learning_rate(8, c) == pytest.approx(0.64)

    def test_validation(self):
        with pytest.raises(ModelError):
            TrainConfig(dropout_keep_prob=0)
        with pytest.raises(ModelError):
            TrainConfig(mode="paragraph")

    def test_init_range(self):
        m = LstmModel.initialize(30, TrainConfig(hidden_size=8))
        for p in m.params.values():
            assert np.abs(p).max() <= 0.05

    def test_shape_validation(self):
        m = small_model()
        params = dict(m.params)
        params["b"] = np.zeros(3)
        with pytest.raises(ModelError):
            LstmModel(params, m.config)


class TestForward:
    def test_scalar_oracle(self):
        model = small_model(V=5, H=8, seed=3)
        tokens = [0, 3, 1, 4, 4, 2, 0]
        ref = scalar_lstm(model.params, tokens)
        state = None
        for tok, (h_ref, p_ref) in zip(tokens, ref):
            step, state = forward_step(model, tok, state)
            assert np.max(np.abs(step.hidden_state - h_ref)) <= 1e-10
            assert np.max(np.abs(step.probs - p_ref)) <= 1e-10
        hs, _ = run_lstm(model, tokens)
        assert np.max(np.abs(hs - np.array([h for h, _ in ref]))) <= 1e-10
        assert np.max(np.abs(output_distribution(model, hs) - np.array([p for _, p in ref]))) <= 1e-10

    def test_embedding_size_differs(self):
        model = small_model(V=5, H=3, E=6, seed=4)
        tokens = [1, 2, 3]
        ref = scalar_lstm(model.params, tokens)
        hs, _ = run_lstm(model, tokens)
        assert np.max(np.abs(hs - np.array([h for h, _ in ref]))) <= 1e-10

    def test_zero_model_uniform(self):
        model = small_model(V=6, H=3)
        for p in model.params.values():
            p[...] = 0
        step, _ = forward_step(model, 2)
        np.testing.assert_allclose(step.probs, np.full(6, 1 / 6), atol=1e-15)

    @settings(max_examples=30)
    @given(st.integers(0, 2**32 - 1), st.integers(0, 6))
    def test_probs_normalized(self, seed, tok):
        model = small_model(V=7, H=5, seed=seed % 1000, scale=2.0)
        rng = np.random.default_rng(seed)
        state = (rng.normal(size=5), rng.normal(size=5))
        step, _ = forward_step(model, tok, state)
        assert abs(step.probs.sum() - 1) <= 1e-9

    def test_bad_inputs(self):
        model = small_model()
        with pytest.raises(ModelError):
            forward_step(model, 99)
        with pytest.raises(ModelError):
            forward_step(model, 0, (np.zeros(2), np.zeros(2)))

    def test_sentence_mode_resets_at_eos(self):
        model = small_model(V=5, H=4, eos_id=4)
        a, _ = run_lstm(model, [1, 2, 4, 3, 1], SENTENCE)
        b, _ = run_lstm(model, [4, 3, 1], SENTENCE)
        np.testing.assert_array_equal(a[2:], b)
        c, _ = run_lstm(model, [1, 2, 4, 3, 1], DISCOURSE)
        assert not np.allclose(a[2:], c[2:])

    def test_state_carry_changes_predictions(self):
        model = small_model(V=5, H=4)
        _, state = run_lstm(model, [1, 2, 3])
        carried, _ = run_lstm(model, [0, 1], state=state)
        fresh, _ = run_lstm(model, [0, 1])
        assert not np.allclose(carried, fresh)
        joined, _ = run_lstm(model, [1, 2, 3, 0, 1])
        np.testing.assert_array_equal(joined[3:], carried)

    def test_block_loss_matches_sequential(self):
        model = small_model(V=6, H=4, seed=2)
        rng = np.random.default_rng(0)
        x = rng.integers(0, 6, (3, 5))
        y = rng.integers(0, 6, (3, 5))
        loss, _ = block_loss_and_grads(model.params, x, y)
        total = 0.0
        for b in range(3):
            hs, _ = run_lstm(model, x[b])
            p = output_distribution(model, hs)
            total -= np.log(p[np.arange(5), y[b]]).sum()
        assert loss == pytest.approx(total / 3, rel=1e-12)


class TestGradients:
    @pytest.mark.parametrize("seed", range(5))
    def test_gradient_check(self, seed):
        rng = np.random.default_rng(seed)
        model = small_model(V=6, H=3, E=4, seed=seed, scale=0.5)
        x = rng.integers(0, 6, (2, 4))
        y = rng.integers(0, 6, (2, 4))
        res = gradient_check(model, x, y)
        assert res.max_error < 1e-4, res.per_param

    def test_gradient_check_with_resets(self):
        rng = np.random.default_rng(9)
        model = small_model(V=6, H=3, seed=9, eos_id=5)
        x = np.array([[1, 5, 2, 3], [5, 0, 5, 4]])
        y = rng.integers(0, 6, x.shape)
        assert gradient_check(model, x, y, reset_id=5).max_error < 1e-4

    def test_forget_gate_fault_detected(self):
        model = small_model(V=6, H=3, seed=1)
        H = 3
        rng = np.random.default_rng(1)
        x = rng.integers(0, 6, (2, 5))
        y = rng.integers(0, 6, (2, 5))

        def broken(params, inputs, targets):
            grads = block_loss_and_grads(params, inputs, targets)[1]
            grads["W"][:, H:2 * H] = 0
            grads["b"][H:2 * H] = 0
            return grads

        res = gradient_check(model, x, y, grad_fn=broken)
        assert res.per_gate["forget"] > 1e-2
        assert res.per_gate["input"] < 1e-4

    def test_empty_sequence_is_error(self):
        model = small_model()
        with pytest.raises(ModelError):
            gradient_check(model, np.zeros((1, 0), dtype=int), np.zeros((1, 0), dtype=int))

    def test_clip_global_norm(self):
        g = {"a": np.array([3.0, 0.0]), "b": np.array([4.0])}
        assert clip_global_norm(g, 1.0) == pytest.approx(5.0)
        total = math.sqrt(sum(float((v ** 2).sum()) for v in g.values()))
        assert total == pytest.approx(1.0)
        g = {"a": np.array([0.3])}
        clip_global_norm(g, 1.0)
        assert g["a"][0] == 0.3


class TestTraining:
    def test_early_stopping_rule(self):
        es = EarlyStopping(3)
        stops = []
        for epoch, ppl in enumerate([10.0, 11, 12, 13, 14], 1):
            es.update(epoch, ppl)
            stops.append(es.should_stop)
        assert stops == [False, False, False, True, True]
        assert es.best_epoch == 1

    def test_early_stopping_counts_all_misses(self):
        es = EarlyStopping(3)
        for epoch, ppl in enumerate([10.0, 11, 9, 12, 8, 13], 1):
            es.update(epoch, ppl)
        assert es.should_stop and es.best == 8

    def test_deterministic_cycle_learned(self):
        text = ["a b c"] * 200
        v = build_vocabulary(text)
        s = tokenize(text, v)
        # eos makes the period 4: a b c eos
        cfg = TrainConfig(hidden_size=16, batch_size=4, unroll_steps=10, dropout_keep_prob=1.0,
                          max_epochs=20, patience=20, seed=3)
        model, history = train(LstmModel.initialize(len(v), cfg, v), s, s, cfg)
        assert len(history) <= 20
        assert batched_perplexity(model, s.tokens, 4, 10) < 1.05

    def test_determinism_and_best_model(self, tmp_path):
        text = [" ".join("abcdefg"[(i * j) % 7] for j in range(6)) for i in range(120)]
        v = build_vocabulary(text)
        s = tokenize(text, v)
        cfg = TrainConfig(hidden_size=8, batch_size=4, unroll_steps=5, max_epochs=4, seed=5)
        m1, h1 = train(LstmModel.initialize(len(v), cfg, v), s, s, cfg, log_path=tmp_path / "log.tsv")
        m2, h2 = train(LstmModel.initialize(len(v), cfg, v), s, s, cfg)
        assert [h.train_ppl for h in h1] == [h.train_ppl for h in h2]
        assert [h.valid_ppl for h in h1] == [h.valid_ppl for h in h2]
        best = min(h1, key=lambda h: h.valid_ppl)
        assert batched_perplexity(m1, s.tokens, 4, 5) == pytest.approx(best.valid_ppl, rel=1e-12)
        rows = (tmp_path / "log.tsv").read_text().splitlines()
        assert rows[0] == "epoch\tlr\ttrain_ppl\tvalid_ppl" and len(rows) == len(h1) + 1

    def test_stops_after_patience(self, monkeypatch):
        import cachelm.lstm as lstm_mod

        text = ["a b c d"] * 60
        v = build_vocabulary(text)
        s = tokenize(text, v)
        curve = iter(range(5, 100))
        snapshots = []
        real = lstm_mod.batched_perplexity

        def worsening(model, *args, **kwargs):
            snapshots.append(model.params["W"].copy())
            real(model, *args, **kwargs)
            return float(next(curve))

        monkeypatch.setattr(lstm_mod, "batched_perplexity", worsening)
        cfg = TrainConfig(hidden_size=8, batch_size=2, unroll_steps=5, max_epochs=30, patience=3, seed=1)
        best, history = train(LstmModel.initialize(len(v), cfg, v), s, s, cfg)
        assert [h.valid_ppl for h in history] == [5, 6, 7, 8]
        np.testing.assert_array_equal(best.params["W"], snapshots[0])

    def test_evaluation_has_no_dropout(self):
        model = small_model(V=6, H=4)
        toks = np.random.default_rng(0).integers(0, 6, 200)
        model.config.dropout_keep_prob = 0.5
        assert batched_perplexity(model, toks, 2, 10) == batched_perplexity(model, toks, 2, 10)

    def test_write_training_log(self, tmp_path):
        from cachelm.lstm import EpochLog
        write_training_log([EpochLog(1, 1.0, 50.0, 60.0)], tmp_path / "t.tsv")
        assert (tmp_path / "t.tsv").read_text() == "epoch\tlr\ttrain_ppl\tvalid_ppl\n1\t1.0\t50.0\t60.0\n"

    def test_dropout_masks_are_inverted(self):
        model = small_model(V=6, H=4)
        rng = np.random.default_rng(0)
        x = rng.integers(0, 6, (2, 3))
        state = model.zero_state(2)
        _, tape, _ = forward_block(model.params, x, x, state, 0.5, rng)
        assert set(np.unique(tape["masks_in"])) <= {0.0, 2.0}


class TestCheckpoint:
    def _model(self):
        v = build_vocabulary(["a b c"])
        cfg = TrainConfig(hidden_size=4)
        return v, LstmModel.initialize(len(v), cfg, v)

    def test_roundtrip_bit_identical(self, tmp_path):
        v, m = self._model()
        save_checkpoint(m, tmp_path / "m.npz")
        back = load_checkpoint(tmp_path / "m.npz", v)
        for k in m.params:
            assert back.params[k].tobytes() == m.params[k].tobytes()
        assert back.config == m.config and back.eos_id == m.eos_id

    def test_vocab_mismatch(self, tmp_path):
        _, m = self._model()
        save_checkpoint(m, tmp_path / "m.npz")
        with pytest.raises(CheckpointError, match="hash mismatch"):
            load_checkpoint(tmp_path / "m.npz", build_vocabulary(["a b d"]))

    def test_truncated(self, tmp_path):
        _, m = self._model()
        save_checkpoint(m, tmp_path / "m.npz")
        data = (tmp_path / "m.npz").read_bytes()
        (tmp_path / "t.npz").write_bytes(data[: len(data) // 2])
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "t.npz")
