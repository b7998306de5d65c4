import math

import numpy as np
import pytest

from minibert.mlm import MaskedBatch
from minibert.model import (
    ModelConfig,
    ModelError,
    OptimizerConfig,
    TokenClassBatch,
    adam_step,
    backward,
    classify_logits,
    classify_loss,
    encode,
    forward,
    init_model,
    init_opt_state,
    loss_and_grads,
    lr_at,
    mlm_loss,
    param_names,
)

TINY = ModelConfig(
    n_layers=2, hidden=16, n_heads=2, ffn_size=32, vocab_size=29, max_positions=16, dropout=0.0
)


def tiny_batch(seed=0, batch=2, seq=8, n_pad=2):
    rng = np.random.default_rng(seed)
    ids = rng.integers(5, TINY.vocab_size, size=(batch, seq)).astype(np.int32)
    attn = np.ones((batch, seq), dtype=bool)
    if n_pad:
        ids[-1, -n_pad:] = 0
        attn[-1, -n_pad:] = False
    return ids, attn


class TestConfig:
    def test_head_dim(self):
        assert ModelConfig(2, 64, 4, 256, 100, 128).head_dim == 16

    def test_divisibility_enforced(self):
        with pytest.raises(ModelError):
            ModelConfig(2, 30, 4, 64, 100, 128)


class TestInit:
    def test_deterministic(self):
        a = init_model(TINY, seed=3, n_labels=4)
        b = init_model(TINY, seed=3, n_labels=4)
        assert set(a) == set(param_names(TINY, 4))
        for k in a:
            assert np.array_equal(a[k], b[k]), k

    def test_layer_norm_identity_init(self):
        p = init_model(TINY, seed=0)
        assert (p["l0.ln1_g"] == 1.0).all()
        assert (p["l0.ln1_b"] == 0.0).all()

    def test_truncated_range(self):
        p = init_model(TINY, seed=0)
        assert np.abs(p["tok_emb"]).max() <= 0.04 + 1e-7

    def test_different_seeds_differ(self):
        a = init_model(TINY, seed=1)
        b = init_model(TINY, seed=2)
        assert not np.array_equal(a["tok_emb"], b["tok_emb"])


class TestForward:
    def test_attention_rows_normalized_and_pad_zero(self):
        params = init_model(TINY, seed=1)
        ids, attn = tiny_batch(n_pad=3)
        h, cache = encode(params, TINY, ids, attn)
        for lc in cache["layers"]:
            probs = lc["probs"]
            np.testing.assert_allclose(probs.sum(axis=-1), 1.0, atol=1e-6)
            assert (probs[1, :, :, -3:] == 0.0).all()  # PAD keys carry exactly zero

    def test_degenerate_model_is_layer_norm_of_embedding(self):
        cfg = ModelConfig(1, 16, 2, 32, 29, 16, dropout=0.0, layer_norm_eps=1e-12)
        params = init_model(cfg, seed=1, dtype=np.float64)
        for name in params:
            if "ln" not in name and name not in ("tok_emb", "pos_emb"):
                params[name] = np.zeros_like(params[name])
        ids, attn = tiny_batch(n_pad=0)
        h, _ = encode(params, cfg, ids, attn)
        emb = params["tok_emb"][ids] + params["pos_emb"][: ids.shape[1]][None]
        mu = emb.mean(-1, keepdims=True)
        var = ((emb - mu) ** 2).mean(-1, keepdims=True)
        expected = (emb - mu) / np.sqrt(var + cfg.layer_norm_eps)
        np.testing.assert_allclose(h, expected, atol=1e-9)

    def test_seq_too_long_rejected(self):
        params = init_model(TINY, seed=1)
        ids = np.zeros((1, TINY.max_positions + 1), dtype=np.int32)
        ids[0, 0] = 5
        with pytest.raises(ModelError, match="max_positions"):
            encode(params, TINY, ids, np.ones_like(ids, dtype=bool))

    def test_id_out_of_range_rejected(self):
        params = init_model(TINY, seed=1)
        ids = np.full((1, 4), TINY.vocab_size, dtype=np.int32)
        with pytest.raises(ModelError, match="vocab_size"):
            encode(params, TINY, ids, np.ones_like(ids, dtype=bool))

    def test_classifier_distribution_sums_to_one(self):
        params = init_model(TINY, seed=1, n_labels=7)
        ids, attn = tiny_batch()
        _h, logits = forward(params, TINY, ids, attn, head="classify")
        probs = np.exp(logits - logits.max(-1, keepdims=True))
        probs /= probs.sum(-1, keepdims=True)
        np.testing.assert_allclose(probs.sum(-1), 1.0, atol=1e-6)


class TestLosses:
    def test_uniform_logits(self):
        v = 29
        logits = np.zeros((1, 4, v))
        targets = np.array([[5, 6, 7, 8]])
        mask = np.ones((1, 4), dtype=bool)
        loss, ppl = mlm_loss(logits, targets, mask)
        assert loss == pytest.approx(math.log(v), abs=1e-12)
        assert ppl == pytest.approx(v, rel=1e-12)

    def test_one_hot_limit(self):
        logits = np.zeros((1, 2, 10))
        logits[0, :, 3] = 50.0
        loss, ppl = mlm_loss(logits, np.full((1, 2), 3), np.ones((1, 2), bool))
        assert loss == pytest.approx(0.0, abs=1e-12)
        assert ppl == pytest.approx(1.0, abs=1e-12)

    def test_two_class_hand_value(self):
        logits = np.array([[[1.0, 0.0]]])
        loss, _ = mlm_loss(logits, np.array([[0]]), np.ones((1, 1), bool))
        assert loss == pytest.approx(math.log(1 + math.exp(-1)), abs=1e-12)  # 0.31326...

    def test_empty_mask_rejected(self):
        with pytest.raises(ModelError, match="skip"):
            mlm_loss(np.zeros((1, 2, 5)), np.zeros((1, 2), int), np.zeros((1, 2), bool))

    def test_classify_sum_over_words(self):
        # 2 words, uniform 4-class logits -> 2 ln 4
        logits = np.zeros((1, 5, 4))
        labels = np.full((1, 5), -1)
        mask = np.zeros((1, 5), bool)
        mask[0, 1] = mask[0, 3] = True
        labels[0, 1] = 0
        labels[0, 3] = 2
        assert classify_loss(logits, labels, mask) == pytest.approx(2 * math.log(4), abs=1e-12)

    def test_classify_perfect_prediction(self):
        logits = np.zeros((1, 2, 3))
        logits[0, 0, 1] = 60.0
        labels = np.array([[1, -1]])
        mask = np.array([[True, False]])
        assert classify_loss(logits, labels, mask) == 0.0

    def test_multi_piece_word_single_term(self):
        # only the word_start position contributes: 1 term, not 3
        logits = np.zeros((1, 3, 4))
        labels = np.array([[2, -1, -1]])
        mask = np.array([[True, False, False]])
        assert classify_loss(logits, labels, mask) == pytest.approx(math.log(4), abs=1e-12)

    def test_classify_bad_label_rejected(self):
        logits = np.zeros((1, 1, 3))
        with pytest.raises(ModelError):
            classify_loss(logits, np.array([[7]]), np.array([[True]]))

    def test_batch_permutation_equivariance(self):
        params = init_model(TINY, seed=5, n_labels=4)
        rng = np.random.default_rng(0)
        ids, attn = tiny_batch(batch=6, n_pad=2)
        lm = (rng.random(ids.shape) < 0.3) & attn & (ids >= 5)
        lm[:, 1] = True  # every row contributes
        mb = MaskedBatch(ids, ids.copy(), lm, attn)
        loss1, _, _ = loss_and_grads(params, TINY, mb)
        perm = rng.permutation(ids.shape[0])
        mbp = MaskedBatch(ids[perm], ids[perm].copy(), lm[perm], attn[perm])
        loss2, _, _ = loss_and_grads(params, TINY, mbp)
        assert abs(loss1 - loss2) < 1e-10


class TestBackwardContracts:
    def test_untouched_classifier_head_zero_grad_under_mlm(self):
        params = init_model(TINY, seed=2, n_labels=4)
        ids, attn = tiny_batch()
        lm = attn & (ids >= 5)
        mb = MaskedBatch(ids, ids.copy(), lm, attn)
        grads = backward(params, TINY, mb, "mlm")
        assert (grads["cls_w"] == 0).all() and (grads["cls_b"] == 0).all()

    def test_zero_loss_zero_grads(self):
        params = init_model(TINY, seed=2, dtype=np.float64)
        target = 7
        params["mlm_b"][target] = 1e4  # saturates every position onto `target`
        ids, attn = tiny_batch(n_pad=0)
        targets = np.full_like(ids, target)
        lm = np.ones_like(attn)
        mb = MaskedBatch(ids, targets, lm, attn)
        loss, _ppl, grads = loss_and_grads(params, TINY, mb)
        assert loss == 0.0
        for name, g in grads.items():
            assert (g == 0).all(), name

    def test_loss_kind_dispatch(self):
        params = init_model(TINY, seed=2, n_labels=4)
        ids, attn = tiny_batch()
        mb = MaskedBatch(ids, ids.copy(), attn & (ids >= 5), attn)
        with pytest.raises(ModelError):
            backward(params, TINY, mb, "classify")
        with pytest.raises(ModelError):
            backward(params, TINY, mb, "nonsense")


class TestAdam:
    def test_zero_grad_no_decay_is_noop(self):
        params = {"w": np.array([1.0, -2.0], dtype=np.float32)}
        grads = {"w": np.zeros(2, dtype=np.float32)}
        state = init_opt_state(params)
        cfg = OptimizerConfig(weight_decay=0.0, total_steps=100)
        before = params["w"].copy()
        adam_step(params, grads, state, cfg, step=1)
        assert np.array_equal(params["w"], before)

    def test_scalar_first_step(self):
        params = {"w": np.array([0.5], dtype=np.float64)}
        grads = {"w": np.array([1.0], dtype=np.float64)}
        state = init_opt_state(params)
        cfg = OptimizerConfig(learning_rate=1e-4, weight_decay=0.0, total_steps=10**9)
        adam_step(params, grads, state, cfg, step=1)
        delta = params["w"][0] - 0.5
        assert delta == pytest.approx(-1e-4, abs=1e-9)

    def test_schedule_floor_at_total_steps(self):
        params = {"w": np.array([0.5], dtype=np.float32)}
        grads = {"w": np.array([1.0], dtype=np.float32)}
        state = init_opt_state(params)
        cfg = OptimizerConfig(weight_decay=0.0, total_steps=50)
        before = params["w"].copy()
        adam_step(params, grads, state, cfg, step=50)
        assert np.array_equal(params["w"], before)
        assert lr_at(cfg, 50) == 0.0
        assert lr_at(cfg, 25) == pytest.approx(5e-5)

    def test_decay_skips_norms_and_biases(self):
        from minibert.model.network import decays

        assert decays("tok_emb") and decays("l0.att.q_w") and decays("l1.ffn.w1")
        assert not decays("l0.ln1_g") and not decays("l0.ln2_b")
        assert not decays("l0.att.q_b") and not decays("mlm_b") and not decays("l0.ffn.b1")

    def test_warmup(self):
        cfg = OptimizerConfig(total_steps=100, warmup_steps=10)
        assert lr_at(cfg, 5) == pytest.approx(5e-5)
        assert lr_at(cfg, 10) == pytest.approx(1e-4 * 0.9)
