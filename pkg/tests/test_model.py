import math

import numpy as np
import pytest

from adaptive_nmt.cli import run_gradcheck
from adaptive_nmt.model import (BOS, EOS, ModelConfig, batch_loss, bind, count_params, decode_step,
                                init_decoder_state, init_params, prepare_source, sentence_loss,
                                teacher_forcing)
from adaptive_nmt.encoder import encode
from adaptive_nmt.numerics import DomainError, Tape
from conftest import tiny_model


def step_distributions(params, cfg, src, tgt, force_score=None):
    """Per-step log-probabilities under teacher forcing."""
    tape = Tape(record=False)
    bound, ann, keys, t = prepare_source(tape, params, cfg, [src])
    out = []
    for y in [BOS] + list(tgt):
        trace, t = decode_step(tape, bound, cfg, [y], t, ann, keys, force_score=force_score)
        out.append(trace)
    return out


class TestConfig:
    def test_decoder_width_must_be_even(self):
        with pytest.raises(ValueError):
            ModelConfig(hidden_dim=7)

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            ModelConfig(mode="hybrid")

    def test_text_roundtrip(self):
        cfg = ModelConfig(mode="baseline", emb_dim=12, seed=4)
        lines = dict(line.split(" = ") for line in cfg.to_text().splitlines())
        assert ModelConfig.from_dict(lines) == cfg


class TestParams:
    def test_adaptive_is_strict_superset(self):
        base = init_params(ModelConfig(mode="baseline"))
        adapt = init_params(ModelConfig(mode="adaptive"))
        assert set(base) < set(adapt)
        for name in base:
            np.testing.assert_array_equal(base[name], adapt[name])
        assert count_params(adapt) > count_params(base)

    def test_init_range_and_zero_biases(self):
        params = init_params(ModelConfig())
        for name, value in params.items():
            if ".b_" in name:
                assert not value.any()
            else:
                assert np.abs(value).max() <= 0.08

    def test_seeded(self):
        a, b = init_params(ModelConfig(seed=3)), init_params(ModelConfig(seed=3))
        assert all(a[k].tobytes() == b[k].tobytes() for k in a)


class TestInitialState:
    def test_zero_projection(self):
        cfg, params = tiny_model()
        params["init.W_init"][:] = 0
        tape = Tape()
        *_, t0 = prepare_source(tape, params, cfg, [[1, 2, 3]])
        np.testing.assert_array_equal(t0.value, 0.0)

    def test_single_position_uses_its_annotation(self):
        cfg, params = tiny_model(seed=2)
        tape = Tape()
        ann = encode(tape, params, [5])
        t0 = init_decoder_state(tape, bind(tape, params, cfg), ann)
        np.testing.assert_allclose(t0.value, np.tanh(ann.H.value @ params["init.W_init"]), rtol=1e-15)

    def test_by_hand(self):
        cfg, params = tiny_model(seed=3)
        tape = Tape()
        ann = encode(tape, params, [5, 2, 7])
        t0 = init_decoder_state(tape, bind(tape, params, cfg), ann).value[0]
        H, W = ann.H.value, params["init.W_init"]
        mean = [math.fsum(H[:, d]) / 3 for d in range(H.shape[1])]
        expected = [math.tanh(math.fsum(mean[i] * W[i, k] for i in range(len(mean)))) for k in range(W.shape[1])]
        np.testing.assert_allclose(t0, expected, rtol=1e-13)


class TestDecodeStep:
    def test_baseline_contract(self):
        cfg, params = tiny_model(mode="baseline")
        traces = step_distributions(params, cfg, [4, 5, 6], [])
        assert traces[0].beta is None
        assert traces[0].weights.shape == (1, 3)

    def test_adaptive_contract(self):
        cfg, params = tiny_model()
        trace = step_distributions(params, cfg, [4, 5, 6], [])[0]
        assert trace.weights.shape == (1, 4)
        assert trace.beta.value[0, 0] == trace.weights.value[0, 3]
        assert 0 < trace.beta.value[0, 0] < 1

    def test_distributions_normalised(self):
        cfg, params = tiny_model(scale=2.0)
        for trace in step_distributions(params, cfg, [4, 5, 6, 1], [4, 6, 7, 5]):
            lp = trace.log_probs.value[0]
            assert abs(np.logaddexp.reduce(lp)) < 1e-9

    @pytest.mark.parametrize("seed", range(5))
    def test_pinned_sentinel_reproduces_baseline(self, seed):
        cfg, params = tiny_model(seed=seed, scale=1.0)
        base_cfg = ModelConfig(**{**cfg.__dict__, "mode": "baseline"})
        base_params = {k: v for k, v in params.items() if not k.startswith("sent.")}
        src, tgt = [4, 9, 2, 6], [5, 4, 7]
        pinned = step_distributions(params, cfg, src, tgt, force_score=-np.inf)
        plain = step_distributions(base_params, base_cfg, src, tgt)
        for a, b in zip(pinned, plain):
            np.testing.assert_allclose(a.log_probs.value, b.log_probs.value, rtol=0, atol=1e-10)
            np.testing.assert_allclose(a.weights.value[:, :-1], b.weights.value, rtol=0, atol=1e-10)

    def test_vocab_overflow(self):
        cfg, params = tiny_model()
        tape = Tape()
        bound, ann, keys, t = prepare_source(tape, params, cfg, [[4, 5]])
        with pytest.raises(IndexError):
            decode_step(tape, bound, cfg, [cfg.tgt_vocab], t, ann, keys)


class TestLoss:
    def test_uniform_model(self):
        cfg, params = tiny_model()
        params = {k: np.zeros_like(v) for k, v in params.items()}
        tgt = [4, 5, 6]
        loss = sentence_loss(params, cfg, [1, 2], tgt).value[0, 0]
        assert abs(loss - (len(tgt) + 1) * math.log(cfg.tgt_vocab)) < 1e-12

    def test_non_negative(self):
        for seed in range(10):
            cfg, params = tiny_model(seed=seed, scale=3.0)
            assert sentence_loss(params, cfg, [4, 5, 6], [7, 7, 4]).value[0, 0] >= 0

    def test_matches_step_sum(self):
        cfg, params = tiny_model(seed=1)
        src, tgt = [4, 5, 6], [7, 4]
        traces = step_distributions(params, cfg, src, tgt)
        expected = -sum(tr.log_probs.value[0, y] for tr, y in zip(traces, tgt + [EOS]))
        assert abs(sentence_loss(params, cfg, src, tgt).value[0, 0] - expected) < 1e-12

    def test_padded_batch_equals_sum_of_sentences(self):
        cfg, params = tiny_model(seed=2)
        pairs = [([4, 5, 6, 7], [5, 6]), ([8, 4], [7, 7, 6, 5])]
        from adaptive_nmt.data import pad_batch
        b = pad_batch(pairs)
        total = batch_loss(Tape(), params, cfg, b.src, b.src_mask, b.tgt_in, b.tgt_out, b.tgt_mask).value[0, 0]
        each = sum(sentence_loss(params, cfg, s, t).value[0, 0] for s, t in pairs)
        assert abs(total - each) < 1e-12

    def test_teacher_forcing_protocol(self):
        tin, tout = teacher_forcing([7, 8])
        assert list(tin) == [BOS, 7, 8] and list(tout) == [7, 8, EOS]

    def test_length_violations(self):
        cfg, params = tiny_model(max_len=3)
        with pytest.raises(DomainError):
            sentence_loss(params, cfg, [4, 5, 6, 7], [4])
        with pytest.raises(DomainError):
            sentence_loss(params, cfg, [4], [])


@pytest.fixture(scope="module")
def gradcheck_report():
    return run_gradcheck(seed=1)


@pytest.mark.parametrize("mode", ["baseline", "adaptive"])
def test_end_to_end_gradients(mode, gradcheck_report):
    report = gradcheck_report[mode]
    assert max(report.values()) < 1e-4
    if mode == "adaptive":
        assert {"sent.W_x", "sent.W_t", "sent.W_s_state", "sent.W_h"} <= set(report)
