import math

import numpy as np
import pytest

from adaptive_nmt.numerics import DimensionError, DomainError
from adaptive_nmt.training import AdadeltaState, adadelta_update, clip_gradients, train
from conftest import tiny_model


class TestAdadelta:
    def test_first_step_by_hand(self):
        rho, eps, g = 0.95, 1e-6, 1.0
        eg = (1 - rho) * g * g
        expected = -math.sqrt(0.0 + eps) / math.sqrt(eg + eps) * g
        assert abs(expected - (-0.0044721)) < 1e-7
        params = {"w": np.zeros((1, 1))}
        adadelta_update(params, {"w": np.ones((1, 1))}, AdadeltaState(rho, eps))
        assert abs(params["w"][0, 0] - expected) < 1e-15

    def test_zero_gradient_decays_accumulators(self):
        params = {"w": np.array([[1.0, -2.0]])}
        state = AdadeltaState()
        adadelta_update(params, {"w": np.array([[3.0, 1.0]])}, state)
        before = params["w"].copy()
        eg, ex = state.sq_grad["w"].copy(), state.sq_delta["w"].copy()
        adadelta_update(params, {"w": np.zeros((1, 2))}, state)
        np.testing.assert_array_equal(params["w"], before)
        np.testing.assert_allclose(state.sq_grad["w"], 0.95 * eg, rtol=1e-15)
        np.testing.assert_allclose(state.sq_delta["w"], 0.95 * ex, rtol=1e-15)

    def test_step_opposes_gradient(self, rng):
        state = AdadeltaState()
        for _ in range(5):
            params = {"w": np.zeros((4, 3))}
            g = rng.normal(size=(4, 3))
            adadelta_update(params, {"w": g}, state)
            assert (np.sign(params["w"]) == -np.sign(g)).all()

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            adadelta_update({"w": np.zeros((2, 2))}, {"w": np.zeros((1, 2))}, AdadeltaState())

    def test_invalid_hyperparameters(self):
        with pytest.raises(DomainError):
            AdadeltaState(rho=1.0)
        with pytest.raises(DomainError):
            AdadeltaState(eps=0.0)


def test_clipping_rescales_to_norm():
    grads = {"a": np.array([[3.0]]), "b": np.array([[4.0]])}
    alias = grads["a"]
    assert clip_gradients(grads, 1.0) == 5.0
    np.testing.assert_allclose([grads["a"][0, 0], grads["b"][0, 0]], [0.6, 0.8])
    assert alias[0, 0] == 3.0
    small = {"a": np.array([[0.1]])}
    clip_gradients(small, 1.0)
    assert small["a"][0, 0] == 0.1


PAIR = [([4, 5, 6], [5, 6, 7])]


def test_single_sentence_loss_decreases():
    cfg, params = tiny_model(scale=0.08, seed=3)
    result = train(params, cfg, PAIR, epochs=8, batch_size=1)
    losses = result.batch_losses
    assert len(losses) == 8
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_zero_epochs_leave_params_unchanged():
    cfg, params = tiny_model()
    before = {k: v.copy() for k, v in params.items()}
    result = train(params, cfg, PAIR, epochs=0)
    assert result.epochs == []
    assert all(params[k].tobytes() == before[k].tobytes() for k in params)


def test_same_seed_same_run():
    pairs = [([4, 5], [5, 6]), ([6, 7, 8], [7]), ([9, 4], [4, 4, 5])]

    def run():
        cfg, params = tiny_model(scale=0.08, seed=1, dropout_rate=0.3)
        res = train(params, cfg, pairs, epochs=3, batch_size=2, dev=pairs, decode_len=5)
        return [e.line() for e in res.epochs], params

    (log_a, pa), (log_b, pb) = run(), run()
    assert log_a == log_b
    assert all(pa[k].tobytes() == pb[k].tobytes() for k in pa)


def test_best_params_follow_dev_bleu():
    pairs = [([4, 5], [5, 6]), ([6, 7, 8], [7, 4])]
    cfg, params = tiny_model(scale=0.08, seed=2)
    res = train(params, cfg, pairs, epochs=4, batch_size=2, dev=pairs, decode_len=5)
    bleus = [e.dev_bleu for e in res.epochs]
    assert res.best_bleu == max(bleus)
    assert res.best_epoch == bleus.index(max(bleus)) + 1


def test_empty_corpus():
    cfg, params = tiny_model()
    with pytest.raises(DomainError):
        train(params, cfg, [], epochs=1)
