import math

import numpy as np
import pytest

from adaptive_nmt.attention import (adaptive_attend, align_scores, attend, attention_nodes, sentinel_nodes,
                                    sentinel_state)
from adaptive_nmt.encoder import Annotations, encode
from adaptive_nmt.numerics import DimensionError, Tape, grad_check
from conftest import tiny_model


def annotations(tape, rows, batch=1):
    rows = np.asarray(rows, dtype=float)
    J = rows.shape[0] // batch
    return Annotations(tape.leaf(rows), np.ones((batch, J), dtype=bool))


def random_instance(rng, J, n=4, scale=1.0):
    """Random attention/sentinel parameters with decoder width ``n`` = annotation width."""
    shapes = {"att.W_a": (n, n), "att.U_a": (n, n), "att.V_a": (n, 1), "sent.W_x": (6, n),
              "sent.W_t": (n, n), "sent.W_s_state": (n, n), "sent.W_s_score": (n, n),
              "sent.U_g": (n, n), "sent.W_h": (n, 1)}
    params = {k: rng.uniform(-scale, scale, size=s) for k, s in shapes.items()}
    data = {"H": rng.normal(size=(J, n)), "t_prev": rng.normal(size=(1, n)),
            "t": rng.normal(size=(1, n)), "x": rng.normal(size=(1, 6))}
    return params, data


def forward(tape, params, data, force_score=None):
    att, sent = attention_nodes(tape, params), sentinel_nodes(tape, params)
    ann = annotations(tape, data["H"])
    t_prev = tape.leaf(data["t_prev"])
    e = align_scores(tape, att, t_prev, ann)
    _, s = sentinel_state(tape, sent, tape.leaf(data["x"]), t_prev, tape.leaf(data["t"]))
    return ann, e, s, adaptive_attend(tape, sent, e, ann, s, t_prev, force_score=force_score)


class TestAlignScores:
    def test_zero_readout(self, rng):
        params, data = random_instance(rng, J=3)
        params["att.V_a"][:] = 0
        t = Tape()
        e = align_scores(t, attention_nodes(t, params), t.leaf(data["t_prev"]), annotations(t, data["H"]))
        np.testing.assert_array_equal(e.value, np.zeros((1, 3)))

    def test_single_position_by_hand(self, rng):
        params, data = random_instance(rng, J=1)
        t = Tape()
        e = align_scores(t, attention_nodes(t, params), t.leaf(data["t_prev"]), annotations(t, data["H"]))
        W, U, V = params["att.W_a"], params["att.U_a"], params["att.V_a"]
        tp, h = data["t_prev"][0], data["H"][0]
        n = len(tp)
        pre = [sum(tp[i] * W[i, k] for i in range(n)) + sum(h[i] * U[i, k] for i in range(n)) for k in range(n)]
        expected = math.fsum(V[k, 0] * math.tanh(pre[k]) for k in range(n))
        assert abs(e.value[0, 0] - expected) < 1e-14

    def test_gradients(self, rng):
        params, data = random_instance(rng, J=3)
        att = {k: params[k] for k in ("att.W_a", "att.U_a", "att.V_a")}
        w = rng.normal(size=(1, 3))

        def build(tape, p):
            e = align_scores(tape, attention_nodes(tape, p), tape.leaf(data["t_prev"]), annotations(tape, data["H"]))
            return tape.sum(tape.hadamard(e, tape.constant(w)))

        assert max(grad_check(build, att, step=1e-3).values()) < 1e-4

    def test_state_width_mismatch(self, rng):
        params, data = random_instance(rng, J=2)
        t = Tape()
        with pytest.raises(DimensionError):
            align_scores(t, attention_nodes(t, params), t.leaf(np.zeros((1, 3))), annotations(t, data["H"]))


class TestAttend:
    def test_single_position(self):
        t = Tape()
        ann = annotations(t, [[1.0, 2.0, 3.0]])
        out = attend(t, t.leaf([[0.7]]), ann)
        np.testing.assert_array_equal(out.alpha.value, [[1.0]])
        np.testing.assert_array_equal(out.c.value, [[1.0, 2.0, 3.0]])

    def test_uniform_scores_average_rows(self, rng):
        t = Tape()
        H = rng.normal(size=(4, 3))
        out = attend(t, t.leaf(np.full((1, 4), 2.5)), annotations(t, H))
        np.testing.assert_allclose(out.alpha.value, 0.25, rtol=1e-15)
        np.testing.assert_allclose(out.c.value[0], H.mean(axis=0), rtol=1e-14)

    def test_weighted_sum_by_brute_force(self, rng):
        t = Tape()
        H, e = rng.normal(size=(3, 5)), rng.normal(size=3)
        out = attend(t, t.leaf(e), annotations(t, H))
        w = [math.exp(v) / math.fsum(math.exp(u) for u in e) for v in e]
        expected = [math.fsum(w[j] * H[j, d] for j in range(3)) for d in range(5)]
        np.testing.assert_allclose(out.c.value[0], expected, rtol=1e-13)

    def test_shape_mismatch(self):
        t = Tape()
        with pytest.raises(DimensionError):
            attend(t, t.leaf([[0.0, 0.0]]), annotations(t, np.zeros((3, 2))))


class TestSentinelState:
    def test_zero_params(self, rng):
        params, data = random_instance(rng, J=2)
        params = {k: np.zeros_like(v) for k, v in params.items()}
        t = Tape()
        g, s = sentinel_state(t, sentinel_nodes(t, params), t.leaf(data["x"]), t.leaf(data["t_prev"]),
                              t.leaf(data["t"]))
        np.testing.assert_array_equal(g.value, 0.5)
        np.testing.assert_array_equal(s.value, 0.0)

    def test_zero_state_gives_zero_sentinel(self, rng):
        params, data = random_instance(rng, J=2)
        t = Tape()
        _, s = sentinel_state(t, sentinel_nodes(t, params), t.leaf(data["x"]), t.leaf(data["t_prev"]),
                              t.leaf(np.zeros((1, 4))))
        np.testing.assert_array_equal(s.value, 0.0)

    def test_by_hand(self, rng):
        params, data = random_instance(rng, J=2)
        t = Tape()
        _, s = sentinel_state(t, sentinel_nodes(t, params), t.leaf(data["x"]), t.leaf(data["t_prev"]),
                              t.leaf(data["t"]))
        x, tp, ti = data["x"][0], data["t_prev"][0], data["t"][0]
        Wx, Wt, Ws = params["sent.W_x"], params["sent.W_t"], params["sent.W_s_state"]
        expected = []
        for k in range(4):
            a = math.fsum([*(x[i] * Wx[i, k] for i in range(6)), *(tp[i] * Wt[i, k] for i in range(4))])
            g = 1 / (1 + math.exp(-a))
            expected.append(g * math.tanh(math.fsum(ti[i] * Ws[i, k] for i in range(4))))
        assert s.shape == (1, 4)
        np.testing.assert_allclose(s.value[0], expected, rtol=1e-13)

    def test_dimension_error(self, rng):
        params, data = random_instance(rng, J=2)
        t = Tape()
        with pytest.raises(DimensionError):
            sentinel_state(t, sentinel_nodes(t, params), t.leaf(np.zeros((1, 5))), t.leaf(data["t_prev"]),
                           t.leaf(data["t"]))


class TestAdaptiveAttend:
    def test_gate_closed(self, rng):
        params, data = random_instance(rng, J=3)
        _, _, _, out = forward(Tape(), params, data, force_score=-20.0)
        assert out.beta.value[0, 0] < 1e-8
        np.testing.assert_allclose(out.c_plus.value, out.c.value, atol=1e-7)

    def test_gate_open(self, rng):
        params, data = random_instance(rng, J=3)
        _, _, s, out = forward(Tape(), params, data, force_score=20.0)
        assert out.beta.value[0, 0] > 1 - 1e-8
        np.testing.assert_allclose(out.c_plus.value, s.value, atol=1e-7)

    def test_minus_infinity_reduces_to_plain_attention(self, rng):
        params, data = random_instance(rng, J=3)
        t = Tape()
        ann, e, _, out = forward(t, params, data, force_score=-np.inf)
        base = attend(t, e, ann)
        assert out.beta.value[0, 0] == 0.0
        np.testing.assert_array_equal(out.c_plus.value, base.c.value)

    def test_beta_is_last_weight(self, rng):
        params, data = random_instance(rng, J=5)
        _, _, _, out = forward(Tape(), params, data)
        assert out.alpha_hat.shape == (1, 6)
        assert out.beta.value[0, 0] == out.alpha_hat.value[0, 5]

    def test_mixture_identity(self, rng):
        for J in (1, 2, 7):
            params, data = random_instance(rng, J=J, scale=2.0)
            _, e, s, out = forward(Tape(), params, data)
            a_hat = out.alpha_hat.value[0]
            beta = a_hat[-1]
            direct = a_hat[:J] @ data["H"] + beta * s.value[0]
            np.testing.assert_allclose(out.c_plus.value[0], direct, rtol=0, atol=1e-10)
            alpha = np.exp(e.value[0] - e.value[0].max())
            np.testing.assert_allclose((1 - beta) * alpha / alpha.sum(), a_hat[:J], rtol=0, atol=1e-12)

    def test_every_sentinel_parameter_gets_gradient(self, rng):
        params, data = random_instance(rng, J=3)
        w = rng.normal(size=(1, 4))
        t = Tape()
        *_, out = forward(t, params, data)
        grads = t.backward(t.sum(t.hadamard(out.c_plus, t.constant(w))))
        for name in ("sent.W_x", "sent.W_t", "sent.W_s_state", "sent.W_s_score", "sent.U_g", "sent.W_h"):
            assert np.abs(grads[name]).max() > 1e-6, name

    def test_gradients(self, rng):
        params, data = random_instance(rng, J=3)
        w = rng.normal(size=(1, 4))

        def build(tape, p):
            *_, out = forward(tape, p, data)
            return tape.sum(tape.hadamard(out.c_plus, tape.constant(w)))

        assert max(grad_check(build, params, step=1e-3).values()) < 1e-4

    def test_width_mismatch_without_lift(self, rng):
        params, data = random_instance(rng, J=3)
        data["H"] = rng.normal(size=(3, 6))
        params["att.U_a"] = rng.normal(size=(6, 4))
        t = Tape()
        with pytest.raises(DimensionError):
            forward(t, params, data)

    def test_lift_maps_sentinel_to_context_width(self, rng):
        params, data = random_instance(rng, J=3)
        data["H"] = rng.normal(size=(3, 6))
        params["att.U_a"] = rng.normal(size=(6, 4))
        params["sent.W_lift"] = rng.normal(size=(4, 6))
        *_, s, out = forward(Tape(), params, data, force_score=40.0)
        np.testing.assert_allclose(out.c_plus.value, s.value @ params["sent.W_lift"], rtol=1e-12)


def test_batched_rows_match_single_rows():
    cfg, params = tiny_model(seed=9)
    rng = np.random.default_rng(1)
    src = np.array([[4, 5, 6], [7, 8, 9]])
    t = Tape()
    ann = encode(t, params, src)
    att, sent = attention_nodes(t, params), sentinel_nodes(t, params)
    t_prev = t.leaf(rng.normal(size=(2, cfg.hidden_dim)))
    x = t.leaf(rng.normal(size=(2, cfg.emb_dim + cfg.hidden_dim)))
    t_i = t.leaf(rng.normal(size=(2, cfg.hidden_dim)))
    e = align_scores(t, att, t_prev, ann)
    _, s = sentinel_state(t, sent, x, t_prev, t_i)
    both = adaptive_attend(t, sent, e, ann, s, t_prev).c_plus.value
    for b in range(2):
        a1 = encode(t, params, src[b])
        tp1 = t.leaf(t_prev.value[b:b + 1])
        e1 = align_scores(t, att, tp1, a1)
        _, s1 = sentinel_state(t, sent, t.leaf(x.value[b:b + 1]), tp1, t.leaf(t_i.value[b:b + 1]))
        one = adaptive_attend(t, sent, e1, a1, s1, tp1).c_plus.value
        np.testing.assert_allclose(both[b:b + 1], one, rtol=0, atol=1e-15)
