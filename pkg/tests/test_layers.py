import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from recosa.layers import (Affine, FFNParams, LayerNormParams, LSTMParams, MultiHeadParams, PositionTable,
                           add_context_positions, causal_mask, concat_positions, feed_forward, key_padding_mask,
                           lstm_encode, multi_head, scaled_dot_attention)
from recosa.numcore import Tensor, check_gradients, ops


def T(a, grad=False):
    return Tensor(a, requires_grad=grad)


def sig(x):
    return 1.0 / (1.0 + math.exp(-x))


# -- LSTM ------------------------------------------------------------------

def test_lstm_zero_weights_give_zero_state():
    p = LSTMParams.init(3, 4, np.random.default_rng(0), scale=0.0)
    h = lstm_encode(T(np.random.default_rng(1).normal(size=(5, 3))), p)
    assert h.shape == (4,) and not h.data.any()


def test_lstm_scalar_hand_evaluation():
    # gate g computes sigma_or_tanh(u_g * h + v_g * x + b_g)
    u = {"i": 0.5, "f": -0.4, "o": 0.3, "l": 0.8}
    v = {"i": -0.3, "f": 0.6, "o": 0.9, "l": -0.7}
    b = {"i": 0.1, "f": 0.2, "o": -0.1, "l": 0.05}
    p = LSTMParams(*[T([[u[g]], [v[g]]], True) for g in "ifol"], *[T([b[g]], True) for g in "ifol"])
    xs = [0.7, -1.2]
    h = c = 0.0
    for x in xs:
        i = sig(u["i"] * h + v["i"] * x + b["i"])
        f = sig(u["f"] * h + v["f"] * x + b["f"])
        o = sig(u["o"] * h + v["o"] * x + b["o"])
        l = math.tanh(u["l"] * h + v["l"] * x + b["l"])
        c = f * c + i * l
        h = o * math.tanh(c)
    out = lstm_encode(T([[xs[0]], [xs[1]]]), p)
    assert abs(out.data[0] - h) < 1e-15


def test_lstm_rejects_empty_sentence():
    p = LSTMParams.init(2, 2, np.random.default_rng(0))
    with pytest.raises(ValueError):
        lstm_encode(T(np.zeros((1, 0, 2))), p)


def test_lstm_padding_does_not_advance_state(rng):
    p = LSTMParams.init(3, 4, rng, scale=0.5)
    x = rng.normal(size=(2, 5, 3))
    h = lstm_encode(T(x), p, lengths=[2, 5]).data
    alone = lstm_encode(T(x[0, :2]), p).data
    assert np.max(np.abs(h[0] - alone)) < 1e-12
    assert not lstm_encode(T(x), p, lengths=[0, 5]).data[0].any()


def test_lstm_gradients(rng):
    p = LSTMParams.init(3, 4, rng, scale=0.5)
    for t in p.named().values():
        t.data = rng.uniform(-0.5, 0.5, t.shape)
    x = T(rng.normal(size=(3, 4, 3)), True)
    w = T(rng.normal(size=(3, 4)))
    f = lambda: ops.sum(ops.mul(lstm_encode(x, p, lengths=[4, 2, 3]), w))
    report = check_gradients(f, list(p.named().values()) + [x])
    assert max(report.values()) < 1e-4, report


# -- attention -------------------------------------------------------------

def test_single_key_returns_its_value(rng):
    V = rng.normal(size=(1, 3))
    out, w = scaled_dot_attention(T(rng.normal(size=(4, 2))), T(rng.normal(size=(1, 2))), T(V))
    assert np.allclose(out.data, np.repeat(V, 4, axis=0), atol=0, rtol=1e-15)
    assert (w == 1.0).all()


def test_orthogonal_scores_average_values(rng):
    Q = T([[1.0, 0.0]])
    K = T([[0.0, 1.0], [0.0, -2.0], [0.0, 3.0]])
    V = rng.normal(size=(3, 4))
    out, _ = scaled_dot_attention(Q, K, T(V))
    np.testing.assert_allclose(out.data[0], V.mean(axis=0), rtol=1e-14)


def test_two_by_two_hand_softmax():
    Q, K = T([[1.0], [2.0]]), T([[0.0], [1.0]])
    V = T([[1.0, 0.0], [0.0, 1.0]])
    out, w = scaled_dot_attention(Q, K, V)
    for r, q in enumerate((1.0, 2.0)):
        e0, e1 = math.exp(0.0), math.exp(q)
        assert w[r, 0] == pytest.approx(e0 / (e0 + e1), abs=1e-15)
        assert out.data[r, 1] == pytest.approx(e1 / (e0 + e1), abs=1e-15)


def test_multi_head_one_head_identity_equals_plain_attention(rng):
    d = 4
    eye = np.eye(d)
    p = MultiHeadParams(T(eye), T(eye), T(eye), T(eye), 1)
    Q, K, V = (T(rng.normal(size=(n, d))) for n in (3, 5, 5))
    mask = np.where(rng.random((3, 5)) < 0.3, -np.inf, 0.0)
    mask[:, 0] = 0.0
    a, wa = multi_head(Q, K, V, mask, p)
    b, wb = scaled_dot_attention(Q, K, V, mask)
    assert np.max(np.abs(a.data - b.data)) < 1e-12
    assert np.max(np.abs(wa[0] - wb)) < 1e-12


def test_multi_head_block_diagonal_equals_per_head_loop(rng):
    d, H = 6, 2
    k = d // H
    blocks = {n: [rng.normal(size=(k, k)) for _ in range(H)] for n in "qkv"}

    def bd(mats):
        m = np.zeros((d, d))
        for h, b in enumerate(mats):
            m[h * k:(h + 1) * k, h * k:(h + 1) * k] = b
        return m

    p = MultiHeadParams(T(bd(blocks["q"])), T(bd(blocks["k"])), T(bd(blocks["v"])), T(np.eye(d)), H)
    Q, K = rng.normal(size=(3, d)), rng.normal(size=(4, d))
    out, w = multi_head(T(Q), T(K), T(K), None, p)
    # oracle: independent attentions per subspace, then concatenation
    parts = []
    for h in range(H):
        sl = slice(h * k, (h + 1) * k)
        q = Q[:, sl] @ blocks["q"][h]
        kk = K[:, sl] @ blocks["k"][h]
        vv = K[:, sl] @ blocks["v"][h]
        s = q @ kk.T / math.sqrt(k)
        e = np.exp(s - s.max(axis=1, keepdims=True))
        a = e / e.sum(axis=1, keepdims=True)
        assert np.max(np.abs(a - w[h])) < 1e-12
        parts.append(a @ vv)
    assert np.max(np.abs(out.data - np.concatenate(parts, axis=1))) < 1e-12


def test_multi_head_shapes(rng):
    p = MultiHeadParams.init(8, 2, rng)
    out, w = multi_head(T(rng.normal(size=(2, 3, 8))), T(rng.normal(size=(2, 5, 8))),
                        T(rng.normal(size=(2, 5, 8))), None, p)
    assert out.shape == (2, 3, 8) and w.shape == (2, 2, 3, 5)
    with pytest.raises(ValueError):
        MultiHeadParams.init(8, 3, rng)


def test_multi_head_gradients(rng):
    p = MultiHeadParams.init(4, 2, rng)
    Q = T(rng.normal(size=(2, 3, 4)), True)
    K = T(rng.normal(size=(2, 4, 4)), True)
    mask = key_padding_mask(np.array([[True, True, False, True], [True, False, False, False]]), 3)
    w = T(rng.normal(size=(2, 3, 4)))
    f = lambda: ops.sum(ops.mul(multi_head(Q, K, K, mask, p)[0], w))
    report = check_gradients(f, list(p.named().values()) + [Q, K])
    assert max(report.values()) < 1e-4, report


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 3), st.integers(1, 5), st.integers(1, 6), st.sampled_from([1, 2, 4]), st.integers(0, 2**31))
def test_attention_rows_normalised(B, n_q, n_k, H, seed):
    r = np.random.default_rng(seed)
    p = MultiHeadParams.init(4, H, r)
    valid = r.random((B, n_k)) < 0.6
    valid[:, 0] = True
    _, w = multi_head(T(r.normal(size=(B, n_q, 4))), T(r.normal(size=(B, n_k, 4))),
                      T(r.normal(size=(B, n_k, 4))), key_padding_mask(valid, n_q), p)
    assert np.all(np.abs(w.sum(axis=-1) - 1.0) < 1e-9)
    assert np.all(w[~np.broadcast_to(valid[:, None, None, :], w.shape)] == 0.0)


# -- positions ---------------------------------------------------------------

def test_zero_position_table_is_permutation_equivariant(rng):
    d_h, N = 3, 5
    table = PositionTable(T(np.zeros((N, d_h))))
    proj = Affine(T(np.vstack([np.eye(d_h), rng.normal(size=(d_h, d_h))])), T(np.zeros(d_h)))
    h = rng.normal(size=(N, d_h))
    perm = rng.permutation(N)
    a = add_context_positions(T(h), table, proj).data
    b = add_context_positions(T(h[perm]), table, proj).data
    assert np.array_equal(a[perm], b)


def test_random_position_table_breaks_equivariance(rng):
    d_h, N = 3, 5
    table = PositionTable(T(rng.normal(size=(N, d_h))))
    proj = Affine.init(2 * d_h, d_h, rng)
    h = rng.normal(size=(N, d_h))
    perm = np.array([1, 0, 2, 3, 4])
    a = add_context_positions(T(h), table, proj).data
    b = add_context_positions(T(h[perm]), table, proj).data
    assert np.max(np.abs(a[perm] - b)) > 1e-3


def test_single_context_concat_shape(rng):
    table = PositionTable.init(4, 3, rng)
    out = concat_positions(T(rng.normal(size=(1, 3))), table)
    assert out.shape == (1, 6)
    assert np.array_equal(out.data[0, 3:], table.table.data[0])
    with pytest.raises(ValueError):
        concat_positions(T(np.zeros((5, 3))), table)


def test_position_and_projection_gradients(rng):
    table = PositionTable.init(4, 3, rng)
    proj = Affine.init(6, 4, rng)
    h = T(rng.normal(size=(2, 3, 3)), True)
    w = T(rng.normal(size=(2, 3, 4)))
    f = lambda: ops.sum(ops.mul(add_context_positions(h, table, proj), w))
    report = check_gradients(f, [table.table, proj.w, proj.b, h])
    assert max(report.values()) < 1e-4, report


# -- feed-forward, layer norm, masks -------------------------------------------

def test_ffn_zero_weights_with_residual_is_identity(rng):
    p = FFNParams(T(np.zeros((4, 8))), T(np.zeros(8)), T(np.zeros((8, 4))), T(np.zeros(4)))
    x = rng.normal(size=(3, 4))
    assert np.array_equal(feed_forward(T(x), p).data, x)


def test_ffn_zero_input_returns_output_bias(rng):
    b2 = rng.normal(size=4)
    p = FFNParams(T(rng.normal(size=(4, 8))), T(np.zeros(8)), T(rng.normal(size=(8, 4))), T(b2))
    out = feed_forward(T(np.zeros((3, 4))), p).data
    assert np.array_equal(out, np.tile(b2, (3, 1)))


def test_ffn_and_layer_norm_gradients(rng):
    p = FFNParams.init(4, 8, rng)
    p.b1.data = rng.normal(size=8)
    ln = LayerNormParams.init(4)
    ln.gain.data = rng.normal(size=4)
    x = T(rng.normal(size=(2, 3, 4)), True)
    w = T(rng.normal(size=(2, 3, 4)))
    f = lambda: ops.sum(ops.mul(ln(feed_forward(x, p)), w))
    report = check_gradients(f, list(p.named().values()) + list(ln.named().values()) + [x])
    assert max(report.values()) < 1e-4, report


def test_causal_mask_values():
    assert causal_mask(1).tolist() == [[0.0]]
    m = causal_mask(3)
    assert (m[np.tril_indices(3)] == 0).all()
    assert np.isneginf(m[np.triu_indices(3, 1)]).all()


def test_causal_self_attention_ignores_future_inputs(rng):
    p = MultiHeadParams.init(4, 2, rng)
    Tn = 5
    x = rng.normal(size=(Tn, 4))
    mask = causal_mask(Tn)
    base = multi_head(T(x), T(x), T(x), mask, p)[0].data
    for t in range(Tn - 1):
        y = x.copy()
        y[t + 1:] += rng.normal(size=(Tn - t - 1, 4))
        out = multi_head(T(y), T(y), T(y), mask, p)[0].data
        assert np.max(np.abs(out[: t + 1] - base[: t + 1])) < 1e-12
