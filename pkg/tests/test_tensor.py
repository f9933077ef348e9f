import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import attention_oracle
from fewcap import nn
from fewcap import tensor as T
from fewcap.errors import ConfigError, ContractError, ShapeError
from fewcap.gradcheck import check_gradients

finite = st.floats(-2, 2, allow_nan=False, allow_infinity=False)


def triple_loop_matmul(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            for p in range(k):
                out[i, j] += a[i, p] * b[p, j]
    return out


# -- matmul ---------------------------------------------------------------------

def test_matmul_identity():
    x = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(T.matmul(np.eye(2), x).data, x)


def test_matmul_projector():
    out = T.matmul(np.array([[1.0, 0], [0, 0]]), np.array([[5.0, 6], [7, 8]]))
    assert np.array_equal(out.data, [[5, 6], [0, 0]])


def test_matmul_matches_triple_loop():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    np.testing.assert_allclose(T.matmul(a, b).data, triple_loop_matmul(a, b), rtol=1e-12)


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        T.matmul(np.zeros((2, 3)), np.zeros((2, 3)))


# -- softmax ----------------------------------------------------------------------

def test_softmax_uniform_row():
    np.testing.assert_allclose(nn.softmax_rows(np.zeros((1, 3))).data, [[1 / 3] * 3])


def test_softmax_ln2_row():
    np.testing.assert_allclose(nn.softmax_rows([[0.0, math.log(2)]]).data, [[1 / 3, 2 / 3]])


def test_softmax_large_logits_stable():
    out = nn.softmax_rows([[1000.0, 0.0]]).data
    assert np.all(np.isfinite(out))
    assert out[0, 0] == pytest.approx(1.0) and out[0, 1] == pytest.approx(0.0, abs=1e-300)


@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 6)),
              elements=st.floats(-50, 50)))
def test_softmax_rows_are_distributions(x):
    p = nn.softmax_rows(x).data
    assert np.all((p >= 0) & (p <= 1))
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-9)


# -- layer norm -------------------------------------------------------------------

def test_layer_norm_constant_row():
    out = nn.layer_norm(np.array([[5.0, 5.0]]), np.ones(2), np.zeros(2)).data
    assert np.array_equal(out, [[0.0, 0.0]])


def test_layer_norm_normalized_row():
    out = nn.layer_norm(np.array([[1.0, -1.0]]), np.ones(2), np.zeros(2)).data
    np.testing.assert_allclose(out, [[1.0, -1.0]], atol=1e-5)


def test_layer_norm_moments():
    rng = np.random.default_rng(1)
    x = rng.normal(3.0, 2.0, size=(4, 32))
    out = nn.layer_norm(x, np.ones(32), np.zeros(32)).data
    np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-6)
    var = x.var(axis=-1)
    np.testing.assert_allclose(out.var(axis=-1), var / (var + 1e-5), atol=1e-6)


@given(arrays(np.float64, (3, 8), elements=finite), st.floats(-100, 100))
def test_layer_norm_shift_invariant(x, c):
    g, b = np.full(8, 1.7), np.linspace(-1, 1, 8)
    np.testing.assert_allclose(nn.layer_norm(x + c, g, b).data, nn.layer_norm(x, g, b).data,
                               atol=1e-6)


# -- feed-forward -----------------------------------------------------------------

class _P:
    pass


def _ffn_params(w1, b1, w2, b2):
    p = _P()
    p.w1, p.b1, p.w2, p.b2 = (T.Tensor(a) for a in (w1, b1, w2, b2))
    return p


def test_ffn_zero_weights_gives_bias():
    d = 3
    p = _ffn_params(np.zeros((d, 4 * d)), np.zeros(4 * d), np.zeros((4 * d, d)), [1.0, 2.0, 3.0])
    out = nn.feed_forward(np.random.default_rng(0).normal(size=(5, d)), p).data
    assert np.array_equal(out, np.tile([1.0, 2.0, 3.0], (5, 1)))


def test_ffn_identity_passthrough_on_nonnegative_input():
    d = 2
    w1 = np.zeros((d, 4 * d))
    w1[:, :d] = np.eye(d)
    w2 = np.zeros((4 * d, d))
    w2[:d] = np.eye(d)
    p = _ffn_params(w1, np.zeros(4 * d), w2, [0.5, -0.5])
    x = np.array([[1.0, 2.0], [0.0, 3.0]])
    np.testing.assert_allclose(nn.feed_forward(x, p).data, x + [0.5, -0.5])


def test_ffn_matches_two_matmul_oracle():
    rng = np.random.default_rng(2)
    ffn = nn.FeedForward(rng, 4)
    x = rng.normal(size=(3, 4))
    h = np.maximum(x @ ffn.w1.data + ffn.b1.data, 0)
    np.testing.assert_allclose(ffn(T.Tensor(x)).data, h @ ffn.w2.data + ffn.b2.data, rtol=1e-12)


# -- attention --------------------------------------------------------------------

def test_attention_single_position_weight_is_one():
    rng = np.random.default_rng(3)
    mha = nn.MultiHeadAttention(rng, 8, 2)
    q, kv = rng.normal(size=(1, 8)), rng.normal(size=(1, 8))
    out, w = mha(q, kv, kv, need_weights=True)
    assert np.array_equal(w.data, np.ones((2, 1, 1)))
    np.testing.assert_allclose(out.data, (kv @ mha.wv.data + mha.bv.data) @ mha.wo.data + mha.bo.data)


def test_attention_identical_keys_uniform():
    rng = np.random.default_rng(4)
    mha = nn.MultiHeadAttention(rng, 8, 4)
    kv = np.tile(rng.normal(size=(1, 8)), (5, 1))
    _, w = mha(rng.normal(size=(3, 8)), kv, kv, need_weights=True)
    np.testing.assert_allclose(w.data, 0.2, atol=1e-12)


def test_attention_hand_set_2x2_matches_formula():
    p = _P()
    p.wq = T.Tensor([[1.0, 0.0], [0.0, 2.0]])
    p.wk = T.Tensor([[0.5, 1.0], [1.0, 0.0]])
    p.wv = T.Tensor([[1.0, -1.0], [2.0, 0.5]])
    p.wo = T.Tensor(np.eye(2))
    p.bq, p.bk, p.bv, p.bo = (T.Tensor(np.zeros(2)) for _ in range(4))
    q = np.array([[1.0, 0.0], [0.0, 1.0]])
    kv = np.array([[1.0, 1.0], [-1.0, 2.0]])
    got = nn.multi_head_attention(q, kv, kv, 1, p).data
    np.testing.assert_allclose(got, attention_oracle(q, kv, kv, 1, p), rtol=1e-12)


def test_attention_random_matches_oracle():
    rng = np.random.default_rng(5)
    mha = nn.MultiHeadAttention(rng, 12, 3)
    mha.bq.data[:] = rng.normal(size=12)
    mha.bk.data[:] = rng.normal(size=12)
    q, k, v = rng.normal(size=(4, 12)), rng.normal(size=(6, 12)), rng.normal(size=(6, 12))
    np.testing.assert_allclose(mha(q, k, v).data, attention_oracle(q, k, v, 3, mha), rtol=1e-10)


def test_attention_rejects_indivisible_heads():
    with pytest.raises(ConfigError):
        nn.MultiHeadAttention(np.random.default_rng(0), 10, 4)


@settings(max_examples=30)
@given(st.integers(0, 4), st.integers(0, 2**32 - 1))
def test_causal_attention_ignores_future(t, seed):
    rng = np.random.default_rng(seed)
    mha = nn.MultiHeadAttention(np.random.default_rng(0), 8, 2)
    x = rng.normal(size=(5, 8))
    y = x.copy()
    y[t + 1:] = rng.normal(size=y[t + 1:].shape)
    a, b = mha(x, x, x, causal=True).data, mha(y, y, y, causal=True).data
    np.testing.assert_allclose(a[: t + 1], b[: t + 1], atol=1e-12)


# -- backward ---------------------------------------------------------------------

@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 4)), elements=finite))
def test_sum_gradient_all_ones(x):
    leaf = T.Tensor(x, requires_grad=True)
    T.backward(leaf.sum())
    assert np.array_equal(leaf.grad, np.ones_like(x))


def test_square_gradient():
    x = T.Tensor(3.0, requires_grad=True)
    T.backward(x * x)
    assert x.grad == pytest.approx(6.0)


def test_backward_accumulates():
    x = T.Tensor(np.array([1.0, 2.0]), requires_grad=True)
    T.backward((x * x).sum())
    T.backward((x * x).sum())
    assert np.array_equal(x.grad, [4.0, 8.0])


def test_backward_rejects_non_scalar():
    x = T.Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ContractError):
        T.backward(x * 2)


def test_every_reachable_parameter_gets_gradient_of_same_shape():
    rng = np.random.default_rng(6)
    mha = nn.MultiHeadAttention(rng, 8, 2)
    x = rng.normal(size=(3, 8))
    T.backward(mha(x, x, x).sum())
    for name, p in mha.named_parameters():
        assert p.grad is not None and p.grad.shape == p.shape, name


def test_forward_stays_finite_on_finite_input():
    rng = np.random.default_rng(7)
    x = T.Tensor(rng.normal(size=(4, 6)) * 50)
    out = T.log_softmax(nn.layer_norm(x, np.ones(6), np.zeros(6)) * 100)
    assert np.all(np.isfinite(out.data))


UNARY = {
    "exp": T.exp, "tanh": T.tanh, "sigmoid": T.sigmoid,
    "log": lambda a: T.log(a * a + 0.5), "sqrt": lambda a: T.sqrt(a * a + 0.1),
    "relu": T.relu, "softmax": lambda a: T.softmax(a, axis=-1),
    "log_softmax": lambda a: T.log_softmax(a, axis=-1), "max": lambda a: a.max(axis=0),
    "mean": lambda a: a.mean(axis=1), "transpose": lambda a: a.T,
    "getitem": lambda a: a[[0, 2, 2]], "power": lambda a: a ** 3,
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_ops_match_finite_differences(name):
    x = np.random.default_rng(8).uniform(-2, 2, size=(3, 4))
    weights = np.random.default_rng(9).normal(size=UNARY[name](T.Tensor(x)).shape)
    res = check_gradients(lambda xs: (UNARY[name](xs[0]) * weights).sum(), [x], probes=40)
    assert res.max_rel_error < 1e-3


def test_broadcast_binary_ops_match_finite_differences():
    rng = np.random.default_rng(10)
    a, b = rng.uniform(-2, 2, (3, 4)), rng.uniform(0.5, 2, (4,))

    def f(xs):
        x, y = xs
        return ((x + y) * (x - y) / (y * y + 1.0) @ T.Tensor(np.ones((4, 2)))).sum()

    assert check_gradients(f, [a, b], probes=60).max_rel_error < 1e-3


def test_embedding_concat_stack_match_finite_differences():
    rng = np.random.default_rng(11)
    table, other = rng.normal(size=(6, 3)), rng.normal(size=(2, 3))
    ids = np.array([[0, 5, 5], [2, 1, 0]])
    w = rng.normal(size=(2, 2, 3, 3))

    def f(xs):
        e = T.embedding(xs[0], ids)
        cat = T.concat([e, T.stack([xs[1]] * 3, axis=1)], axis=-1)
        return (T.stack([cat[..., :3], cat[..., 3:]], axis=1) * w).sum()

    assert check_gradients(f, [table, other], probes=60).max_rel_error < 1e-3
