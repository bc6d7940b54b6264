import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from dlpl import tensor as T
from dlpl.tensor import ConfigurationError, DimensionError, Tensor, gradcheck, no_grad

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


def test_matmul_identity_and_hand_value(rng):
    a = rng.normal(size=(2, 2))
    np.testing.assert_array_equal(T.matmul(np.eye(2), a).data, a)
    out = T.matmul(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([[1.0], [1.0]]))
    np.testing.assert_array_equal(out.data, [[3.0], [7.0]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(4, 5\)"):
        T.matmul(np.zeros((2, 3)), np.zeros((4, 5)))


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_matmul_gradcheck_5x7x3(seed):
    rng = np.random.default_rng(seed)
    rep = gradcheck(T.matmul, [rng.normal(size=(5, 7)), rng.normal(size=(7, 3))], tolerance=1e-6)
    assert rep.passed, str(rep)


def test_matmul_shared_weight_gradient_matches_loop(rng):
    a = Tensor(rng.normal(size=(3, 4, 5)), requires_grad=True)
    w = Tensor(rng.normal(size=(5, 2)), requires_grad=True)
    g = rng.normal(size=(3, 4, 2))
    T.matmul(a, w).backward(g)
    want = sum(a.data[i].T @ g[i] for i in range(3))
    np.testing.assert_allclose(w.grad, want, rtol=1e-12)


def test_softmax_examples():
    np.testing.assert_allclose(T.softmax_rows(Tensor(np.full((2, 5), 3.3)), 2.0).data, 0.2)
    np.testing.assert_array_equal(T.softmax_rows(Tensor([[4.0], [-2.0]])).data, [[1.0], [1.0]])
    np.testing.assert_allclose(T.softmax_rows(Tensor([[0.0, math.log(3.0)]])).data, [[0.25, 0.75]],
                               atol=1e-15)


def test_softmax_rejects_nonpositive_scale():
    with pytest.raises(ConfigurationError):
        T.softmax_rows(Tensor(np.zeros((2, 2))), 0.0)


@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=2, max_dims=3, max_side=6), elements=finite),
       st.floats(0.01, 10.0))
def test_softmax_rows_are_stochastic(x, scale):
    y = T.softmax_rows(Tensor(x), scale).data
    assert np.all(y >= 0)
    np.testing.assert_allclose(y.sum(axis=-1), 1.0, atol=1e-12)


def test_softmax_extreme_inputs_stay_finite():
    y = T.softmax_rows(Tensor([[1e300, -1e300, 0.0]])).data
    assert np.all(np.isfinite(y))


def test_softmax_gradcheck_3x4():
    x = np.random.default_rng(5).normal(size=(3, 4))
    rep = gradcheck(lambda a: T.softmax_rows(a, 1.3), [x], tolerance=1e-6)
    assert rep.passed, str(rep)


def test_linear_op_gradient_is_exact():
    x = np.random.default_rng(1).normal(size=(4, 3))
    rep = gradcheck(lambda a: T.mul(a, 2.5), [x], tolerance=1e-9)
    assert rep.passed, str(rep)


def test_corrupted_backward_is_reported():
    def bad_square(x):
        return T._make("bad_square", x.data ** 2, (x,), lambda g: (3.0 * g * x.data,))

    rep = gradcheck(bad_square, [np.random.default_rng(2).normal(size=(3, 3))])
    assert not rep.passed
    text = str(rep)
    assert "bad_square" in text and "FAILED" in text and "worst at" in text


def _attn(rng, c=8):
    return T.init_attention(rng, c, prefix="a.")


def test_mha_single_key_returns_projected_value(rng):
    params = _attn(rng)
    v = rng.normal(size=(1, 8))
    q1, q2 = rng.normal(size=(3, 8)), rng.normal(size=(3, 8))
    o1 = T.multi_head_attention(Tensor(q1), Tensor(v), Tensor(v), 2, params, "a.").data
    o2 = T.multi_head_attention(Tensor(q2), Tensor(v), Tensor(v), 2, params, "a.").data
    want = (v @ params["a.wv"].data + params["a.bv"].data) @ params["a.wo"].data + params["a.bo"].data
    np.testing.assert_allclose(o1, np.repeat(want, 3, axis=0), atol=1e-12)
    np.testing.assert_allclose(o1, o2, atol=1e-12)


def test_mha_invariant_to_duplicated_keys(rng):
    params = _attn(rng)
    q, kv = rng.normal(size=(4, 8)), rng.normal(size=(5, 8))
    once = T.multi_head_attention(Tensor(q), Tensor(kv), Tensor(kv), 4, params, "a.").data
    dup = np.concatenate([kv, kv])
    twice = T.multi_head_attention(Tensor(q), Tensor(dup), Tensor(dup), 4, params, "a.").data
    np.testing.assert_allclose(once, twice, atol=1e-12)


def test_mha_head_divisibility():
    with pytest.raises(ConfigurationError):
        T.multi_head_attention(Tensor(np.zeros((2, 6))), Tensor(np.zeros((2, 6))), Tensor(np.zeros((2, 6))),
                               4, _attn(np.random.default_rng(0), 6), "a.")


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_mha_gradcheck_4x8(seed):
    rng = np.random.default_rng(seed)
    params = _attn(rng)
    rep = gradcheck(lambda q, k, v: T.multi_head_attention(q, k, v, 2, params, "a."),
                    [rng.normal(size=(4, 8)) for _ in range(3)])
    assert rep.passed, str(rep)


def test_mlp_zero_and_single_layer(rng):
    x = rng.normal(size=(3, 4))
    zero = {"m.w0": Tensor(np.zeros((4, 5))), "m.b0": Tensor(np.zeros(5)),
            "m.w1": Tensor(np.zeros((5, 2))), "m.b1": Tensor(np.zeros(2))}
    np.testing.assert_array_equal(T.mlp(Tensor(x), zero, "m.").data, 0.0)
    one = T.init_mlp(rng, [4, 6], prefix="s.")
    np.testing.assert_allclose(T.mlp(Tensor(x), one, "s.").data, x @ one["s.w0"].data + one["s.b0"].data)


def test_mlp_width_mismatch(rng):
    with pytest.raises(ConfigurationError):
        T.mlp(Tensor(np.zeros((2, 3))), T.init_mlp(rng, [4, 2]))


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_mlp_gradcheck(seed):
    rng = np.random.default_rng(seed)
    params = T.init_mlp(rng, [3, 5, 2])
    assert gradcheck(lambda x: T.mlp(x, params), [rng.normal(size=(4, 3))]).passed


def test_gelu_matches_reference():
    from scipy.stats import norm
    x = np.linspace(-4, 4, 17)
    np.testing.assert_allclose(T.gelu(Tensor(x)).data, x * norm.cdf(x), rtol=1e-12, atol=1e-15)


def test_pos_enc_origin_and_determinism():
    pe = T.pos_enc_2d(8, 8, 16)
    origin = pe[0, 0]
    np.testing.assert_array_equal(origin[0:8:2], 0.0)
    np.testing.assert_array_equal(origin[1:8:2], 1.0)
    np.testing.assert_array_equal(origin[8::2], 0.0)
    np.testing.assert_array_equal(origin[9::2], 1.0)
    assert np.array_equal(pe, T.pos_enc_2d(8, 8, 16))


def test_pos_enc_distinct_positions():
    flat = T.pos_enc_2d(8, 8, 16).reshape(64, 16)
    d = np.linalg.norm(flat[:, None] - flat[None], axis=-1)
    assert d[~np.eye(64, dtype=bool)].min() > 1e-6


def test_pos_enc_odd_channels():
    with pytest.raises(ConfigurationError):
        T.pos_enc_2d(2, 2, 5)


def test_layer_norm_statistics(rng):
    y = T.layer_norm(Tensor(rng.normal(3.0, 5.0, size=(6, 10)))).data
    np.testing.assert_allclose(y.mean(axis=-1), 0.0, atol=1e-12)
    np.testing.assert_allclose(y.std(axis=-1), 1.0, atol=1e-5)


def test_cross_entropy_uniform_logits():
    ce = T.cross_entropy(Tensor(np.zeros((2, 3, 4))), np.zeros((2, 3), dtype=int))
    assert float(ce.data) == pytest.approx(math.log(4.0), abs=1e-14)


def test_cross_entropy_label_shape():
    with pytest.raises(DimensionError):
        T.cross_entropy(Tensor(np.zeros((2, 4))), np.zeros(3, dtype=int))


def test_norm_subgradient_at_zero():
    x = Tensor(np.zeros((2, 2)), requires_grad=True)
    T.norm(x, axes=(0, 1)).backward()
    np.testing.assert_array_equal(x.grad, 0.0)


def test_broadcast_error():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(4,\)"):
        T.add(np.zeros((2, 3)), np.zeros(4))


def test_no_grad_skips_records(rng):
    x = Tensor(rng.normal(size=3), requires_grad=True)
    with no_grad():
        y = T.mul(x, 2.0)
    assert y.record is None and not y.requires_grad


def test_forward_replay_is_bitwise(rng):
    params = T.init_attention(rng, 8, prefix="a.")
    q = rng.normal(size=(2, 5, 8))
    a = T.multi_head_attention(Tensor(q), Tensor(q), Tensor(q), 4, params, "a.").data
    b = T.multi_head_attention(Tensor(q), Tensor(q), Tensor(q), 4, params, "a.").data
    assert a.tobytes() == b.tobytes()


def test_gradient_accumulates_over_reuse(rng):
    x = Tensor(rng.normal(size=(3,)), requires_grad=True)
    T.tsum(T.add(T.mul(x, x), x)).backward()
    np.testing.assert_allclose(x.grad, 2 * x.data + 1)


@given(hnp.arrays(np.float64, (3, 4), elements=st.floats(-3, 3)))
def test_operations_stay_finite(x):
    t = Tensor(x)
    for out in (T.gelu(t), T.layer_norm(t), T.softmax_rows(t), T.norm(t, axes=(0, 1))):
        assert np.all(np.isfinite(out.data))
