from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lstmatch.core_math import (
    FORMAT_TAG,
    CheckpointError,
    DimensionError,
    LinearParams,
    Tensor,
    attention_forward,
    backward,
    grad_check,
    init_attention,
    init_linear,
    linear_forward,
    load_into,
    mlp_forward,
    named_leaves,
    read_checkpoint,
    save_checkpoint,
    softmax_row,
    to_tensors,
)
from lstmatch.core_math import tensor as tn
from lstmatch.core_math.layers import NormParams, attention_weights, grads_of
from lstmatch.audit import _cases, run_gradcheck

finite = st.floats(-1e4, 1e4, allow_nan=False, allow_infinity=False)


# ------------------------------------------------------------------ linear / mlp


def test_linear_identity():
    p = LinearParams(np.eye(2), np.zeros(2))
    np.testing.assert_array_equal(linear_forward(np.array([[1.0, 2.0]]), p).data, [[1, 2]])


def test_linear_zero_input_passes_bias():
    p = LinearParams(np.array([[5.0, -1.0], [2.0, 7.0]]), np.array([3.0, 4.0]))
    np.testing.assert_array_equal(linear_forward(np.zeros((1, 2)), p).data, [[3, 4]])


def test_linear_direct_matrix():
    p = LinearParams(np.array([[1.0, 2.0], [3.0, 4.0]]), np.zeros(2))
    np.testing.assert_array_equal(linear_forward(np.array([[1.0, 1.0]]), p).data, [[3, 7]])


def test_linear_shape_mismatch():
    with pytest.raises(DimensionError):
        linear_forward(np.ones((2, 3)), LinearParams(np.eye(2), np.zeros(2)))


def test_mlp_identity_on_nonnegative():
    layers = [LinearParams(np.eye(3), np.zeros(3)), LinearParams(np.eye(3), np.zeros(3))]
    v = np.array([[0.0, 1.5, 2.0]])
    np.testing.assert_array_equal(mlp_forward(v, layers).data, v)


def test_mlp_relu_clips_negative():
    layers = [LinearParams(np.array([[1.0]]), np.array([0.0])), LinearParams(np.array([[1.0]]), np.array([0.0]))]
    np.testing.assert_array_equal(mlp_forward(np.array([[-1.0]]), layers).data, [[0.0]])


def test_mlp_shape(rng):
    layers = [init_linear(rng, 10, 6), init_linear(rng, 6, 4)]
    assert mlp_forward(rng.normal(size=(7, 10)), layers).shape == (7, 4)


def test_mlp_dimension_chain_error(rng):
    with pytest.raises(DimensionError):
        mlp_forward(rng.normal(size=(2, 5)), [init_linear(rng, 5, 3), init_linear(rng, 4, 2)])


# ------------------------------------------------------------------ softmax


def test_softmax_uniform():
    np.testing.assert_allclose(softmax_row([0, 0, 0]), [1 / 3] * 3, rtol=0, atol=1e-15)


def test_softmax_large_equal():
    out = softmax_row([1000.0, 1000.0])
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out, [0.5, 0.5], atol=1e-15)


def test_softmax_direct_value():
    e2 = math.exp(2)
    np.testing.assert_allclose(softmax_row([0, 2]), [1 / (1 + e2), e2 / (1 + e2)], rtol=1e-12)
    np.testing.assert_allclose(softmax_row([0, 2]), [0.1192, 0.8808], atol=5e-5)


def test_softmax_empty_raises():
    with pytest.raises(ValueError):
        softmax_row([])


@given(arrays(np.float64, st.integers(1, 12), elements=finite))
def test_softmax_normalised_and_nonnegative(x):
    p = softmax_row(x)
    assert np.all(p >= 0)
    assert abs(p.sum() - 1) <= 1e-9


@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 6)), elements=finite))
def test_tensor_softmax_ops_finite(x):
    s = tn.softmax(Tensor(x), axis=1).data
    ls = tn.log_softmax(Tensor(x), axis=1).data
    assert np.all(np.isfinite(s)) and np.all(np.isfinite(ls))
    np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-9)


# ------------------------------------------------------------------ attention


def _identity_block(d: int, heads: int = 1):
    from lstmatch.matcher import identity_head

    return identity_head(d, heads).encoder


def test_attention_single_key_weight_one():
    p = _identity_block(4)
    x = np.array([[1.0, -2.0, 0.5, 3.0]])
    w = attention_weights(x, x, p)
    np.testing.assert_array_equal(w, [[[1.0]]])


def test_attention_identical_values_give_value():
    # with identity projections and zero residual/ff contributions the pre-residual
    # context equals the shared value row regardless of the attention weights
    d = 4
    p = _identity_block(d)
    v = np.array([1.0, 2.0, 3.0, 4.0])
    q = np.random.default_rng(0).normal(size=(3, d))
    k = np.random.default_rng(1).normal(size=(5, d))
    w = attention_weights(q, k, p)[0]
    ctx = w @ np.tile(v, (5, 1))
    np.testing.assert_allclose(ctx, np.tile(v, (3, 1)), atol=1e-12)


def test_attention_key_permutation_invariance(rng):
    p = init_attention(rng, 8, 2)
    q, kv = rng.normal(size=(4, 8)), rng.normal(size=(4, 8))
    perm = rng.permutation(4)
    a = attention_forward(q, kv, kv, p).data
    b = attention_forward(q, kv[perm], kv[perm], p).data
    np.testing.assert_allclose(a, b, atol=1e-12)


@given(st.integers(0, 10_000), st.integers(1, 6), st.integers(1, 6))
def test_attention_permutation_properties(seed, nq, nk):
    rng = np.random.default_rng(seed)
    p = init_attention(rng, 8, 2)
    q, kv = rng.normal(size=(nq, 8)), rng.normal(size=(nk, 8))
    out = attention_forward(q, kv, kv, p).data
    pq, pk = rng.permutation(nq), rng.permutation(nk)
    np.testing.assert_allclose(attention_forward(q[pq], kv, kv, p).data, out[pq], atol=1e-12)
    np.testing.assert_allclose(attention_forward(q, kv[pk], kv[pk], p).data, out, atol=1e-12)
    assert out.shape == q.shape and np.all(np.isfinite(out))


def test_attention_no_keys_returns_queries(rng):
    p = init_attention(rng, 8, 2)
    q = rng.normal(size=(3, 8))
    np.testing.assert_array_equal(attention_forward(q, np.zeros((0, 8)), np.zeros((0, 8)), p).data, q)


def test_attention_dimension_errors(rng):
    p = init_attention(rng, 8, 2)
    with pytest.raises(DimensionError):
        attention_forward(rng.normal(size=(2, 6)), rng.normal(size=(2, 8)), rng.normal(size=(2, 8)), p)
    with pytest.raises(DimensionError):
        attention_forward(rng.normal(size=(2, 8)), rng.normal(size=(3, 8)), rng.normal(size=(2, 8)), p)


def test_attention_heads_must_divide(rng):
    with pytest.raises(ValueError):
        init_attention(rng, 10, 3)


@given(st.integers(0, 10_000))
def test_ops_finite_on_large_inputs(seed):
    rng = np.random.default_rng(seed)
    p = init_attention(rng, 8, 2)
    x = rng.uniform(-1e4, 1e4, size=(3, 8))
    assert np.all(np.isfinite(attention_forward(x, x, x, p).data))
    assert np.all(np.isfinite(tn.sigmoid(Tensor(x)).data))
    assert np.all(np.isfinite(tn.layer_norm(Tensor(x), np.ones(8), np.zeros(8)).data))


# ------------------------------------------------------------------ backward


def test_backward_linear_hand_gradient():
    # loss = sum(W x) -> dL/dW[i, j] = x[j] for every row i
    x = np.array([[2.0, -1.0, 0.5]])
    p = to_tensors(LinearParams(np.zeros((2, 3)), None))
    loss = tn.total(linear_forward(x, p))
    backward(loss)
    np.testing.assert_array_equal(p.weight.grad, np.tile(x[0], (2, 1)))


def test_zero_weight_term_contributes_nothing(rng):
    p = to_tensors(init_linear(rng, 3, 2))
    x = rng.normal(size=(4, 3))
    y = linear_forward(x, p)
    loss = tn.add(tn.total(y), tn.scale(tn.total(tn.mul(y, y)), 0.0))
    backward(loss)
    np.testing.assert_allclose(p.weight.grad, np.tile(x.sum(axis=0), (2, 1)))


def test_backward_rejects_non_finite():
    t = Tensor(np.array(1.0), requires_grad=True)
    with pytest.raises(FloatingPointError):
        backward(tn.mul(t, np.inf))


def test_backward_accumulates_shared_use():
    x = Tensor(np.array([3.0]), requires_grad=True)
    backward(tn.total(tn.mul(x, x)))
    np.testing.assert_allclose(x.grad, [6.0])


def test_grads_congruent_with_params(rng):
    p = init_attention(rng, 8, 2)
    tp = to_tensors(p)
    backward(tn.total(attention_forward(rng.normal(size=(3, 8)), rng.normal(size=(2, 8)),
                                        rng.normal(size=(2, 8)), tp)))
    g = grads_of(tp)
    for (pa, a), (pb, b) in zip(named_leaves(p), named_leaves(g)):
        assert pa == pb and np.shape(a) == np.shape(b) and np.all(np.isfinite(b))


# ------------------------------------------------------------------ grad_check


def test_grad_check_eps_range(rng):
    p = init_linear(rng, 2, 2)
    with pytest.raises(ValueError):
        grad_check(lambda q: tn.total(linear_forward(np.ones((1, 2)), q)), p, eps=1e-2)


def test_grad_check_linear_8x4(rng):
    p = init_linear(rng, 8, 4)
    x, r = rng.normal(size=(5, 8)), rng.normal(size=(5, 4))
    assert grad_check(lambda q: tn.total(tn.mul(linear_forward(x, q), r)), p, eps=1e-5) < 1e-4


def test_grad_check_focal_wrt_logits(rng):
    from lstmatch.rescoring import focal_loss_t

    logits = rng.normal(size=7)
    pos = rng.random(7) < 0.4
    assert grad_check(lambda z: focal_loss_t(tn.sigmoid(z), pos), logits, eps=1e-5) < 1e-4


def test_grad_check_association_two_frame_toy():
    from lstmatch.matcher import EmbeddingBatch, GtTrack, association_loss, init_matcher

    rng = np.random.default_rng(3)
    q = [rng.normal(size=(2, 6)), rng.normal(size=(2, 6))]
    boxes = [np.array([[0, 0, 10, 10], [50, 50, 60, 60]], float)] * 2
    gt = [GtTrack(1, {0: (0, 0, 10, 10), 1: (0, 0, 10, 10)})]
    batch = EmbeddingBatch([0, 1], q, boxes)
    p = init_matcher(rng, 6, 8, 2, 8)
    assert grad_check(lambda m: association_loss(batch, gt, m), p, eps=1e-5, max_coords=8) < 1e-4


LAYER_CASES = {"linear", "mlp", "layer_norm", "self_attention", "cross_attention", "log_softmax", "softmax",
               "focal_loss"}


@pytest.mark.parametrize("seed", range(100))
def test_layer_gradients_match_finite_differences(seed):
    for name, f, params in _cases(seed, only=LAYER_CASES):
        err = grad_check(f, params, eps=1e-5, max_coords=6, seed=seed)
        assert err < 1e-4, (name, err)


def test_run_gradcheck_default_seed_passes():
    results = run_gradcheck(seed=0)
    assert {r.name for r in results} >= LAYER_CASES | {"st_association", "lt_association", "total_loss"}
    assert all(r.passed for r in results), [(r.name, r.max_rel_error) for r in results if not r.passed]


# ------------------------------------------------------------------ checkpoint


def test_checkpoint_round_trip(tmp_path, rng):
    p = init_attention(rng, 8, 2)
    path = tmp_path / "c.json"
    save_checkpoint(path, p, {"note": "x"})
    doc = read_checkpoint(path)
    assert doc["format"] == FORMAT_TAG
    q = load_into(init_attention(np.random.default_rng(99), 8, 2), doc)
    for (pa, a), (pb, b) in zip(named_leaves(p), named_leaves(q)):
        assert pa == pb
        np.testing.assert_array_equal(a, b)


def test_checkpoint_rejects_other_format(tmp_path, rng):
    p = init_linear(rng, 2, 2)
    path = tmp_path / "c.json"
    save_checkpoint(path, p)
    doc = read_checkpoint(path)
    doc["format"] = "other"
    with pytest.raises(CheckpointError):
        load_into(p, doc)


def test_checkpoint_shape_mismatch(tmp_path, rng):
    save_checkpoint(tmp_path / "c.json", init_linear(rng, 2, 3))
    with pytest.raises(CheckpointError):
        load_into(init_linear(rng, 2, 2), read_checkpoint(tmp_path / "c.json"))


def test_layer_norm_params_leaves():
    n = NormParams(np.ones(3), np.zeros(3))
    assert [k for k, _ in named_leaves(n)] == ["gamma", "beta"]
