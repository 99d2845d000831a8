import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lrml.model import (ModelParams, attention, backward_pair, distances, forward_pair, joint_embedding,
                        relation_vector, score)


def _params(P, Q, M, K):
    return ModelParams(*(np.array(x, dtype=np.float64) for x in (P, Q, M, K)))


def test_joint_embedding_examples():
    np.testing.assert_array_equal(joint_embedding([1, 2], [3, 4]), [3, 8])
    p = np.array([0.3, -2.0, 5.0])
    np.testing.assert_array_equal(joint_embedding(p, np.zeros(3)), np.zeros(3))
    np.testing.assert_array_equal(joint_embedding(p, np.ones(3)), p)
    with pytest.raises(ValueError):
        joint_embedding([1, 2], [1, 2, 3])


def test_attention_examples():
    np.testing.assert_allclose(attention(np.zeros(3), np.ones((4, 3))), np.full(4, 0.25))
    # logits (ln 2, 0): s = (ln 2,), keys (1,) and (0,)
    np.testing.assert_allclose(attention([math.log(2)], [[1.0], [0.0]]), [2 / 3, 1 / 3], rtol=1e-15)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        a = attention([1000.0], [[1.0], [0.0]])
    assert abs(a[0] - 1) < 1e-12 and abs(a[1]) < 1e-12
    with pytest.raises(ValueError):
        attention(np.zeros(3), np.ones((4, 2)))


def test_relation_vector_examples():
    M = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    np.testing.assert_array_equal(relation_vector([0, 1, 0], M), M[1])
    np.testing.assert_allclose(relation_vector([0.5, 0.5], [[1, 0], [0, 1]]), [0.5, 0.5])
    with pytest.raises(ValueError):
        relation_vector([0.5, 0.5], M)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 8), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_relation_in_convex_hull(n, d, seed):
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(n, d))
    a = rng.dirichlet(np.ones(n))
    r = relation_vector(a, M)
    assert np.all(M.min(axis=0) - 1e-12 <= r) and np.all(r <= M.max(axis=0) + 1e-12)


def test_score_examples():
    # both memory rows equal (0, 0.5), so r = (0, 0.5) whatever the attention
    exact = _params([[0.5, 0]], [[0.5, 0.5]], [[0, 0.5], [0, 0.5]], [[1, 2], [3, 4]])
    assert score(0, 0, exact) == 0.0
    zero_r = _params([[1, 0]], [[0, 1]], [[0, 0]], [[1, 1]])
    assert score(0, 0, zero_r) == 2.0
    hand = _params([[0.3, 0.4]], [[0, 0]], [[0.1, -0.2], [0.1, -0.2]], [[1, 0], [0, 1]])
    assert score(0, 0, hand) == pytest.approx(0.20, abs=1e-15)
    with pytest.raises(IndexError):
        score(1, 0, hand)
    with pytest.raises(IndexError):
        score(0, -1, hand)


def test_score_zero_iff_translation_exact():
    rng = np.random.default_rng(0)
    params = ModelParams(rng.normal(size=(2, 3)), rng.normal(size=(2, 3)), rng.normal(size=(2, 3)),
                         rng.normal(size=(2, 3)))
    assert score(0, 0, params) > 0
    # make p + r = q: memory constant so r is known in advance
    params.M[:] = params.M[0]
    params.Q[1] = params.P[1] + params.M[0]
    assert score(1, 1, params) == pytest.approx(0.0, abs=1e-28)


def test_forward_pair_examples():
    rng = np.random.default_rng(3)
    params = ModelParams(rng.normal(size=(2, 4)), rng.normal(size=(3, 4)), rng.normal(size=(2, 4)),
                         rng.normal(size=(2, 4)))
    params.Q[2] = params.Q[1]
    c = forward_pair(0, 1, 2, params)
    assert c.score_pos == c.score_neg
    np.testing.assert_array_equal(relation_vector(c.a, params.M), c.r)
    assert abs(c.a.sum() - 1) < 1e-12 and c.score_pos >= 0

    # contrived r = q_pos - p (constant memory)
    params.M[:] = params.Q[0] - params.P[1]
    c = forward_pair(1, 0, 2, params)
    assert c.score_pos == pytest.approx(0.0, abs=1e-28)
    diff = params.Q[0] - params.Q[2]
    assert c.score_neg == pytest.approx(diff @ diff, rel=1e-12)

    with pytest.raises(ValueError):
        forward_pair(0, 1, 1, params)


def test_forward_pair_is_not_symmetric():
    rng = np.random.default_rng(11)
    params = ModelParams(rng.normal(size=(1, 5)), rng.normal(size=(2, 5)), rng.normal(size=(3, 5)),
                         rng.normal(size=(3, 5)))
    a, b = forward_pair(0, 0, 1, params), forward_pair(0, 1, 0, params)
    assert not np.allclose(a.r, b.r)
    assert b.score_pos == pytest.approx(score(0, 1, params), rel=1e-12)
    assert b.score_neg != pytest.approx(a.score_pos)


def test_backward_zero_when_hinge_inactive():
    rng = np.random.default_rng(2)
    params = ModelParams(rng.normal(size=(1, 3)), rng.normal(size=(2, 3)), rng.normal(size=(2, 3)),
                         rng.normal(size=(2, 3)))
    params.M[:] = params.Q[0] - params.P[0]  # score_pos = 0
    params.Q[1] = params.Q[0] + 5.0
    c = forward_pair(0, 0, 1, params)
    assert c.score_pos + 0.2 <= c.score_neg
    g = backward_pair(c, params, 0.2)
    assert g.is_zero()
    dense = g.to_dense(params)
    assert all(dense[k].shape == v.shape for k, v in params.blocks().items())


def test_negative_item_gradient_closed_form():
    rng = np.random.default_rng(5)
    for _ in range(20):
        params = ModelParams(rng.normal(size=(2, 4)), rng.normal(size=(4, 4)), rng.normal(size=(3, 4)),
                             rng.normal(size=(3, 4)))
        c = forward_pair(1, 0, 3, params)
        if c.score_pos + 5.0 - c.score_neg <= 0:
            continue
        g = backward_pair(c, params, 5.0).to_dense(params)
        np.testing.assert_allclose(g["Q"][3], 2 * (params.P[1] + c.r - params.Q[3]), rtol=1e-13, atol=1e-15)
        np.testing.assert_array_equal(g["Q"][2], 0)
        np.testing.assert_array_equal(g["P"][0], 0)


def test_init_statistics():
    params = ModelParams.init(300, 400, 50, 20, np.random.default_rng(0))
    for name, block in params.blocks().items():
        assert abs(block.mean()) < 1e-3, name
        assert block.std() == pytest.approx(0.01, rel=0.05), name
    assert (params.num_users, params.num_items, params.dim, params.num_slices) == (300, 400, 50, 20)


def test_params_shape_validation():
    with pytest.raises(ValueError):
        ModelParams(np.zeros((2, 3)), np.zeros((2, 4)), np.zeros((1, 3)), np.zeros((1, 3)))
    with pytest.raises(ValueError):
        ModelParams(np.zeros((2, 3)), np.zeros((2, 3)), np.zeros((2, 3)), np.zeros((1, 3)))


def test_batched_distance_matches_single():
    rng = np.random.default_rng(8)
    params = ModelParams(rng.normal(size=(3, 5)), rng.normal(size=(6, 5)), rng.normal(size=(4, 5)),
                         rng.normal(size=(4, 5)))
    users = np.repeat(np.arange(3), 6)
    items = np.tile(np.arange(6), 3)
    single = [score(u, i, params) for u, i in zip(users, items)]
    np.testing.assert_allclose(distances(params, users, items), single, rtol=1e-13)


def test_copy_is_deep():
    params = ModelParams.init(2, 3, 4, 2, np.random.default_rng(0))
    other = params.copy()
    other.P[0, 0] = 9.0
    assert params.P[0, 0] != 9.0
