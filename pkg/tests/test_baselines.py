import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lrml import dispatch
from lrml.baselines import BaselineParams, bpr_pair_loss, cml_score, mf_logit, mf_score, sigmoid, softplus
from lrml.model import ModelParams, score


def test_cml_examples():
    assert cml_score([0.3, 0.4], [0.3, 0.4]) == 0.0
    assert cml_score([1, 0], [0, 1]) == 2.0
    with pytest.raises(ValueError):
        cml_score([1, 0], [0, 1, 2])


def test_cml_equals_lrml_with_zero_memory():
    rng = np.random.default_rng(0)
    P, Q = rng.normal(size=(4, 6)), rng.normal(size=(9, 6))
    lrml = ModelParams(P, Q, np.zeros((3, 6)), rng.normal(size=(3, 6)))
    for u in range(4):
        for i in range(9):
            assert score(u, i, lrml) == cml_score(P[u], Q[i])


def test_bpr_examples():
    assert bpr_pair_loss([1.0], [0.5], [0.5]) == pytest.approx(math.log(2), abs=1e-12)
    # difference 1: -log sigmoid(1)
    assert bpr_pair_loss([1.0], [1.0], [0.0]) == pytest.approx(0.3133, abs=5e-5)
    assert bpr_pair_loss([1.0], [1.0], [0.0]) == pytest.approx(math.log1p(math.exp(-1)), rel=1e-14)
    # huge margin leaves only the regularizer
    p, q = np.array([1.0, 0.0]), np.array([800.0, 0.0])
    assert bpr_pair_loss(p, q, -q, 0.1, 0.001) == pytest.approx(0.1 * 1 + 0.001 * 800 ** 2, rel=1e-12)
    assert np.isfinite(bpr_pair_loss(p, -q, q))


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**32 - 1), st.floats(-20, 20))
def test_bpr_translation_invariance(d, seed, c):
    rng = np.random.default_rng(seed)
    p = rng.normal(size=d)
    p[0] = 1.0 if abs(p[0]) < 1e-3 else p[0]
    q_pos, q_neg = rng.normal(size=d), rng.normal(size=d)
    # shift both dot products by c along p
    shift = c * p / (p @ p)
    base = bpr_pair_loss(p, q_pos, q_neg)
    moved = bpr_pair_loss(p, q_pos + shift, q_neg + shift)
    assert moved == pytest.approx(base, rel=1e-9, abs=1e-12)


def test_mf_examples():
    rng = np.random.default_rng(1)
    p, q = rng.normal(size=5), rng.normal(size=5)
    assert mf_score(p, q, np.ones(5)) == pytest.approx(1 / (1 + math.exp(-(p @ q))), rel=1e-14)
    assert mf_score([1.0, 0.0], [0.0, 1.0], [3.0, 3.0]) == 0.5
    assert mf_score([1, 1], [1, -1], [2, 1]) == pytest.approx(0.7311, abs=5e-5)
    assert mf_logit([1, 1], [1, -1], [2, 1]) == 1.0
    with pytest.raises(ValueError):
        mf_score([1, 1], [1, 1], [1, 1, 1])


def test_stable_primitives():
    x = np.array([-1000.0, -1.0, 0.0, 1.0, 1000.0])
    s = sigmoid(x)
    assert np.all(np.isfinite(s)) and s[2] == 0.5 and s[0] == 0.0 and s[-1] == 1.0
    sp = softplus(x)
    np.testing.assert_allclose(sp[1:4], np.log1p(np.exp(x[1:4])), rtol=1e-15)
    assert sp[0] == pytest.approx(0.0, abs=1e-300) and sp[-1] == 1000.0


def test_baseline_params_validation():
    with pytest.raises(ValueError):
        BaselineParams(np.zeros((2, 3)), np.zeros((2, 3)), None, "mf")
    with pytest.raises(ValueError):
        BaselineParams(np.zeros((2, 3)), np.zeros((2, 3)), None, "neumf")
    bp = BaselineParams.init("mf", 3, 4, 5, np.random.default_rng(0))
    assert bp.kind == "mf" and bp.h.shape == (5,) and bp.num_slices == 0
    assert set(bp.blocks()) == {"P", "Q", "h"}
    assert set(BaselineParams.init("cml", 3, 4, 5, np.random.default_rng(0)).blocks()) == {"P", "Q"}


def test_preference_conventions():
    rng = np.random.default_rng(4)
    P, Q, h = rng.normal(size=(2, 3)), rng.normal(size=(5, 3)), rng.normal(size=3)
    users, items = np.array([0, 1, 1]), np.array([4, 0, 2])
    cml = BaselineParams(P, Q, None, "cml")
    bpr = BaselineParams(P, Q, None, "bpr")
    mf = BaselineParams(P, Q, h, "mf")
    for k, (u, i) in enumerate(zip(users, items)):
        assert dispatch.preference(cml, users, items)[k] == pytest.approx(-cml_score(P[u], Q[i]))
        assert dispatch.preference(bpr, users, items)[k] == pytest.approx(P[u] @ Q[i])
        assert dispatch.preference(mf, users, items)[k] == pytest.approx(mf_logit(P[u], Q[i], h))


def test_batched_losses_match_scalar_forms():
    rng = np.random.default_rng(6)
    P, Q, h = rng.normal(size=(3, 4)), rng.normal(size=(6, 4)), rng.normal(size=4)
    users, pos, neg = np.array([0, 1, 2, 0]), np.array([1, 2, 3, 4]), np.array([5, 0, 1, 2])
    bpr = BaselineParams(P, Q, None, "bpr")
    losses, _ = dispatch.pair_losses_and_grads(bpr, users, pos, neg, reg_user=0.1, reg_item=0.2)
    want = [bpr_pair_loss(P[u], Q[i], Q[j], 0.1, 0.2) for u, i, j in zip(users, pos, neg)]
    np.testing.assert_allclose(losses, want, rtol=1e-13)
    cml = BaselineParams(P, Q, None, "cml")
    losses, _ = dispatch.pair_losses_and_grads(cml, users, pos, neg, margin=0.5)
    want = [max(0.0, cml_score(P[u], Q[i]) + 0.5 - cml_score(P[u], Q[j])) for u, i, j in zip(users, pos, neg)]
    np.testing.assert_allclose(losses, want, rtol=1e-13)
    mf = BaselineParams(P, Q, h, "mf")
    losses, _ = dispatch.pair_losses_and_grads(mf, users, pos, neg, reg_user=0.0, reg_item=0.0)
    want = [-math.log(mf_score(P[u], Q[i], h)) - math.log(1 - mf_score(P[u], Q[j], h))
            for u, i, j in zip(users, pos, neg)]
    np.testing.assert_allclose(losses, want, rtol=1e-12)


def test_unknown_kind_rejected():
    with pytest.raises(ValueError):
        dispatch.check_kind("warp")
    assert dispatch.uses_unit_ball("cml") and not dispatch.uses_unit_ball("bpr")
