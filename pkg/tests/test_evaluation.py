import hashlib
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lrml import dispatch
from lrml.evaluation import (MetricsReport, OracleScorer, RankResult, config_digest, evaluate, ndcg_at_10,
                             rank_rows, rank_target)


def test_rank_examples():
    s = np.zeros(101)
    s[0] = 1.0
    assert rank_target(s) == 1
    assert rank_target(np.zeros(101)) == 101
    s = np.concatenate([[0.5], np.full(90, 0.1), np.full(10, 0.9)])
    r = rank_target(s)
    assert r == 11 and ndcg_at_10(r) == 0.0
    assert rank_target([0.2, 0.9, 0.2, 0.1], target_position=2) == 3


def test_rank_errors():
    with pytest.raises(ValueError):
        rank_target([0.1, np.nan])
    with pytest.raises(ValueError):
        rank_target([np.inf, 0.0])
    with pytest.raises(ValueError):
        rank_target([1.0])


def test_ndcg_examples():
    assert ndcg_at_10(1) == 1.0
    assert ndcg_at_10(3) == 0.5
    assert ndcg_at_10(10) == pytest.approx(1 / math.log2(11))
    assert ndcg_at_10(11) == 0.0
    with pytest.raises(ValueError):
        ndcg_at_10(0)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["exp", "cube", "affine", "tanh"]), st.booleans())
def test_rank_invariant_under_increasing_transform(seed, fn, ties):
    rng = np.random.default_rng(seed)
    s = rng.normal(size=101)
    if ties:
        s = np.round(s, 1)
    f = {"exp": np.exp, "cube": lambda x: x ** 3, "affine": lambda x: 3 * x + 7, "tanh": np.tanh}[fn]
    r = rank_target(s)
    assert rank_target(f(s)) == r
    assert 1 <= r <= 101
    nd = ndcg_at_10(r)
    assert 0 <= nd <= (1.0 if r <= 10 else 0.0)


def test_exchangeable_scores_give_uniform_rank():
    # frozen value: with 101 exchangeable candidates the target's rank is
    # uniform on 1..101, so P(rank <= 10) = 10/101 exactly
    rng = np.random.default_rng(0)
    n = 20_000
    ranks = rank_rows(rng.random((n, 101)))
    hr = np.mean(ranks <= 10)
    sd = math.sqrt((10 / 101) * (91 / 101) / n)
    assert abs(hr - 10 / 101) < 4 * sd
    counts = np.bincount(ranks, minlength=102)[1:]
    expected = n / 101
    chi2 = ((counts - expected) ** 2 / expected).sum()
    assert chi2 < 170  # 100 dof, p < 1e-5 upper tail


def test_oracle_scorer_is_perfect(small_split):
    for which in ("dev", "test"):
        report = evaluate(small_split, OracleScorer(small_split, which), which)
        assert report.hr10 == 1.0 and report.ndcg10 == 1.0
        assert [r.user for r in report.per_user] == list(range(small_split.num_users))


def test_per_user_invariants(small_split):
    params = dispatch.init_params("lrml", small_split.num_users, small_split.num_items, 8, 3,
                                  np.random.default_rng(1), std=0.5)
    report = evaluate(small_split, params, "test")
    for r in report.per_user:
        assert r.hit10 == (r.rank <= 10)
        assert r.ndcg10 <= float(r.hit10)
        assert r.ndcg10 == ndcg_at_10(r.rank)
    assert report.hr10 == pytest.approx(np.mean([r.hit10 for r in report.per_user]))
    assert 0 <= report.ndcg10 <= 1 and 0 <= report.hr10 <= 1


def _digest(params):
    h = hashlib.sha256()
    for name, arr in sorted(params.blocks().items()):
        h.update(name.encode() + arr.tobytes())
    return h.hexdigest()


@pytest.mark.parametrize("kind", dispatch.MODEL_KINDS)
def test_evaluation_is_read_only_and_parallel_safe(small_split, kind):
    params = dispatch.init_params(kind, small_split.num_users, small_split.num_items, 6, 2,
                                  np.random.default_rng(2), std=0.3)
    before = _digest(params)
    serial = evaluate(small_split, params, "dev")
    threaded = evaluate(small_split, params, "dev", workers=4, chunk_users=7)
    assert _digest(params) == before
    assert serial.per_user == threaded.per_user
    assert (serial.hr10, serial.ndcg10) == (threaded.hr10, threaded.ndcg10)


def test_negatives_are_fixed(small_split):
    seen = []

    def scorer(users, items):
        seen.append(items.copy())
        return np.zeros(len(items))

    evaluate(small_split, scorer, "dev")
    evaluate(small_split, scorer, "dev")
    np.testing.assert_array_equal(seen[0], seen[1])
    cands = seen[0].reshape(small_split.num_users, -1)
    np.testing.assert_array_equal(cands[:, 1:], small_split.eval_negatives)
    np.testing.assert_array_equal(cands[:, 0], small_split.dev_item)


def test_report_serialization(tmp_path):
    per_user = [RankResult(0, 1, True, 1.0), RankResult(1, 12, False, 0.0)]
    report = MetricsReport(0.5, 0.5, per_user)
    d = report.to_json_dict(model="lrml", dataset="toy", config_digest="abc", which="test")
    assert set(d) >= {"model", "dataset", "hr10", "ndcg10", "num_users", "config_digest"}
    assert d["num_users"] == 2
    json.dumps(d)
    report.write_per_user_csv(tmp_path / "u.csv")
    lines = (tmp_path / "u.csv").read_text().splitlines()
    assert lines == ["user,rank,hit10,ndcg10", "0,1,1,1.0", "1,12,0,0.0"]


def test_config_digest_stable():
    assert config_digest({"a": 1, "b": [1, 2]}) == config_digest({"b": [1, 2], "a": 1})
    assert config_digest({"a": 1}) != config_digest({"a": 2})
    assert len(config_digest({})) == 16
