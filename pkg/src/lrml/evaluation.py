"""Leave-one-out ranking evaluation (HR@10, nDCG@10).

Each user's held-out item is ranked against the user's fixed evaluation
negatives.  Ties are pessimistic: every candidate whose score equals the
target's is placed above it.
"""
from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List

import numpy as np

from . import dispatch

CUTOFF = 10


@dataclass(frozen=True)
class RankResult:
    user: int
    rank: int
    hit10: bool
    ndcg10: float


@dataclass
class MetricsReport:
    hr10: float
    ndcg10: float
    per_user: List[RankResult] = field(repr=False)

    @property
    def num_users(self) -> int:
        return len(self.per_user)

    def ranks(self) -> np.ndarray:
        return np.array([r.rank for r in self.per_user], dtype=np.int64)

    def to_json_dict(self, model="", dataset="", config_digest="", which="test") -> dict:
        return {
            "model": model,
            "dataset": dataset,
            "split": which,
            "hr10": self.hr10,
            "ndcg10": self.ndcg10,
            "num_users": self.num_users,
            "config_digest": config_digest,
        }

    def write_per_user_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("user,rank,hit10,ndcg10\n")
            for r in self.per_user:
                fh.write(f"{r.user},{r.rank},{int(r.hit10)},{r.ndcg10!r}\n")


def config_digest(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def ndcg_at_10(rank: int, k: int = CUTOFF) -> float:
    if rank < 1:
        raise ValueError("rank must be >= 1")
    return 1.0 / math.log2(rank + 1) if rank <= k else 0.0


def rank_target(pref_scores, target_position: int = 0) -> int:
    """1-based rank of ``pref_scores[target_position]`` among all candidates.

    Usually 101 candidates: the held-out item and 100 negatives.
    """
    scores = np.asarray(pref_scores, dtype=np.float64)
    if scores.ndim != 1 or len(scores) < 2:
        raise ValueError("need a 1-D vector of at least two candidate scores")
    return int(rank_rows(scores[None, :], target_position)[0])


def rank_rows(scores: np.ndarray, target_position: int = 0) -> np.ndarray:
    """Vectorized :func:`rank_target` over the rows of a score matrix."""
    if not np.all(np.isfinite(scores)):
        raise ValueError("non-finite preference score")
    target = scores[:, target_position][:, None]
    ties_and_above = (scores >= target).sum(axis=1)
    return ties_and_above.astype(np.int64)  # the target counts itself, giving the +1


class OracleScorer:
    """Debug scorer that gives the held-out item 1 and everything else 0."""

    kind = "oracle"

    def __init__(self, split, which="test"):
        self.target = split.held_out(which)

    def __call__(self, users, items):
        return (self.target[users] == items).astype(np.float64)


def _scorer(model):
    if callable(model):
        return model
    return lambda users, items: dispatch.preference(model, users, items)


def candidate_matrix(split, which: str) -> np.ndarray:
    """(num_users, 1 + k) candidate items with the held-out item in column 0."""
    return np.column_stack([split.held_out(which), split.eval_negatives])


def evaluate(split, params, which: str = "dev", k: int = CUTOFF, workers: int = 1,
             chunk_users: int = 512) -> MetricsReport:
    """Rank every user's held-out item and average HR@k and nDCG@k.

    ``params`` is a parameter set or any callable ``(users, items) -> scores``.
    Read-only with respect to ``params``.
    """
    score = _scorer(params)
    cands = candidate_matrix(split, which)
    n_users, width = cands.shape
    ranks = np.empty(n_users, dtype=np.int64)

    def run(lo):
        hi = min(lo + chunk_users, n_users)
        users = np.repeat(np.arange(lo, hi), width)
        s = np.asarray(score(users, cands[lo:hi].ravel()), dtype=np.float64)
        ranks[lo:hi] = rank_rows(s.reshape(hi - lo, width))

    starts = range(0, n_users, chunk_users)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, starts))
    else:
        for lo in starts:
            run(lo)

    per_user = [RankResult(u, int(r), bool(r <= k), ndcg_at_10(int(r), k)) for u, r in enumerate(ranks)]
    hr = float(np.mean([r.hit10 for r in per_user])) if per_user else 0.0
    nd = float(np.mean([r.ndcg10 for r in per_user])) if per_user else 0.0
    return MetricsReport(hr, nd, per_user)
