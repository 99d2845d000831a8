"""Latent relational metric learning: forward pass and analytic gradients.

For a user embedding ``p`` and item embedding ``q`` the memory module builds
a relation vector

    s = p * q                      (joint embedding)
    a = softmax(K @ s)             (key addressing over N slices)
    r = a @ M                      (weighted read of the memory)

and the pair is scored by the squared distance ``||p + r - q||^2``; lower is
better.  During training the relation vector of the positive pair is reused
for the sampled negative item.

Every function here has a single-pair form (used by tests and analysis) and
a batched form (used by the trainer and evaluator).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np

KIND = "lrml"


def _as_matrix(x, name):
    arr = np.array(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a 2-D matrix")
    return arr


@dataclass(eq=False)
class ModelParams:
    """User table ``P`` (|U| x d), item table ``Q`` (|I| x d), memory ``M`` and
    keys ``K`` (both N x d)."""

    P: np.ndarray
    Q: np.ndarray
    M: np.ndarray
    K: np.ndarray

    kind = KIND

    def __post_init__(self):
        self.P = _as_matrix(self.P, "P")
        self.Q = _as_matrix(self.Q, "Q")
        self.M = _as_matrix(self.M, "M")
        self.K = _as_matrix(self.K, "K")
        d = self.P.shape[1]
        if self.Q.shape[1] != d or self.M.shape[1] != d or self.K.shape[1] != d:
            raise ValueError("P, Q, M and K must share the embedding dimension")
        if self.M.shape != self.K.shape:
            raise ValueError("M and K must have the same shape")

    @classmethod
    def init(cls, num_users, num_items, dim, num_slices, rng, std=0.01):
        return cls(
            P=rng.normal(0.0, std, size=(num_users, dim)),
            Q=rng.normal(0.0, std, size=(num_items, dim)),
            M=rng.normal(0.0, std, size=(num_slices, dim)),
            K=rng.normal(0.0, std, size=(num_slices, dim)),
        )

    @property
    def dim(self) -> int:
        return self.P.shape[1]

    @property
    def num_slices(self) -> int:
        return self.M.shape[0]

    @property
    def num_users(self) -> int:
        return self.P.shape[0]

    @property
    def num_items(self) -> int:
        return self.Q.shape[0]

    def blocks(self) -> Dict[str, np.ndarray]:
        return {"P": self.P, "Q": self.Q, "M": self.M, "K": self.K}

    def copy(self) -> "ModelParams":
        return ModelParams(self.P.copy(), self.Q.copy(), self.M.copy(), self.K.copy())


@dataclass
class ParamGrads:
    """Gradients of a loss with respect to a parameter set.

    ``sparse`` maps an embedding table name to ``(rows, values)``; rows may
    repeat and their values are summed when applied.  ``dense`` maps the
    remaining blocks to full-shape arrays.
    """

    sparse: Dict[str, Tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    dense: Dict[str, np.ndarray] = field(default_factory=dict)

    def scaled(self, factor: float) -> "ParamGrads":
        return ParamGrads(
            {k: (rows, vals * factor) for k, (rows, vals) in self.sparse.items()},
            {k: g * factor for k, g in self.dense.items()},
        )

    def to_dense(self, params) -> Dict[str, np.ndarray]:
        out = {}
        for name, arr in params.blocks().items():
            if name in self.dense:
                out[name] = self.dense[name].copy()
                continue
            g = np.zeros_like(arr)
            if name in self.sparse:
                rows, vals = self.sparse[name]
                np.add.at(g, rows, vals)
            out[name] = g
        return out

    def is_zero(self) -> bool:
        return all(not np.any(v) for _, v in self.sparse.values()) and all(
            not np.any(g) for g in self.dense.values())


@dataclass
class ForwardCache:
    user: int
    pos_item: int
    neg_item: int
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    score_pos: float
    score_neg: float


# ---------------------------------------------------------------------------
# single-pair building blocks


def joint_embedding(p, q) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"dimension mismatch: {p.shape} vs {q.shape}")
    return p * q


def softmax(z, axis=-1) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def attention(s, K) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    K = np.asarray(K, dtype=np.float64)
    if K.ndim != 2 or K.shape[1] != s.shape[-1]:
        raise ValueError(f"key matrix of shape {K.shape} does not match joint embedding of size {s.shape[-1]}")
    return softmax(np.einsum("ij,nj->in", s.reshape(1, -1), K), axis=1)[0]


def relation_vector(a, M) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    M = np.asarray(M, dtype=np.float64)
    if a.shape[-1] != M.shape[0]:
        raise ValueError(f"attention of size {a.shape[-1]} does not match {M.shape[0]} memory slices")
    if a.ndim == 1:
        return np.einsum("in,nj->ij", a.reshape(1, -1), M)[0]
    return np.einsum("in,nj->ij", a, M)


def _check_index(idx, n, what):
    if not 0 <= idx < n:
        raise IndexError(f"{what} index {idx} out of range [0, {n})")


def score(user: int, item: int, params: ModelParams) -> float:
    """Squared distance ``||p + r - q||^2`` with ``r`` built from this pair."""
    _check_index(user, params.num_users, "user")
    _check_index(item, params.num_items, "item")
    p, q = params.P[user], params.Q[item]
    r = relation_vector(attention(joint_embedding(p, q), params.K), params.M)
    e = p + r - q
    return float(e @ e)


def forward_pair(user: int, pos_item: int, neg_item: int, params: ModelParams) -> ForwardCache:
    _check_index(user, params.num_users, "user")
    _check_index(pos_item, params.num_items, "item")
    _check_index(neg_item, params.num_items, "item")
    if pos_item == neg_item:
        raise ValueError("positive and negative item must differ")
    p, q, qn = params.P[user], params.Q[pos_item], params.Q[neg_item]
    s = joint_embedding(p, q)
    a = attention(s, params.K)
    r = relation_vector(a, params.M)
    e_pos = p + r - q
    e_neg = p + r - qn
    return ForwardCache(user, pos_item, neg_item, s, a, r, float(e_pos @ e_pos), float(e_neg @ e_neg))


def backward_pair(cache: ForwardCache, params: ModelParams, margin: float) -> ParamGrads:
    """Gradient of ``max(0, score_pos + margin - score_neg)`` for one pair.

    The caller must not modify ``params`` between :func:`forward_pair` and
    this call.
    """
    batch = BatchCache(
        users=np.array([cache.user]),
        pos=np.array([cache.pos_item]),
        neg=np.array([cache.neg_item]),
        s=cache.s[None, :],
        a=cache.a[None, :],
        r=cache.r[None, :],
        score_pos=np.array([cache.score_pos]),
        score_neg=np.array([cache.score_neg]),
    )
    _, grads = batch_backward(batch, params, margin)
    return grads


# ---------------------------------------------------------------------------
# batched forms


@dataclass
class BatchCache:
    users: np.ndarray
    pos: np.ndarray
    neg: np.ndarray
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    score_pos: np.ndarray
    score_neg: np.ndarray


def relation_batch(params: ModelParams, users, items):
    """Joint embeddings, attention weights and relation vectors for many pairs."""
    s = params.P[users] * params.Q[items]
    # einsum rather than BLAS matmul: each row's result then does not depend
    # on how pairs are batched, so chunked or threaded evaluation is exact
    a = softmax(np.einsum("ij,nj->in", s, params.K), axis=1)
    return s, a, np.einsum("in,nj->ij", a, params.M)


def distances(params: ModelParams, users, items) -> np.ndarray:
    """Batched :func:`score`; the relation vector is recomputed per pair."""
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    _, _, r = relation_batch(params, users, items)
    e = params.P[users] + r - params.Q[items]
    return np.einsum("ij,ij->i", e, e)


def batch_forward(params: ModelParams, users, pos, neg) -> BatchCache:
    users = np.asarray(users, dtype=np.int64)
    pos = np.asarray(pos, dtype=np.int64)
    neg = np.asarray(neg, dtype=np.int64)
    s, a, r = relation_batch(params, users, pos)
    base = params.P[users] + r
    e_pos = base - params.Q[pos]
    e_neg = base - params.Q[neg]
    return BatchCache(users, pos, neg, s, a, r,
                      np.einsum("ij,ij->i", e_pos, e_pos),
                      np.einsum("ij,ij->i", e_neg, e_neg))


def batch_backward(cache: BatchCache, params: ModelParams, margin: float):
    """Per-pair hinge losses and the gradient of their *sum*."""
    raw = cache.score_pos + margin - cache.score_neg
    active = (raw > 0).astype(np.float64)[:, None]
    losses = np.maximum(raw, 0.0)

    p = params.P[cache.users]
    q = params.Q[cache.pos]
    qn = params.Q[cache.neg]
    base = p + cache.r
    g_epos = 2.0 * (base - q) * active
    g_eneg = -2.0 * (base - qn) * active
    g_base = g_epos + g_eneg           # flows into both p and r

    a = cache.a
    g_M = a.T @ g_base
    g_a = g_base @ params.M.T
    g_z = a * (g_a - np.einsum("ij,ij->i", a, g_a)[:, None])
    g_K = g_z.T @ cache.s
    g_s = g_z @ params.K

    g_p = g_base + g_s * q
    g_q = -g_epos + g_s * p
    g_qn = -g_eneg

    grads = ParamGrads(
        sparse={
            "P": (cache.users, g_p),
            "Q": (np.concatenate([cache.pos, cache.neg]), np.concatenate([g_q, g_qn])),
        },
        dense={"M": g_M, "K": g_K},
    )
    return losses, grads


def pair_losses_and_grads(params: ModelParams, users, pos, neg, margin: float):
    return batch_backward(batch_forward(params, users, pos, neg), params, margin)
