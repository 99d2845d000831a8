"""Comparison models trained by the same loop as LRML.

* ``cml``  squared Euclidean distance ``||p - q||^2`` with the hinge loss and
  unit-ball projection (LRML with the relation vector fixed at zero).
* ``bpr``  inner product trained with ``-log sigmoid(p.q_pos - p.q_neg)`` plus
  L2 penalties.
* ``mf``   generalized matrix factorization ``sigmoid(h . (p * q))`` trained
  pointwise with binary cross-entropy, one sampled negative per positive.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from .model import ParamGrads

BASELINE_KINDS = ("cml", "bpr", "mf")


@dataclass(eq=False)
class BaselineParams:
    P: np.ndarray
    Q: np.ndarray
    h: Optional[np.ndarray] = None
    model_kind: str = "cml"

    def __post_init__(self):
        if self.model_kind not in BASELINE_KINDS:
            raise ValueError(f"unknown baseline kind {self.model_kind!r}")
        self.P = np.array(self.P, dtype=np.float64)
        self.Q = np.array(self.Q, dtype=np.float64)
        if self.P.ndim != 2 or self.Q.ndim != 2 or self.P.shape[1] != self.Q.shape[1]:
            raise ValueError("P and Q must be matrices with the same embedding dimension")
        if self.model_kind == "mf":
            if self.h is None:
                raise ValueError("mf parameters need the output weight vector h")
            self.h = np.array(self.h, dtype=np.float64).reshape(-1)
            if self.h.shape != (self.P.shape[1],):
                raise ValueError("h must have the embedding dimension")
        else:
            self.h = None

    @classmethod
    def init(cls, kind, num_users, num_items, dim, rng, std=0.01):
        P = rng.normal(0.0, std, size=(num_users, dim))
        Q = rng.normal(0.0, std, size=(num_items, dim))
        h = rng.normal(0.0, std, size=dim) if kind == "mf" else None
        return cls(P, Q, h, kind)

    @property
    def kind(self) -> str:
        return self.model_kind

    @property
    def dim(self) -> int:
        return self.P.shape[1]

    @property
    def num_slices(self) -> int:
        return 0

    @property
    def num_users(self) -> int:
        return self.P.shape[0]

    @property
    def num_items(self) -> int:
        return self.Q.shape[0]

    def blocks(self) -> Dict[str, np.ndarray]:
        out = {"P": self.P, "Q": self.Q}
        if self.h is not None:
            out["h"] = self.h
        return out

    def copy(self) -> "BaselineParams":
        return BaselineParams(self.P.copy(), self.Q.copy(),
                              None if self.h is None else self.h.copy(), self.model_kind)


def _vec(x):
    return np.asarray(x, dtype=np.float64)


def _same_shape(*vs):
    if any(v.shape != vs[0].shape for v in vs[1:]):
        raise ValueError("dimension mismatch: " + " vs ".join(str(v.shape) for v in vs))


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    return np.exp(-np.logaddexp(0.0, -x))


def softplus(x):
    """``log(1 + exp(x))`` without overflow; ``-log sigmoid(x) == softplus(-x)``."""
    return np.logaddexp(0.0, x)


# ---------------------------------------------------------------------------
# single-pair scores and losses


def cml_score(p, q) -> float:
    p, q = _vec(p), _vec(q)
    _same_shape(p, q)
    e = p - q
    return float(e @ e)


def bpr_pair_loss(p, q_pos, q_neg, reg_user=0.0, reg_item=0.0) -> float:
    p, q_pos, q_neg = _vec(p), _vec(q_pos), _vec(q_neg)
    _same_shape(p, q_pos, q_neg)
    x = p @ q_pos - p @ q_neg
    return float(softplus(-x) + reg_user * (p @ p) + reg_item * (q_pos @ q_pos))


def mf_logit(p, q, h) -> float:
    p, q, h = _vec(p), _vec(q), _vec(h)
    _same_shape(p, q, h)
    return float(h @ (p * q))


def mf_score(p, q, h) -> float:
    return float(sigmoid(mf_logit(p, q, h)))


# ---------------------------------------------------------------------------
# batched losses with gradients (gradient of the summed loss)


def cml_losses_and_grads(params: BaselineParams, users, pos, neg, margin):
    p, q, qn = params.P[users], params.Q[pos], params.Q[neg]
    e_pos = p - q
    e_neg = p - qn
    raw = np.einsum("ij,ij->i", e_pos, e_pos) + margin - np.einsum("ij,ij->i", e_neg, e_neg)
    active = (raw > 0).astype(np.float64)[:, None]
    g_epos = 2.0 * e_pos * active
    g_eneg = -2.0 * e_neg * active
    grads = ParamGrads(sparse={
        "P": (users, g_epos + g_eneg),
        "Q": (np.concatenate([pos, neg]), np.concatenate([-g_epos, -g_eneg])),
    })
    return np.maximum(raw, 0.0), grads


def bpr_losses_and_grads(params: BaselineParams, users, pos, neg, reg_user, reg_item):
    p, q, qn = params.P[users], params.Q[pos], params.Q[neg]
    x = np.einsum("ij,ij->i", p, q - qn)
    losses = (softplus(-x) + reg_user * np.einsum("ij,ij->i", p, p)
              + reg_item * np.einsum("ij,ij->i", q, q))
    dx = -sigmoid(-x)[:, None]
    g_p = dx * (q - qn) + 2.0 * reg_user * p
    g_q = dx * p + 2.0 * reg_item * q
    g_qn = -dx * p
    grads = ParamGrads(sparse={
        "P": (users, g_p),
        "Q": (np.concatenate([pos, neg]), np.concatenate([g_q, g_qn])),
    })
    return losses, grads


def mf_losses_and_grads(params: BaselineParams, users, pos, neg, reg_user, reg_item):
    """Binary cross-entropy on the positive (label 1) and the negative (label 0)."""
    h = params.h
    p, q, qn = params.P[users], params.Q[pos], params.Q[neg]
    y_pos = (p * q) @ h
    y_neg = (p * qn) @ h
    losses = (softplus(-y_pos) + softplus(y_neg)
              + reg_user * np.einsum("ij,ij->i", p, p)
              + reg_item * (np.einsum("ij,ij->i", q, q) + np.einsum("ij,ij->i", qn, qn)))
    d_pos = -sigmoid(-y_pos)[:, None]
    d_neg = sigmoid(y_neg)[:, None]
    g_h = (d_pos * p * q + d_neg * p * qn).sum(axis=0)
    g_p = d_pos * h * q + d_neg * h * qn + 2.0 * reg_user * p
    g_q = d_pos * h * p + 2.0 * reg_item * q
    g_qn = d_neg * h * p + 2.0 * reg_item * qn
    grads = ParamGrads(
        sparse={
            "P": (users, g_p),
            "Q": (np.concatenate([pos, neg]), np.concatenate([g_q, g_qn])),
        },
        dense={"h": g_h},
    )
    return losses, grads


def preference(params: BaselineParams, users, items) -> np.ndarray:
    """Higher-is-better ranking score for each (user, item).

    CML uses the negated distance; MF uses the pre-sigmoid logit, which ranks
    identically to the sigmoid without saturating into ties.
    """
    p, q = params.P[users], params.Q[items]
    if params.model_kind == "cml":
        e = p - q
        return -np.einsum("ij,ij->i", e, e)
    if params.model_kind == "bpr":
        return np.einsum("ij,ij->i", p, q)
    return (p * q) @ params.h
