"""Independent oracles shared by the test modules.

The losses below are written from scratch with plain loops over vector
operations so that finite differences of them check the package's analytic
gradients without sharing its forward code.
"""
import math

import numpy as np

from lrml.baselines import BaselineParams
from lrml.model import ModelParams


def naive_lrml_loss(params, u, i, j, margin):
    p, q, qn = params.P[u], params.Q[i], params.Q[j]
    s = [p[k] * q[k] for k in range(len(p))]
    logits = [sum(s[k] * params.K[n, k] for k in range(len(s))) for n in range(params.K.shape[0])]
    top = max(logits)
    w = [math.exp(z - top) for z in logits]
    tot = sum(w)
    a = [x / tot for x in w]
    r = [sum(a[n] * params.M[n, k] for n in range(len(a))) for k in range(len(p))]
    pos = sum((p[k] + r[k] - q[k]) ** 2 for k in range(len(p)))
    neg = sum((p[k] + r[k] - qn[k]) ** 2 for k in range(len(p)))
    return max(0.0, pos + margin - neg)


def naive_cml_loss(params, u, i, j, margin):
    p, q, qn = params.P[u], params.Q[i], params.Q[j]
    pos = sum((a - b) ** 2 for a, b in zip(p, q))
    neg = sum((a - b) ** 2 for a, b in zip(p, qn))
    return max(0.0, pos + margin - neg)


def _log1pexp(x):
    return x + math.log1p(math.exp(-x)) if x > 0 else math.log1p(math.exp(x))


def naive_bpr_loss(params, u, i, j, reg_user, reg_item):
    p, q, qn = params.P[u], params.Q[i], params.Q[j]
    x = sum(a * b for a, b in zip(p, q)) - sum(a * b for a, b in zip(p, qn))
    return _log1pexp(-x) + reg_user * sum(a * a for a in p) + reg_item * sum(b * b for b in q)


def naive_mf_loss(params, u, i, j, reg_user, reg_item):
    p, q, qn, h = params.P[u], params.Q[i], params.Q[j], params.h
    y_pos = sum(h[k] * p[k] * q[k] for k in range(len(p)))
    y_neg = sum(h[k] * p[k] * qn[k] for k in range(len(p)))
    return (_log1pexp(-y_pos) + _log1pexp(y_neg)
            + reg_user * sum(a * a for a in p)
            + reg_item * (sum(b * b for b in q) + sum(b * b for b in qn)))


def random_params(kind, rng, d, n_slices=2, n_users=3, n_items=5, scale=0.5):
    if kind == "lrml":
        return ModelParams(rng.normal(0, scale, (n_users, d)), rng.normal(0, scale, (n_items, d)),
                           rng.normal(0, scale, (n_slices, d)), rng.normal(0, scale, (n_slices, d)))
    h = rng.normal(0, scale, d) if kind == "mf" else None
    return BaselineParams(rng.normal(0, scale, (n_users, d)), rng.normal(0, scale, (n_items, d)), h, kind)


def numeric_grads(loss, params, h=1e-5):
    """Central finite differences of ``loss()`` over every parameter coordinate."""
    out = {}
    for name, arr in params.blocks().items():
        g = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + h
            up = loss()
            arr[idx] = old - h
            down = loss()
            arr[idx] = old
            g[idx] = (up - down) / (2 * h)
        out[name] = g
    return out


# Relative error is taken against max(|analytic|, |numeric|, REL_FLOOR):
# with h = 1e-5 the central difference carries ~1e-11 absolute rounding
# noise, which is meaningless relative to coordinates that are exactly zero.
REL_FLOOR = 1e-6


def max_relative_error(analytic, numeric):
    worst = 0.0
    for name in numeric:
        a, n = analytic[name], numeric[name]
        err = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), REL_FLOOR)
        worst = max(worst, float(err.max()))
    return worst
