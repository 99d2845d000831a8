"""Model-kind dispatch shared by the trainer, evaluator and snapshot loader."""
from __future__ import annotations

import numpy as np

from . import baselines, model
from .baselines import BaselineParams
from .model import ModelParams

MODEL_KINDS = ("lrml", "cml", "bpr", "mf")
METRIC_KINDS = ("lrml", "cml")


def check_kind(kind):
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {kind!r}; choose from {MODEL_KINDS}")
    return kind


def uses_unit_ball(kind) -> bool:
    """Metric models keep user/item rows inside the unit ball."""
    return kind in METRIC_KINDS


def init_params(kind, num_users, num_items, dim, num_slices, rng, std=0.01):
    check_kind(kind)
    if kind == "lrml":
        return ModelParams.init(num_users, num_items, dim, num_slices, rng, std)
    return BaselineParams.init(kind, num_users, num_items, dim, rng, std)


def params_from_blocks(kind, blocks):
    check_kind(kind)
    if kind == "lrml":
        return ModelParams(blocks["P"], blocks["Q"], blocks["M"], blocks["K"])
    return BaselineParams(blocks["P"], blocks["Q"], blocks.get("h"), kind)


def pair_losses_and_grads(params, users, pos, neg, margin=0.2, reg_user=1e-4, reg_item=1e-4):
    """Per-pair training losses and the gradient of their sum."""
    users = np.asarray(users, dtype=np.int64)
    pos = np.asarray(pos, dtype=np.int64)
    neg = np.asarray(neg, dtype=np.int64)
    kind = params.kind
    if kind == "lrml":
        return model.pair_losses_and_grads(params, users, pos, neg, margin)
    if kind == "cml":
        return baselines.cml_losses_and_grads(params, users, pos, neg, margin)
    if kind == "bpr":
        return baselines.bpr_losses_and_grads(params, users, pos, neg, reg_user, reg_item)
    return baselines.mf_losses_and_grads(params, users, pos, neg, reg_user, reg_item)


def preference(params, users, items) -> np.ndarray:
    """Higher-is-better score for each (user, item) pair, for ranking."""
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    if params.kind == "lrml":
        return -model.distances(params, users, items)
    return baselines.preference(params, users, items)
