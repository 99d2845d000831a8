"""Hinge objective, lazy Adam, unit-ball projection and the training loop."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np

from . import dispatch
from .data import SplitDataset, sample_train_negatives
from .errors import ConfigError, NonFiniteGradientError, SnapshotError
from .evaluation import evaluate
from .model import ParamGrads
from .snapshot import params_header, read_container, write_container

logger = logging.getLogger(__name__)

# Tables updated row-wise (lazy Adam, unit-ball projection).
EMBEDDING_BLOCKS = ("P", "Q")


@dataclass
class TrainConfig:
    model_kind: str = "lrml"
    dim: int = 100
    num_slices: int = 20
    margin: float = 0.2
    learning_rate: float = 0.001
    num_batches: int = 10
    max_epochs: int = 500
    patience_epochs: int = 50
    checkpoint_every: int = 50
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    reg_user: float = 1e-4
    reg_item: float = 1e-4
    init_std: float = 0.01

    def __post_init__(self):
        if self.model_kind not in dispatch.MODEL_KINDS:
            raise ConfigError(f"model_kind must be one of {dispatch.MODEL_KINDS}, got {self.model_kind!r}")
        checks = [
            (self.dim >= 1, "dim must be >= 1"),
            (self.num_slices >= 1, "num_slices must be >= 1"),
            (self.margin > 0, "margin must be > 0"),
            (self.learning_rate > 0, "learning_rate must be > 0"),
            (self.num_batches >= 1, "num_batches must be >= 1"),
            (self.max_epochs >= 1, "max_epochs must be >= 1"),
            (self.patience_epochs >= 1, "patience_epochs must be >= 1"),
            (self.checkpoint_every >= 1, "checkpoint_every must be >= 1"),
            (0 < self.adam_beta1 < 1, "adam_beta1 must be in (0, 1)"),
            (0 < self.adam_beta2 < 1, "adam_beta2 must be in (0, 1)"),
            (self.adam_epsilon > 0, "adam_epsilon must be > 0"),
            (self.reg_user >= 0 and self.reg_item >= 0, "regularization weights must be >= 0"),
            (self.init_std > 0, "init_std must be > 0"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown training options: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


# Only these may differ between an interrupted run and its resumption.
_RESUMABLE_FIELDS = {"max_epochs", "patience_epochs", "checkpoint_every"}


@dataclass
class AdamState:
    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        blocks = params.blocks()
        return cls({k: np.zeros_like(a) for k, a in blocks.items()},
                   {k: np.zeros_like(a) for k, a in blocks.items()}, 0)


def hinge_loss(score_pos, score_neg, margin):
    """``max(0, score_pos + margin - score_neg)``; scores are distances."""
    if np.any(np.asarray(margin) <= 0):
        raise ValueError("margin must be > 0")
    return np.maximum(0.0, np.asarray(score_pos) + margin - np.asarray(score_neg))


def _coalesce(rows, vals):
    uniq, inv = np.unique(rows, return_inverse=True)
    g = np.zeros((len(uniq), vals.shape[1]))
    np.add.at(g, inv, vals)
    return uniq, g


def adam_step(params, grads: ParamGrads, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update, in place.

    Sparse row gradients update only the rows they touch, including their
    moments; untouched rows keep parameters and moments unchanged.
    """
    for name, (_, vals) in grads.sparse.items():
        if not np.all(np.isfinite(vals)):
            raise NonFiniteGradientError(name)
    for name, g in grads.dense.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(name)

    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    blocks = params.blocks()

    for name, (rows, vals) in grads.sparse.items():
        rows, g = _coalesce(np.asarray(rows), vals)
        m = state.m[name]
        v = state.v[name]
        m_rows = beta1 * m[rows] + (1.0 - beta1) * g
        v_rows = beta2 * v[rows] + (1.0 - beta2) * g * g
        m[rows] = m_rows
        v[rows] = v_rows
        blocks[name][rows] -= lr * (m_rows / c1) / (np.sqrt(v_rows / c2) + eps)

    for name, g in grads.dense.items():
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        blocks[name] -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, state


_NORM_SLACK = 4 * np.finfo(np.float64).eps


def _project_rows(table, rows=None):
    sub = table if rows is None else table[rows]
    norms = np.sqrt(np.einsum("ij,ij->i", sub, sub))
    # a rescaled row can land an ulp or two above 1; leaving those alone keeps
    # the projection idempotent
    over = norms > 1.0 + _NORM_SLACK
    if not np.any(over):
        return
    if rows is None:
        table[over] /= norms[over, None]
    else:
        idx = rows[over]
        table[idx] = sub[over] / norms[over, None]


def project_unit_ball(params, rows: Optional[Dict[str, np.ndarray]] = None):
    """Rescale every row of ``P`` and ``Q`` with norm above 1 back onto the sphere.

    ``rows`` optionally restricts the projection to the given row indices per
    table. Other blocks are left alone.
    """
    blocks = params.blocks()
    for name in EMBEDDING_BLOCKS:
        sel = None if rows is None else np.unique(rows[name])
        _project_rows(blocks[name], sel)
    return params


# ---------------------------------------------------------------------------
# training loop


@dataclass
class EpochLog:
    epoch: int
    mean_loss: float
    dev_hr10: float
    dev_ndcg10: float
    wall_seconds: float


LOG_FIELDS = [f.name for f in fields(EpochLog)]


def write_log_csv(path, log: List[EpochLog]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_FIELDS)
        for row in log:
            w.writerow([row.epoch, repr(row.mean_loss), repr(row.dev_hr10),
                        repr(row.dev_ndcg10), f"{row.wall_seconds:.3f}"])


def read_log_csv(path) -> List[EpochLog]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [EpochLog(int(r["epoch"]), float(r["mean_loss"]), float(r["dev_hr10"]),
                     float(r["dev_ndcg10"]), float(r["wall_seconds"])) for r in rows]


@dataclass
class TrainState:
    """Everything needed to continue training bit-for-bit after ``epoch``."""

    config: TrainConfig
    params: object
    adam: AdamState
    best_params: object
    epoch: int = 0
    best_epoch: int = 0
    best_dev_ndcg: float = -np.inf
    bad_epochs: int = 0
    log: List[EpochLog] = field(default_factory=list)


@dataclass
class TrainResult:
    params: object
    last_params: object
    log: List[EpochLog]
    best_epoch: int
    best_dev_ndcg: float
    stopped_early: bool


def checkpoint_path(directory, epoch: int) -> Path:
    return Path(directory) / f"epoch_{epoch:04d}.ckpt"


def save_checkpoint(path, st: TrainState) -> None:
    header = params_header(st.params)
    header.update({
        "kind": "checkpoint",
        "epoch": st.epoch,
        "best_epoch": st.best_epoch,
        "best_dev_ndcg": st.best_dev_ndcg if np.isfinite(st.best_dev_ndcg) else None,
        "bad_epochs": st.bad_epochs,
        "adam_t": st.adam.t,
        "config": st.config.to_dict(),
        "log": [asdict(r) for r in st.log],
    })
    arrays = dict(st.params.blocks())
    for name, a in st.best_params.blocks().items():
        arrays[f"best.{name}"] = a
    for name in st.adam.m:
        arrays[f"adam_m.{name}"] = st.adam.m[name]
        arrays[f"adam_v.{name}"] = st.adam.v[name]
    write_container(path, header, arrays)


def load_checkpoint(path) -> TrainState:
    header, arrays = read_container(path)
    if header.get("kind") != "checkpoint":
        raise SnapshotError(f"{path}: not a training checkpoint")
    kind = header["model_kind"]

    def group(prefix):
        return {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}

    params = dispatch.params_from_blocks(kind, {k: v for k, v in arrays.items() if "." not in k})
    best = dispatch.params_from_blocks(kind, group("best."))
    adam = AdamState(group("adam_m."), group("adam_v."), header["adam_t"])
    best_ndcg = header["best_dev_ndcg"]
    return TrainState(
        config=TrainConfig.from_dict(header["config"]),
        params=params,
        adam=adam,
        best_params=best,
        epoch=header["epoch"],
        best_epoch=header["best_epoch"],
        best_dev_ndcg=-np.inf if best_ndcg is None else best_ndcg,
        bad_epochs=header["bad_epochs"],
        log=[EpochLog(**r) for r in header["log"]],
    )


def initial_state(split: SplitDataset, config: TrainConfig, init=None) -> TrainState:
    if init is None:
        rng = np.random.default_rng([config.seed, 0])
        params = dispatch.init_params(config.model_kind, split.num_users, split.num_items,
                                      config.dim, config.num_slices, rng, config.init_std)
    else:
        if init.kind != config.model_kind:
            raise ConfigError(f"initial parameters are {init.kind!r}, config says {config.model_kind!r}")
        params = init.copy()
    if (params.num_users, params.num_items) != (split.num_users, split.num_items):
        raise ConfigError("parameter shapes do not match the split")
    if dispatch.uses_unit_ball(config.model_kind):
        project_unit_ball(params)
    return TrainState(config, params, AdamState.zeros_like(params), params.copy())


def run_epoch(split: SplitDataset, st: TrainState, epoch: int) -> float:
    """One pass over all training pairs; returns the mean per-pair loss."""
    cfg = st.config
    users, items = split.train.pairs()
    rng = np.random.default_rng([cfg.seed, epoch])
    perm = rng.permutation(len(users))
    users, items = users[perm], items[perm]
    negs = sample_train_negatives(split, users, rng)
    project = dispatch.uses_unit_ball(cfg.model_kind)

    total = 0.0
    for idx in np.array_split(np.arange(len(users)), cfg.num_batches):
        if len(idx) == 0:
            continue
        u, i, j = users[idx], items[idx], negs[idx]
        losses, grads = dispatch.pair_losses_and_grads(
            st.params, u, i, j, cfg.margin, cfg.reg_user, cfg.reg_item)
        total += float(losses.sum())
        adam_step(st.params, grads.scaled(1.0 / len(idx)), st.adam, cfg.learning_rate,
                  cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon)
        if project:
            project_unit_ball(st.params, {"P": u, "Q": np.concatenate([i, j])})
    return total / len(users)


def train(split: SplitDataset, config: TrainConfig, init=None, checkpoint_dir=None,
          resume: Optional[TrainState] = None,
          evaluator: Optional[Callable] = None,
          on_epoch: Optional[Callable[[EpochLog], None]] = None) -> TrainResult:
    """Train until dev nDCG@10 stalls for ``patience_epochs`` or ``max_epochs`` is hit.

    Returns the parameters of the epoch with the best dev nDCG@10 (first such
    epoch on ties) along with the final parameters and the per-epoch log.
    The run is a pure function of ``(split, config)``: epoch ``e`` draws its
    shuffle and negatives from a generator seeded with ``(seed, e)``, so a
    run resumed from a checkpoint continues identically.
    """
    if evaluator is None:
        evaluator = lambda params: evaluate(split, params, "dev")  # noqa: E731

    if resume is not None:
        old, new = resume.config.to_dict(), config.to_dict()
        diff = [k for k in old if k not in _RESUMABLE_FIELDS and old[k] != new[k]]
        if diff:
            raise ConfigError(f"cannot resume: config differs in {diff}")
        st = resume
        st.config = config
    else:
        st = initial_state(split, config, init)

    stopped_early = st.bad_epochs >= config.patience_epochs
    epoch = st.epoch
    while not stopped_early and epoch < config.max_epochs:
        epoch += 1
        t0 = time.perf_counter()
        mean_loss = run_epoch(split, st, epoch)
        if not np.isfinite(mean_loss):
            raise FloatingPointError(f"epoch {epoch}: non-finite mean loss")
        dev = evaluator(st.params)
        row = EpochLog(epoch, mean_loss, dev.hr10, dev.ndcg10, time.perf_counter() - t0)
        st.log.append(row)
        st.epoch = epoch
        if dev.ndcg10 > st.best_dev_ndcg:
            st.best_dev_ndcg = dev.ndcg10
            st.best_epoch = epoch
            st.best_params = st.params.copy()
            st.bad_epochs = 0
        else:
            st.bad_epochs += 1
        logger.info("epoch %d loss %.5f dev hr10 %.4f ndcg10 %.4f", epoch, mean_loss, dev.hr10, dev.ndcg10)
        if on_epoch is not None:
            on_epoch(row)
        if checkpoint_dir is not None and epoch % config.checkpoint_every == 0:
            save_checkpoint(checkpoint_path(checkpoint_dir, epoch), st)
        stopped_early = st.bad_epochs >= config.patience_epochs

    return TrainResult(st.best_params, st.params, st.log, st.best_epoch, st.best_dev_ndcg, stopped_early)
