"""Post-hoc analyses of a trained LRML model.

* mean attention over memory slices per attribute class (ratings, time bins)
* nearest-neighbour matching of relation vectors against user/item attributes
* the interactions-to-unknowns ratio that flags an over-determined CML fit

Results are emitted as CSV for external plotting.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import DataError
from .model import ModelParams, relation_batch

logger = logging.getLogger(__name__)

_CHUNK = 65536


@dataclass
class AttentionProfile:
    attribute_name: str
    classes: list
    mean_attention: np.ndarray      # (num_classes, N)
    support: np.ndarray             # pairs per class
    dropped: list = field(default_factory=list)

    def write_csv(self, path) -> None:
        """Rows are memory slices M1..MN, columns are attribute classes."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["slice"] + [str(c) for c in self.classes])
            for n in range(self.mean_attention.shape[1]):
                w.writerow([f"M{n + 1}"] + [repr(float(x)) for x in self.mean_attention[:, n]])


@dataclass
class MatchReport:
    attribute: str
    match_rate: float
    random_rate: float
    diff: float
    num_pairs: int = 0
    diff_ci: Optional[Tuple[float, float]] = None


def _require_lrml(params):
    if not isinstance(params, ModelParams):
        raise TypeError(f"analysis needs an LRML model with a memory module, got {getattr(params, 'kind', params)!r}")


def attention_vectors(params: ModelParams, users, items) -> np.ndarray:
    _require_lrml(params)
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    out = np.empty((len(users), params.num_slices))
    for lo in range(0, len(users), _CHUNK):
        out[lo:lo + _CHUNK] = relation_batch(params, users[lo:lo + _CHUNK], items[lo:lo + _CHUNK])[1]
    return out


def relation_vectors(params: ModelParams, users, items) -> np.ndarray:
    _require_lrml(params)
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    out = np.empty((len(users), params.dim))
    for lo in range(0, len(users), _CHUNK):
        out[lo:lo + _CHUNK] = relation_batch(params, users[lo:lo + _CHUNK], items[lo:lo + _CHUNK])[2]
    return out


def attention_profile(users, items, labels, params: ModelParams, attribute_name="attribute",
                      classes: Optional[Sequence] = None) -> AttentionProfile:
    """Mean attention vector per class label.

    Classes default to the sorted distinct labels. Requested classes without
    any pair are dropped and listed in ``dropped``.
    """
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise DataError("no pairs to profile")
    if classes is None:
        classes = sorted(set(labels.tolist()))
    att = attention_vectors(params, users, items)
    kept, rows, support, dropped = [], [], [], []
    for c in classes:
        mask = labels == c
        n = int(mask.sum())
        if n == 0:
            dropped.append(c)
            logger.warning("attribute %s: class %r has no pairs; dropped", attribute_name, c)
            continue
        kept.append(c)
        rows.append(att[mask].mean(axis=0))
        support.append(n)
    if not kept:
        raise DataError(f"attribute {attribute_name}: every class is empty")
    return AttentionProfile(attribute_name, kept, np.array(rows), np.array(support), dropped)


def attention_by_class(pairs, params: ModelParams, attribute_name="attribute", classes=None) -> AttentionProfile:
    """Same as :func:`attention_profile` for a sequence of ``(user, item, label)`` triples."""
    pairs = list(pairs)
    if not pairs:
        raise DataError("no pairs to profile")
    users, items, labels = zip(*pairs)
    return attention_profile(users, items, np.asarray(labels), params, attribute_name, classes)


def bin_timestamps(timestamps, num_bins: int = 10) -> np.ndarray:
    """Equal-frequency chronological bins labelled ``0..num_bins-1``.

    Equal timestamps are ordered by input position, so a run of identical
    timestamps may straddle a bin boundary.
    """
    if timestamps is None:
        raise DataError("missing timestamps")
    ts = np.asarray(timestamps, dtype=np.float64)
    if ts.ndim != 1 or np.any(~np.isfinite(ts)):
        raise DataError("missing timestamps")
    n = len(ts)
    if num_bins < 1:
        raise DataError("num_bins must be >= 1")
    if n < num_bins:
        raise DataError(f"{n} timestamps cannot fill {num_bins} bins")
    if n == 0 or ts.min() == ts.max():
        raise DataError("degenerate timestamps")
    order = np.argsort(ts, kind="stable")
    labels = np.empty(n, dtype=np.int64)
    labels[order] = (np.arange(n) * num_bins) // n
    return labels


# ---------------------------------------------------------------------------
# relation-vector neighbours


def collision_rate(labels) -> float:
    """Probability that two independent draws from the empirical label
    distribution coincide: ``sum_c f_c^2``."""
    codes = _codes(labels)
    f = np.bincount(codes) / len(codes)
    return float(f @ f)


def nearest_neighbors(vectors: np.ndarray, chunk: int = 2048) -> np.ndarray:
    """Exact cosine nearest neighbour of each row, excluding itself; ties go to the lowest index."""
    norms = np.linalg.norm(vectors, axis=1)
    if np.any(norms == 0):
        raise ValueError("zero-norm vector")
    unit = vectors / norms[:, None]
    n = len(unit)
    nn = np.empty(n, dtype=np.int64)
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        sims = unit[lo:hi] @ unit.T
        sims[np.arange(hi - lo), np.arange(lo, hi)] = -np.inf
        nn[lo:hi] = np.argmax(sims, axis=1)
    return nn


def _codes(labels):
    arr = np.asarray(labels)
    if arr.ndim == 1:
        return np.unique(arr, return_inverse=True)[1].reshape(-1)
    return np.unique(arr, axis=0, return_inverse=True)[1].reshape(-1)


def _bootstrap_diff(match, codes, rng, n_boot, level):
    n = len(match)
    n_cls = codes.max() + 1
    diffs = np.empty(n_boot)
    for b in range(n_boot):
        idx = rng.integers(0, n, size=n)
        f = np.bincount(codes[idx], minlength=n_cls) / n
        diffs[b] = match[idx].mean() - f @ f
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(diffs, [alpha, 1.0 - alpha])
    return float(lo), float(hi)


def relation_similarity_matches(users, items, params: ModelParams, attributes: Mapping[str, Sequence],
                                rng: Optional[np.random.Generator] = None,
                                conjunctions: Sequence[Sequence[str]] = (),
                                n_boot: int = 1000, level: float = 0.95) -> List[MatchReport]:
    """Attribute agreement between each pair and the pair with the most similar relation vector.

    ``attributes`` maps a name to one label per input pair. ``conjunctions``
    lists attribute-name groups that must all match at once (reported as
    ``"a AND b"``). When ``rng`` is given each report carries a bootstrap
    confidence interval for ``diff`` at ``level``.
    """
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    r = relation_vectors(params, users, items)
    valid = np.linalg.norm(r, axis=1) > 0
    if not np.all(valid):
        logger.warning("%d pairs with zero-norm relation vectors excluded", int((~valid).sum()))
    if valid.sum() < 2:
        raise DataError("need at least two pairs with nonzero relation vectors")
    nn = nearest_neighbors(r[valid])

    labels: Dict[str, np.ndarray] = {}
    for name, lab in attributes.items():
        lab = np.asarray(lab, dtype=object)
        if len(lab) != len(users):
            raise DataError(f"attribute {name!r} needs one label per pair")
        labels[name] = lab[valid]
    groups = [(name, (name,)) for name in attributes]
    groups += [(" AND ".join(c), tuple(c)) for c in conjunctions]

    reports = []
    for title, names in groups:
        codes_per = [_codes(labels[n].astype(str)) for n in names]
        match = np.ones(len(nn), dtype=bool)
        for c in codes_per:
            match &= c == c[nn]
        joint = _codes(np.column_stack(codes_per)) if len(codes_per) > 1 else codes_per[0]
        f = np.bincount(joint) / len(joint)
        rand = float(f @ f)
        rate = float(match.mean())
        ci = _bootstrap_diff(match.astype(np.float64), joint, rng, n_boot, level) if rng is not None else None
        reports.append(MatchReport(title, rate, rand, rate - rand, int(len(nn)), ci))
    return reports


def write_match_csv(path, reports: Sequence[MatchReport]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["attribute", "match_pct", "random_pct", "diff_pct"])
        for rep in reports:
            w.writerow([rep.attribute, f"{100 * rep.match_rate:.4f}",
                        f"{100 * rep.random_rate:.4f}", f"{100 * rep.diff:.4f}"])


# ---------------------------------------------------------------------------
# over-determination of the plain metric fit


def ill_posedness_from_counts(num_interactions: int, num_users: int, num_items: int, d: int = 1) -> float:
    """Equations (one per interaction and dimension) over unknowns (one per
    embedding coordinate)."""
    if d < 1:
        raise ValueError("d must be >= 1")
    return (num_interactions * d) / ((num_users + num_items) * d)


def ill_posedness_ratio(ds, d: int = 1) -> float:
    return ill_posedness_from_counts(ds.num_interactions, ds.num_users, ds.num_items, d)
