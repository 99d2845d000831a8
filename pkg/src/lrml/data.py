"""Interaction logs: loading, implicit binarization, leave-one-out splitting
and negative sampling.

A :class:`Dataset` stores the nonzero entries of the binary user-item matrix
in CSR layout (``indptr``/``indices``), one sorted item list per user.  Rating
and timestamp side channels are carried along for analysis only; they never
influence training.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import DataError

logger = logging.getLogger(__name__)

FORMATS = {"uirt-tab": "\t", "uirt-doublecolon": "::"}

DEFAULT_NUM_NEGATIVES = 100


@dataclass(frozen=True)
class RawEvent:
    user_key: str
    item_key: str
    rating: Optional[float] = None
    timestamp: Optional[int] = None

    def __post_init__(self):
        if not self.user_key or not self.item_key:
            raise DataError("user_key and item_key must be nonempty")


def _readonly(arr):
    if arr is None:
        return None
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Dataset:
    """Binary implicit-feedback matrix in per-user sorted CSR form.

    ``order[k]`` is the rank of interaction ``k`` in the stream it was built
    from; :meth:`to_events` replays interactions in that order so a rebuild
    reproduces identical indices.
    """

    num_users: int
    num_items: int
    indptr: np.ndarray
    indices: np.ndarray
    user_keys: tuple
    item_keys: tuple
    order: np.ndarray
    ratings: Optional[np.ndarray] = None
    timestamps: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ("indptr", "indices", "order", "ratings", "timestamps"):
            object.__setattr__(self, name, _readonly(getattr(self, name)))
        if len(self.indptr) != self.num_users + 1:
            raise DataError("indptr length must be num_users + 1")
        if len(self.user_keys) != self.num_users or len(self.item_keys) != self.num_items:
            raise DataError("key tables do not match the index ranges")
        n = len(self.indices)
        for name in ("order", "ratings", "timestamps"):
            arr = getattr(self, name)
            if arr is not None and len(arr) != n:
                raise DataError(f"{name} must have one entry per interaction")

    @property
    def num_interactions(self) -> int:
        return int(len(self.indices))

    @property
    def density(self) -> float:
        return self.num_interactions / (self.num_users * self.num_items)

    @property
    def has_ratings(self) -> bool:
        return self.ratings is not None

    @property
    def has_timestamps(self) -> bool:
        return self.timestamps is not None

    def degree(self, user: int) -> int:
        return int(self.indptr[user + 1] - self.indptr[user])

    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def items_of(self, user: int) -> np.ndarray:
        return self.indices[self.indptr[user]:self.indptr[user + 1]]

    def pair_users(self) -> np.ndarray:
        """User index of every interaction, aligned with ``indices``."""
        return np.repeat(np.arange(self.num_users, dtype=np.int64), self.degrees())

    def pairs(self):
        return self.pair_users(), np.asarray(self.indices, dtype=np.int64)

    def interaction_keys(self) -> np.ndarray:
        """Sorted ``user * num_items + item`` codes of all interactions."""
        return self.pair_users() * self.num_items + self.indices

    def to_events(self) -> list:
        users, items = self.pairs()
        events = []
        for k in np.argsort(self.order, kind="stable"):
            rating = None if self.ratings is None else float(self.ratings[k])
            ts = None if self.timestamps is None else int(self.timestamps[k])
            events.append(RawEvent(self.user_keys[users[k]], self.item_keys[items[k]], rating, ts))
        return events

    def validate(self):
        """Check the structural invariants; raises :class:`DataError`."""
        if np.any(self.degrees() < 1):
            raise DataError("every user must have at least one interaction")
        if self.num_interactions and (self.indices.min() < 0 or self.indices.max() >= self.num_items):
            raise DataError("item index out of range")
        keys = self.interaction_keys()
        if np.any(np.diff(keys) <= 0):
            raise DataError("interactions must be sorted and duplicate free")

    def equals(self, other: "Dataset") -> bool:
        if not isinstance(other, Dataset):
            return False
        if (self.num_users, self.num_items) != (other.num_users, other.num_items):
            return False
        if self.user_keys != other.user_keys or self.item_keys != other.item_keys:
            return False
        for name in ("indptr", "indices", "order", "ratings", "timestamps"):
            a, b = getattr(self, name), getattr(other, name)
            if (a is None) != (b is None):
                return False
            if a is not None and not np.array_equal(a, b):
                return False
        return True


@dataclass(frozen=True, eq=False)
class SplitDataset:
    """Leave-one-out split: train matrix, one dev and one test item per user,
    and a fixed list of evaluation negatives per user."""

    train: Dataset
    dev_item: np.ndarray
    test_item: np.ndarray
    eval_negatives: np.ndarray
    dev_rating: Optional[np.ndarray] = None
    test_rating: Optional[np.ndarray] = None
    dev_timestamp: Optional[np.ndarray] = None
    test_timestamp: Optional[np.ndarray] = None
    seed: Optional[int] = None

    def __post_init__(self):
        for name in ("dev_item", "test_item", "eval_negatives", "dev_rating",
                     "test_rating", "dev_timestamp", "test_timestamp"):
            object.__setattr__(self, name, _readonly(getattr(self, name)))
        u = self.train.num_users
        if self.dev_item.shape != (u,) or self.test_item.shape != (u,):
            raise DataError("dev_item/test_item must have one entry per user")
        if self.eval_negatives.ndim != 2 or self.eval_negatives.shape[0] != u:
            raise DataError("eval_negatives must be a (num_users, k) matrix")

    @property
    def num_users(self) -> int:
        return self.train.num_users

    @property
    def num_items(self) -> int:
        return self.train.num_items

    @property
    def num_negatives(self) -> int:
        return int(self.eval_negatives.shape[1])

    def held_out(self, which: str) -> np.ndarray:
        if which == "dev":
            return self.dev_item
        if which == "test":
            return self.test_item
        raise ValueError(f"which must be 'dev' or 'test', got {which!r}")

    @cached_property
    def known_keys(self) -> np.ndarray:
        """Sorted interaction codes of train, dev and test combined."""
        users = np.arange(self.num_users, dtype=np.int64)
        extra = np.concatenate([users * self.num_items + self.dev_item,
                                users * self.num_items + self.test_item])
        keys = np.concatenate([self.train.interaction_keys(), extra])
        keys.sort()
        keys.flags.writeable = False
        return keys

    def user_items(self, user: int) -> np.ndarray:
        """All known interactions of ``user`` (train, dev and test), sorted."""
        items = np.concatenate([self.train.items_of(user),
                                [self.dev_item[user], self.test_item[user]]])
        items.sort()
        return items

    def all_pairs(self):
        """Every known (user, item, rating, timestamp), train first then dev and test.

        Rating/timestamp entries are ``None`` when the side channel is absent.
        """
        tu, ti = self.train.pairs()
        users = np.arange(self.num_users, dtype=np.int64)
        u = np.concatenate([tu, users, users])
        i = np.concatenate([ti, self.dev_item, self.test_item])
        r = t = None
        if self.train.has_ratings and self.dev_rating is not None:
            r = np.concatenate([self.train.ratings, self.dev_rating, self.test_rating])
        if self.train.has_timestamps and self.dev_timestamp is not None:
            t = np.concatenate([self.train.timestamps, self.dev_timestamp, self.test_timestamp])
        return u, i, r, t

    def equals(self, other: "SplitDataset") -> bool:
        if not isinstance(other, SplitDataset) or not self.train.equals(other.train):
            return False
        for name in ("dev_item", "test_item", "eval_negatives", "dev_rating",
                     "test_rating", "dev_timestamp", "test_timestamp"):
            a, b = getattr(self, name), getattr(other, name)
            if (a is None) != (b is None):
                return False
            if a is not None and not np.array_equal(a, b):
                return False
        return self.seed == other.seed


# ---------------------------------------------------------------------------
# loading


def _parse_line(line: str, sep: str, lineno: int) -> RawEvent:
    fields = line.split(sep)
    if len(fields) < 2:
        raise DataError(f"line {lineno}: expected at least 2 fields, got {len(fields)}")
    if len(fields) > 4:
        raise DataError(f"line {lineno}: expected at most 4 fields, got {len(fields)}")
    user, item = fields[0].strip(), fields[1].strip()
    if not user or not item:
        raise DataError(f"line {lineno}: empty user or item key")
    rating = timestamp = None
    try:
        if len(fields) >= 3 and fields[2].strip():
            rating = float(fields[2])
        if len(fields) == 4 and fields[3].strip():
            timestamp = int(fields[3])
    except ValueError as exc:
        raise DataError(f"line {lineno}: {exc}") from None
    return RawEvent(user, item, rating, timestamp)


def load_events(path, format: str = "uirt-doublecolon") -> list:
    """Parse a rating log with one ``user, item[, rating[, timestamp]]`` event per line.

    Blank lines are skipped. Any other malformed line raises
    :class:`DataError` carrying its 1-based line number.
    """
    if format not in FORMATS:
        raise DataError(f"unknown format {format!r}; choose from {sorted(FORMATS)}")
    sep = FORMATS[format]
    path = Path(path)
    events = []
    with open(path, encoding="utf-8", errors="surrogateescape") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            events.append(_parse_line(line, sep, lineno))
    if not events:
        raise DataError(f"{path}: no events (empty file)")
    return events


def build_dataset(events: Iterable[RawEvent], min_interactions: int = 20) -> Dataset:
    """Binarize events into a :class:`Dataset`.

    Repeated (user, item) events collapse to their first occurrence. Users
    with fewer than ``min_interactions`` distinct items are dropped in a
    single pass; items are never filtered. Indices are assigned by first
    appearance among the retained events.
    """
    if min_interactions < 1:
        raise DataError("min_interactions must be >= 1")

    seen = set()
    unique = []
    counts: dict = {}
    for ev in events:
        key = (ev.user_key, ev.item_key)
        if key in seen:
            continue
        seen.add(key)
        unique.append(ev)
        counts[ev.user_key] = counts.get(ev.user_key, 0) + 1

    kept_users = {u for u, c in counts.items() if c >= min_interactions}
    retained = [ev for ev in unique if ev.user_key in kept_users]
    if not retained:
        raise DataError("empty after filtering")

    user_index: dict = {}
    item_index: dict = {}
    n = len(retained)
    users = np.empty(n, dtype=np.int64)
    items = np.empty(n, dtype=np.int64)
    for k, ev in enumerate(retained):
        users[k] = user_index.setdefault(ev.user_key, len(user_index))
        items[k] = item_index.setdefault(ev.item_key, len(item_index))

    has_r = all(ev.rating is not None for ev in retained)
    has_t = all(ev.timestamp is not None for ev in retained)
    if not has_r and any(ev.rating is not None for ev in retained):
        logger.warning("ratings present on only some events; dropping the rating channel")
    if not has_t and any(ev.timestamp is not None for ev in retained):
        logger.warning("timestamps present on only some events; dropping the timestamp channel")

    perm = np.lexsort((items, users))
    num_users, num_items = len(user_index), len(item_index)
    indptr = np.zeros(num_users + 1, dtype=np.int64)
    np.cumsum(np.bincount(users, minlength=num_users), out=indptr[1:])
    ratings = np.array([ev.rating for ev in retained], dtype=np.float64)[perm] if has_r else None
    timestamps = np.array([ev.timestamp for ev in retained], dtype=np.int64)[perm] if has_t else None

    ds = Dataset(
        num_users=num_users,
        num_items=num_items,
        indptr=indptr,
        indices=items[perm],
        user_keys=tuple(user_index),
        item_keys=tuple(item_index),
        order=np.arange(n, dtype=np.int64)[perm],
        ratings=ratings,
        timestamps=timestamps,
    )
    ds.validate()
    return ds


# ---------------------------------------------------------------------------
# splitting and sampling


def _sample_excluding(rng, num_items, excluded, k):
    """Uniform ``k``-subset of ``range(num_items)`` minus the sorted array ``excluded``."""
    free = num_items - len(excluded)
    if free < k:
        raise DataError("insufficient negatives")
    if len(excluded) * 2 > num_items:
        candidates = np.setdiff1d(np.arange(num_items, dtype=np.int64), excluded, assume_unique=True)
        return rng.choice(candidates, size=k, replace=False)
    out = np.empty(0, dtype=np.int64)
    while len(out) < k:
        draw = rng.integers(0, num_items, size=2 * k)
        pos = np.searchsorted(excluded, draw)
        pos[pos == len(excluded)] = 0
        draw = draw[excluded[pos] != draw] if len(excluded) else draw
        merged = np.concatenate([out, draw])
        _, first = np.unique(merged, return_index=True)
        out = merged[np.sort(first)]
    return out[:k]


def leave_one_out_split(ds: Dataset, seed: int, num_negatives: int = DEFAULT_NUM_NEGATIVES) -> SplitDataset:
    """Hold out one test and one dev item per user and fix the evaluation negatives.

    The test item is the user's latest interaction when timestamps exist
    (ties broken at random), otherwise a random one. The dev item is drawn
    uniformly from the rest. ``num_negatives`` non-interacted items per user
    are sampled without replacement. Everything is a pure function of
    ``(ds, seed)``.
    """
    degrees = ds.degrees()
    short = np.flatnonzero(degrees < 3)
    if len(short):
        raise DataError(f"user {ds.user_keys[short[0]]!r} has {degrees[short[0]]} interactions; need >= 3")
    rng = np.random.default_rng(seed)

    n_users = ds.num_users
    dev_pos = np.empty(n_users, dtype=np.int64)
    test_pos = np.empty(n_users, dtype=np.int64)
    negatives = np.empty((n_users, num_negatives), dtype=np.int64)
    for u in range(n_users):
        lo, hi = ds.indptr[u], ds.indptr[u + 1]
        if ds.num_items - (hi - lo) < num_negatives:
            raise DataError(f"insufficient negatives for user {ds.user_keys[u]!r}")
        if ds.timestamps is not None:
            ts = ds.timestamps[lo:hi]
            latest = np.flatnonzero(ts == ts.max())
            t = latest[rng.integers(len(latest))] if len(latest) > 1 else latest[0]
        else:
            t = rng.integers(hi - lo)
        rest = np.delete(np.arange(hi - lo), t)
        test_pos[u] = lo + t
        dev_pos[u] = lo + rest[rng.integers(len(rest))]
        negatives[u] = _sample_excluding(rng, ds.num_items, ds.indices[lo:hi], num_negatives)

    keep = np.ones(ds.num_interactions, dtype=bool)
    keep[dev_pos] = False
    keep[test_pos] = False
    train = Dataset(
        num_users=n_users,
        num_items=ds.num_items,
        indptr=np.concatenate([[0], np.cumsum(degrees - 2)]).astype(np.int64),
        indices=ds.indices[keep],
        user_keys=ds.user_keys,
        item_keys=ds.item_keys,
        order=ds.order[keep],
        ratings=None if ds.ratings is None else ds.ratings[keep],
        timestamps=None if ds.timestamps is None else ds.timestamps[keep],
    )

    def side(arr, pos):
        return None if arr is None else arr[pos]

    return SplitDataset(
        train=train,
        dev_item=ds.indices[dev_pos],
        test_item=ds.indices[test_pos],
        eval_negatives=negatives,
        dev_rating=side(ds.ratings, dev_pos),
        test_rating=side(ds.ratings, test_pos),
        dev_timestamp=side(ds.timestamps, dev_pos),
        test_timestamp=side(ds.timestamps, test_pos),
        seed=int(seed),
    )


_MAX_REJECTION_ROUNDS = 32


def sample_train_negatives(split: SplitDataset, users: Sequence[int], rng: np.random.Generator) -> np.ndarray:
    """One uniform negative item per entry of ``users``.

    Candidates exclude the user's train items as well as the held-out dev and
    test items. Rejection sampling, with an exact fallback for users whose
    rows are too dense to converge quickly.
    """
    users = np.asarray(users, dtype=np.int64)
    n_items = split.num_items
    keys = split.known_keys
    out = rng.integers(0, n_items, size=len(users))
    todo = np.arange(len(users))
    for _ in range(_MAX_REJECTION_ROUNDS):
        codes = users[todo] * n_items + out[todo]
        pos = np.minimum(np.searchsorted(keys, codes), len(keys) - 1)
        todo = todo[keys[pos] == codes]
        if len(todo) == 0:
            return out
        out[todo] = rng.integers(0, n_items, size=len(todo))
    for k in todo:
        u = users[k]
        free = np.setdiff1d(np.arange(n_items), split.user_items(u), assume_unique=True)
        if len(free) == 0:
            raise DataError(f"user {split.train.user_keys[u]!r} has no non-interacted items")
        out[k] = free[rng.integers(len(free))]
    return out


def sample_train_negative(split: SplitDataset, user: int, rng: np.random.Generator) -> int:
    """Draw a single training negative for ``user``."""
    return int(sample_train_negatives(split, [user], rng)[0])


# ---------------------------------------------------------------------------
# attribute side tables (analysis only)


def load_attribute_table(path, format: str = "tsv", kind: str = "user") -> dict:
    """Load per-key categorical attributes.

    ``format="tsv"`` expects a header row whose first column is the key.
    ``format="ml1m"`` reads MovieLens-1M ``users.dat`` (``kind="user"``:
    gender, age, job) or ``movies.dat`` (``kind="item"``: category, the
    first listed genre).

    Returns ``{attribute_name: {key: label}}``.
    """
    path = Path(path)
    table: dict = {}
    if format == "tsv":
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().rstrip("\r\n").split("\t")
            if len(header) < 2:
                raise DataError(f"{path}: header needs a key column and at least one attribute")
            names = header[1:]
            table = {name: {} for name in names}
            for lineno, line in enumerate(fh, 2):
                if not line.strip():
                    continue
                fields = line.rstrip("\r\n").split("\t")
                if len(fields) != len(header):
                    raise DataError(f"{path}: line {lineno}: expected {len(header)} fields")
                for name, value in zip(names, fields[1:]):
                    table[name][fields[0]] = value
        return table
    if format != "ml1m":
        raise DataError(f"unknown attribute format {format!r}")
    with open(path, encoding="latin-1") as fh:
        rows = [line.rstrip("\r\n").split("::") for line in fh if line.strip()]
    if kind == "user":
        table = {"gender": {}, "age": {}, "job": {}}
        for lineno, row in enumerate(rows, 1):
            if len(row) < 4:
                raise DataError(f"{path}: line {lineno}: malformed users.dat row")
            table["gender"][row[0]] = row[1]
            table["age"][row[0]] = row[2]
            table["job"][row[0]] = row[3]
    elif kind == "item":
        table = {"category": {}}
        for lineno, row in enumerate(rows, 1):
            if len(row) < 3:
                raise DataError(f"{path}: line {lineno}: malformed movies.dat row")
            table["category"][row[0]] = row[2].split("|")[0]
    else:
        raise DataError(f"kind must be 'user' or 'item', got {kind!r}")
    return table


def attribute_labels(keys: Sequence[str], mapping: dict, missing: str = "") -> np.ndarray:
    """Map an index-ordered key table through ``mapping`` to an object array of labels."""
    return np.array([mapping.get(k, missing) for k in keys], dtype=object)
