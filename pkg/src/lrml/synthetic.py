"""Small synthetic interaction logs with planted structure."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .data import RawEvent, build_dataset


def planted_blocks(num_users=20, num_items=30, num_blocks=5):
    """Block-diagonal dataset: user ``u`` interacts with every item of block ``u % num_blocks``.

    Item ``i`` belongs to block ``i * num_blocks // num_items``. Keys are the
    stringified indices and events are emitted so that indices equal keys.
    """
    item_block = np.arange(num_items) * num_blocks // num_items
    events = []
    # first pass introduces every item in index order, then the rest
    owner = {}
    for u in range(num_users):
        owner.setdefault(u % num_blocks, u)
    for i in range(num_items):
        events.append(RawEvent(str(owner[item_block[i]]), str(i), 5.0, i))
    for u in range(num_users):
        for i in np.flatnonzero(item_block == u % num_blocks):
            events.append(RawEvent(str(u), str(i), 5.0, int(i)))
    ds = build_dataset(events, min_interactions=1)
    return ds


def random_events(num_users, num_items, per_user, seed=0, ratings=True, timestamps=True):
    """Each user picks ``per_user`` distinct items uniformly at random."""
    rng = np.random.default_rng(seed)
    events = []
    t = 1_000_000
    for u in range(num_users):
        for i in rng.choice(num_items, size=per_user, replace=False):
            t += int(rng.integers(1, 100))
            events.append(RawEvent(f"u{u}", f"i{i}",
                                   float(rng.integers(1, 6)) if ratings else None,
                                   t if timestamps else None))
    return events


def clustered_log(num_users=300, num_items=400, num_clusters=5, per_user=40, affinity=0.8, seed=0):
    """Rating log where users and items share latent clusters.

    A user draws an item from its own cluster with probability ``affinity``;
    in-cluster interactions get high ratings, others low ones. Timestamps
    increase along each user's history. Returns ``(events, user_attrs,
    item_attrs)`` where the attribute tables map key -> label per attribute.
    """
    rng = np.random.default_rng(seed)
    ucl = rng.integers(num_clusters, size=num_users)
    icl = rng.integers(num_clusters, size=num_items)
    by_cluster = [np.flatnonzero(icl == c) for c in range(num_clusters)]
    events = []
    for u in range(num_users):
        own = by_cluster[ucl[u]]
        picked = set()
        t = 970_000_000 + int(rng.integers(0, 10_000_000))
        while len(picked) < per_user:
            if len(own) and rng.random() < affinity:
                i = int(rng.choice(own))
            else:
                i = int(rng.integers(num_items))
            if i in picked:
                continue
            picked.add(i)
            t += int(rng.integers(60, 86_400))
            match = icl[i] == ucl[u]
            rating = float(rng.integers(4, 6) if match else rng.integers(1, 4))
            events.append(RawEvent(f"{u + 1}", f"{i + 1}", rating, t))
    user_attrs = {
        "gender": {f"{u + 1}": "MF"[int(rng.integers(2))] for u in range(num_users)},
        "age": {f"{u + 1}": str(int(rng.choice([18, 25, 35, 45]))) for u in range(num_users)},
        "job": {f"{u + 1}": str(int(ucl[u]) if rng.random() < 0.7 else int(rng.integers(num_clusters)))
                for u in range(num_users)},
    }
    item_attrs = {"category": {f"{i + 1}": f"genre{icl[i]}" for i in range(num_items)}}
    return events, user_attrs, item_attrs


def write_ml1m_style(directory, events, user_attrs, item_attrs):
    """Write ``ratings.dat``, ``users.dat`` and ``movies.dat`` in MovieLens-1M layout."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    with open(d / "ratings.dat", "w", encoding="utf-8") as fh:
        for ev in events:
            fh.write(f"{ev.user_key}::{ev.item_key}::{int(ev.rating)}::{ev.timestamp}\n")
    with open(d / "users.dat", "w", encoding="latin-1") as fh:
        for key in user_attrs["gender"]:
            fh.write(f"{key}::{user_attrs['gender'][key]}::{user_attrs['age'][key]}::"
                     f"{user_attrs['job'][key]}::00000\n")
    with open(d / "movies.dat", "w", encoding="latin-1") as fh:
        for key, cat in item_attrs["category"].items():
            fh.write(f"{key}::Movie {key} (2000)::{cat}\n")
    return d
