"""Versioned binary container used for splits, parameters and checkpoints.

Layout::

    b"LRMLSNAP"                     8-byte magic
    uint32 LE                       format version
    uint64 LE                       header length in bytes
    header                          UTF-8 JSON, sorted keys
    array payloads                  raw little-endian, row-major, in header order

The header lists every array's name, dtype and shape, so files are
self-describing.  Output is byte-deterministic for identical inputs.
"""
from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .errors import SnapshotError

MAGIC = b"LRMLSNAP"
FORMAT_VERSION = 1

_ALLOWED_DTYPES = {"<f8", "<f4", "<i8", "|b1"}


def _to_le(arr):
    arr = np.asarray(arr)
    if arr.dtype == np.bool_:
        return np.ascontiguousarray(arr)
    dt = arr.dtype.newbyteorder("<")
    return np.ascontiguousarray(arr, dtype=dt)


def write_container(path, header: dict, arrays: dict) -> None:
    prepared = {name: _to_le(a) for name, a in arrays.items()}
    meta = dict(header)
    meta["arrays"] = [
        {"name": name, "dtype": a.dtype.str, "shape": list(a.shape)}
        for name, a in prepared.items()
    ]
    for entry in meta["arrays"]:
        if entry["dtype"] not in _ALLOWED_DTYPES:
            raise SnapshotError(f"unsupported dtype {entry['dtype']} for array {entry['name']!r}")
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", FORMAT_VERSION, len(blob)))
        fh.write(blob)
        for a in prepared.values():
            fh.write(a.tobytes())
    os.replace(tmp, path)


def read_container(path):
    """Return ``(header, arrays)``; raises :class:`SnapshotError` on any defect."""
    path = Path(path)
    data = path.read_bytes()
    if data[:8] != MAGIC:
        raise SnapshotError(f"{path}: not a snapshot file (bad magic)")
    if len(data) < 20:
        raise SnapshotError(f"{path}: truncated header")
    version, hlen = struct.unpack_from("<IQ", data, 8)
    if version != FORMAT_VERSION:
        raise SnapshotError(f"{path}: unsupported format version {version}")
    offset = 20 + hlen
    try:
        header = json.loads(data[20:offset].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise SnapshotError(f"{path}: corrupt header: {exc}") from None
    arrays = {}
    for entry in header.pop("arrays", []):
        dt = np.dtype(entry["dtype"])
        count = int(np.prod(entry["shape"], dtype=np.int64))
        nbytes = count * dt.itemsize
        if offset + nbytes > len(data):
            raise SnapshotError(f"{path}: truncated payload for {entry['name']!r}")
        arr = np.frombuffer(data, dtype=dt, count=count, offset=offset).reshape(entry["shape"])
        arrays[entry["name"]] = arr.astype(dt.newbyteorder("="), copy=True)
        offset += nbytes
    if offset != len(data):
        raise SnapshotError(f"{path}: {len(data) - offset} trailing bytes")
    return header, arrays


# ---------------------------------------------------------------------------
# splits


def save_split(path, split) -> None:
    train = split.train
    header = {
        "kind": "split",
        "num_users": train.num_users,
        "num_items": train.num_items,
        "seed": split.seed,
        "user_keys": list(train.user_keys),
        "item_keys": list(train.item_keys),
    }
    arrays = {
        "train.indptr": train.indptr,
        "train.indices": train.indices,
        "train.order": train.order,
        "dev_item": split.dev_item,
        "test_item": split.test_item,
        "eval_negatives": split.eval_negatives,
    }
    optional = {
        "train.ratings": train.ratings,
        "train.timestamps": train.timestamps,
        "dev_rating": split.dev_rating,
        "test_rating": split.test_rating,
        "dev_timestamp": split.dev_timestamp,
        "test_timestamp": split.test_timestamp,
    }
    arrays.update({k: v for k, v in optional.items() if v is not None})
    write_container(path, header, arrays)


def load_split(path):
    from .data import Dataset, SplitDataset

    header, a = read_container(path)
    if header.get("kind") != "split":
        raise SnapshotError(f"{path}: expected a split snapshot, found {header.get('kind')!r}")
    try:
        return _split_from(header, a, Dataset, SplitDataset)
    except KeyError as exc:
        raise SnapshotError(f"{path}: missing field {exc}") from None


def _split_from(header, a, Dataset, SplitDataset):
    train = Dataset(
        num_users=header["num_users"],
        num_items=header["num_items"],
        indptr=a["train.indptr"],
        indices=a["train.indices"],
        user_keys=tuple(header["user_keys"]),
        item_keys=tuple(header["item_keys"]),
        order=a["train.order"],
        ratings=a.get("train.ratings"),
        timestamps=a.get("train.timestamps"),
    )
    return SplitDataset(
        train=train,
        dev_item=a["dev_item"],
        test_item=a["test_item"],
        eval_negatives=a["eval_negatives"],
        dev_rating=a.get("dev_rating"),
        test_rating=a.get("test_rating"),
        dev_timestamp=a.get("dev_timestamp"),
        test_timestamp=a.get("test_timestamp"),
        seed=header.get("seed"),
    )


# ---------------------------------------------------------------------------
# parameters


def params_header(params) -> dict:
    return {
        "kind": "params",
        "model_kind": params.kind,
        "d": params.dim,
        "N": params.num_slices,
        "num_users": params.num_users,
        "num_items": params.num_items,
    }


def save_params(path, params, dtype=np.float64, extra_header=None) -> None:
    """Write a parameter snapshot. ``dtype=np.float32`` gives a compact inference copy."""
    header = params_header(params)
    header["dtype"] = np.dtype(dtype).str
    if extra_header:
        header.update(extra_header)
    arrays = {name: np.asarray(arr, dtype=dtype) for name, arr in params.blocks().items()}
    write_container(path, header, arrays)


def load_params(path):
    from .dispatch import params_from_blocks

    header, arrays = read_container(path)
    if header.get("kind") not in ("params", "checkpoint"):
        raise SnapshotError(f"{path}: expected a parameter snapshot, found {header.get('kind')!r}")
    blocks = {k: v.astype(np.float64) for k, v in arrays.items() if "." not in k}
    try:
        params = params_from_blocks(header["model_kind"], blocks)
    except KeyError as exc:
        raise SnapshotError(f"{path}: missing field {exc}") from None
    if (params.dim, params.num_users, params.num_items) != (header["d"], header["num_users"], header["num_items"]):
        raise SnapshotError(f"{path}: header does not match array shapes")
    return params
