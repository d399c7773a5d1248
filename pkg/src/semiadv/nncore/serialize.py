"""Weights container.

Layout::

    b"SANW"                      4-byte magic
    uint32 little-endian         byte length L of the header
    L bytes UTF-8 JSON header    {"format_version", "entries", "seed", "config_hash", "meta"}
    float32 little-endian blobs  one per entry, in header order, C order

``entries`` is a list of ``{"name", "shape", "trainable"}``. ``meta`` holds
free-form tags such as ``subnetwork`` ("I", "II", "III") and ``phase``.
"""
import json
import struct
from pathlib import Path

import numpy as np

from .tensor import ParamStore, Tensor

MAGIC = b"SANW"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def encode(store, seed=None, config_hash=None):
    meta = dict(store.meta)
    header = {
        "format_version": FORMAT_VERSION,
        "entries": [
            {"name": k, "shape": list(t.shape), "trainable": store.is_trainable(k)}
            for k, t in store.items()
        ],
        "seed": seed if seed is not None else meta.pop("seed", None),
        "config_hash": config_hash if config_hash is not None else meta.pop("config_hash", None),
        "meta": meta,
    }
    meta.pop("seed", None)
    meta.pop("config_hash", None)
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", len(hbytes)), hbytes]
    for _, t in store.items():
        parts.append(np.ascontiguousarray(t.data, dtype="<f4").tobytes())
    return b"".join(parts)


def decode(buf, subnetwork=None):
    if len(buf) < 8 or buf[:4] != MAGIC:
        raise CheckpointError("not a weights container (bad magic)")
    (hlen,) = struct.unpack("<I", buf[4:8])
    if 8 + hlen > len(buf):
        raise CheckpointError("truncated header")
    try:
        header = json.loads(buf[8:8 + hlen].decode("utf-8"))
        entries = header["entries"]
        version = header["format_version"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise CheckpointError(f"corrupt header: {exc}") from None
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported format version {version} (expected {FORMAT_VERSION})")
    meta = dict(header.get("meta") or {})
    if subnetwork is not None and meta.get("subnetwork") != subnetwork:
        raise CheckpointError(
            f"checkpoint holds subnetwork {meta.get('subnetwork')!r}, expected {subnetwork!r}"
        )
    if header.get("seed") is not None:
        meta["seed"] = header["seed"]
    if header.get("config_hash") is not None:
        meta["config_hash"] = header["config_hash"]

    store = ParamStore(meta)
    offset = 8 + hlen
    for e in entries:
        shape = tuple(int(s) for s in e["shape"])
        nbytes = 4 * int(np.prod(shape, dtype=np.int64))
        if offset + nbytes > len(buf):
            raise CheckpointError(f"truncated data for entry {e['name']!r}")
        arr = np.frombuffer(buf, dtype="<f4", count=nbytes // 4, offset=offset)
        store.add(e["name"], Tensor(arr.astype(np.float32).reshape(shape)), trainable=e["trainable"])
        offset += nbytes
    if offset != len(buf):
        raise CheckpointError(f"{len(buf) - offset} trailing bytes after last entry")
    return store


def save_weights(store, path, seed=None, config_hash=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode(store, seed=seed, config_hash=config_hash))
    return path


def load_weights(path, subnetwork=None):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return decode(path.read_bytes(), subnetwork=subnetwork)
