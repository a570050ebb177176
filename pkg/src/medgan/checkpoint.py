"""Binary checkpoint format.

::

    offset  size  field
    0       4     magic b"MGCK"
    4       4     format version, uint32 little-endian (currently 1)
    8       8     metadata length M, uint64 little-endian
    16      M     metadata, UTF-8 JSON (sorted keys, no whitespace)
    16+M    ...   tensors as little-endian float32, in metadata["tensors"] order

``metadata["tensors"]`` lists ``{"store", "name", "shape"}`` for every
tensor; stores appear in ``metadata["stores"]`` order (generator stages
``G0..G{n-1}`` then ``D``).
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .networks import ParamStore

MAGIC = b"MGCK"
VERSION = 1
_HEADER = struct.Struct("<4sIQ")


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    metadata: dict
    stores: dict  # store name -> ParamStore

    @property
    def generator(self) -> list[ParamStore]:
        return [self.stores[k] for k in self.metadata["stores"] if k.startswith("G")]

    @property
    def discriminator(self) -> ParamStore | None:
        return self.stores.get("D")


def encode(metadata: dict, stores: dict) -> bytes:
    meta = dict(metadata)
    meta["stores"] = list(stores)
    meta["tensors"] = [
        {"store": s, "name": k, "shape": list(v.shape)} for s, store in stores.items() for k, v in store.items()
    ]
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [_HEADER.pack(MAGIC, VERSION, len(blob)), blob]
    for store in stores.values():
        for v in store.values():
            parts.append(np.ascontiguousarray(v, dtype="<f4").tobytes())
    return b"".join(parts)


def decode(data: bytes, source: str = "<bytes>") -> Checkpoint:
    if len(data) < _HEADER.size:
        raise CheckpointError(f"{source}: too short for a checkpoint header")
    magic, version, mlen = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError(f"{source}: bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointError(f"{source}: unsupported version {version}")
    end = _HEADER.size + mlen
    if end > len(data):
        raise CheckpointError(f"{source}: metadata length {mlen} runs past end of file")
    try:
        meta = json.loads(data[_HEADER.size:end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{source}: corrupt metadata ({e})") from None
    stores = {name: ParamStore() for name in meta["stores"]}
    pos = end
    for t in meta["tensors"]:
        shape = tuple(t["shape"])
        nbytes = 4 * int(np.prod(shape, dtype=np.int64))
        if pos + nbytes > len(data):
            raise CheckpointError(f"{source}: truncated tensor data at {t['store']}/{t['name']}")
        stores[t["store"]][t["name"]] = np.frombuffer(data, "<f4", nbytes // 4, pos).reshape(shape).astype(np.float32)
        pos += nbytes
    if pos != len(data):
        raise CheckpointError(f"{source}: {len(data) - pos} trailing bytes")
    return Checkpoint(meta, stores)


def save(path, metadata: dict, stores: dict) -> None:
    """Atomic write: a crash mid-save never clobbers the previous checkpoint."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode(metadata, stores))
    os.replace(tmp, path)


def load(path) -> Checkpoint:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"{path}: cannot read ({e.strerror})") from None
    return decode(data, str(path))
