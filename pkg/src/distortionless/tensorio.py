"""Named-tensor container used for checkpoints and feature dumps.

Layout (little-endian)::

    magic  b"DLTC"
    u32    format version
    u64    header length in bytes
    header UTF-8 JSON {"meta": ..., "tensors": [{name, dtype, shape, offset, nbytes}]}
    data   row-major tensor bytes, concatenated in header order
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"DLTC"
VERSION = 1


class ContainerError(ValueError):
    pass


def dumps(tensors: dict, meta: dict | None = None) -> bytes:
    entries, blobs, offset = [], [], 0
    for name, value in tensors.items():
        arr = np.ascontiguousarray(value)
        arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = arr.tobytes()
        entries.append({
            "name": name,
            "dtype": arr.dtype.str.lstrip("<|="),
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": len(raw),
        })
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": meta or {}, "tensors": entries}, sort_keys=True).encode()
    return MAGIC + struct.pack("<IQ", VERSION, len(header)) + header + b"".join(blobs)


def loads(data: bytes):
    if data[:4] != MAGIC:
        raise ContainerError("not a tensor container")
    version, hlen = struct.unpack("<IQ", data[4:16])
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version}")
    header = json.loads(data[16 : 16 + hlen])
    base = 16 + hlen
    tensors = {}
    for e in header["tensors"]:
        start = base + e["offset"]
        buf = data[start : start + e["nbytes"]]
        tensors[e["name"]] = np.frombuffer(buf, dtype="<" + e["dtype"]).reshape(e["shape"]).copy()
    return tensors, header["meta"]


def save(path, tensors: dict, meta: dict | None = None) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(dumps(tensors, meta))


def load(path):
    return loads(Path(path).read_bytes())


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def save_module(path, module, meta: dict) -> None:
    tensors = {k: v.detach().cpu().numpy() for k, v in module.state_dict().items()}
    save(path, tensors, meta)


def load_state(path):
    import torch

    tensors, meta = load(path)
    return {k: torch.from_numpy(v) for k, v in tensors.items()}, meta
