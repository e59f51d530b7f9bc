"""Versioned checkpoint blobs: magic, JSON header, raw little-endian tensors.

Layout::

    b"FLSPCKPT" | u32 format version | u64 header length | header JSON | tensor bytes

The header records the model kind, its config, the value mode
(linear/tonemapped), free-form metadata and an index of tensors.
"""

import hashlib
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np
import torch

from .errors import DatasetLoadError, MissingCheckpointError

MAGIC = b"FLSPCKPT"
FORMAT_VERSION = 1

_DTYPES = {"float32": torch.float32, "float64": torch.float64, "int64": torch.int64}


def atomic_write_bytes(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text):
    atomic_write_bytes(path, text.encode("utf-8"))


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def save_checkpoint(path, kind, config, state_dict, mode="linear", meta=None):
    index, blobs, offset = [], [], 0
    for name in sorted(state_dict):
        t = state_dict[name].detach().cpu().contiguous()
        arr = t.numpy().astype(t.numpy().dtype.newbyteorder("<"), copy=False)
        raw = arr.tobytes()
        index.append({"name": name, "dtype": str(t.dtype).replace("torch.", ""),
                      "shape": list(t.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = {"format_version": FORMAT_VERSION, "kind": kind, "config": config, "mode": mode,
              "meta": meta or {}, "tensors": index}
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    data = MAGIC + struct.pack("<IQ", FORMAT_VERSION, len(hbytes)) + hbytes + b"".join(blobs)
    atomic_write_bytes(path, data)
    return file_sha256(path)


def read_checkpoint(path):
    """Return ``(header, state_dict)``."""
    path = Path(path)
    if not path.exists():
        raise MissingCheckpointError(f"checkpoint not found: {path}")
    data = path.read_bytes()
    if data[:8] != MAGIC:
        raise DatasetLoadError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack("<IQ", data[8:20])
    if version != FORMAT_VERSION:
        raise DatasetLoadError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(data[20:20 + hlen].decode("utf-8"))
    base = 20 + hlen
    state = {}
    for e in header["tensors"]:
        dt = _DTYPES[e["dtype"]]
        np_dt = np.dtype(str(dt).replace("torch.", "")).newbyteorder("<")
        buf = data[base + e["offset"]: base + e["offset"] + e["nbytes"]]
        arr = np.frombuffer(buf, dtype=np_dt).reshape(e["shape"]).astype(np_dt.newbyteorder("="))
        state[e["name"]] = torch.from_numpy(arr.copy())
    return header, state
