"""Binary checkpoint format.

Layout (little-endian)::

    b"PKGC" | u32 version
    u32 len | config JSON (UTF-8, sorted keys)
    u32 len | metadata JSON
    u32 count
    count x ( u16 name_len | name | u8 ndim | ndim x u32 dims | float32 values )

Parameters are held as float64 in memory and stored as float32, so a
save -> load -> save cycle reproduces the file byte for byte.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"PKGC"
VERSION = 1


@dataclass
class ModelCheckpoint:
    config: dict
    tensors: dict                      # name -> float32 ndarray, insertion ordered
    metadata: dict = field(default_factory=dict)

    def to_bytes(self):
        parts = [MAGIC, struct.pack("<I", VERSION)]
        for blob in (self.config, self.metadata):
            raw = json.dumps(blob, sort_keys=True, separators=(",", ":")).encode("utf-8")
            parts += [struct.pack("<I", len(raw)), raw]
        parts.append(struct.pack("<I", len(self.tensors)))
        for name, arr in self.tensors.items():
            arr = np.ascontiguousarray(arr, dtype="<f4")
            raw = name.encode("utf-8")
            parts += [struct.pack("<H", len(raw)), raw, struct.pack("<B", arr.ndim),
                      struct.pack(f"<{arr.ndim}I", *arr.shape), arr.tobytes()]
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, blob):
        pos = 0

        def take(n, what):
            nonlocal pos
            if pos + n > len(blob):
                raise FormatError(f"checkpoint truncated while reading {what}", pos)
            chunk = blob[pos:pos + n]
            pos += n
            return chunk

        if take(4, "magic") != MAGIC:
            raise FormatError("not a checkpoint (bad magic)", 0)
        (version,) = struct.unpack("<I", take(4, "version"))
        if version != VERSION:
            raise FormatError(f"checkpoint version {version} unsupported (expected {VERSION})", 4)
        blobs = []
        for what in ("config", "metadata"):
            (n,) = struct.unpack("<I", take(4, what))
            start = pos
            try:
                blobs.append(json.loads(take(n, what).decode("utf-8")))
            except ValueError as exc:
                raise FormatError(f"bad {what} JSON: {exc}", start) from None
        (count,) = struct.unpack("<I", take(4, "tensor count"))
        tensors = {}
        for _ in range(count):
            (n,) = struct.unpack("<H", take(2, "name length"))
            name = take(n, "name").decode("utf-8")
            (ndim,) = struct.unpack("<B", take(1, "ndim"))
            shape = struct.unpack(f"<{ndim}I", take(4 * ndim, "shape"))
            size = int(np.prod(shape)) if ndim else 1
            tensors[name] = np.frombuffer(take(4 * size, name), dtype="<f4").reshape(shape).copy()
        if pos != len(blob):
            raise FormatError("trailing bytes after checkpoint", pos)
        return cls(blobs[0], tensors, blobs[1])

    def save(self, path):
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path):
        return cls.from_bytes(Path(path).read_bytes())


def state_dict(module):
    return {name: p.data.astype("<f4") for name, p in module.named_parameters()}


def load_state(module, tensors):
    params = dict(module.named_parameters())
    missing = set(params) - set(tensors)
    extra = set(tensors) - set(params)
    if missing or extra:
        raise FormatError(f"checkpoint parameters mismatch: missing={sorted(missing)[:3]} "
                          f"unexpected={sorted(extra)[:3]}")
    for name, p in params.items():
        arr = tensors[name]
        if arr.shape != p.shape:
            raise FormatError(f"{name}: checkpoint shape {arr.shape} != model shape {p.shape}")
        p.data[...] = arr.astype(np.float64)
