"""Standalone writer for the seg-genlab tensor-archive format.

Layout: magic "SGLB1\\n", an 8-byte little-endian unsigned manifest length,
a UTF-8 JSON manifest (manifest_version, metadata, tensors), then raw
little-endian f32 data. Offsets are relative to the data section start.
Serialization is deterministic: tensors sorted by name, packed
contiguously, manifest keys sorted.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"SGLB1\n"
MANIFEST_VERSION = 1


def write_tensor_archive(tensors: dict[str, np.ndarray], metadata: dict, path: str | Path) -> None:
    records = {}
    offset = 0
    ordered = {name: tensors[name] for name in sorted(tensors)}
    for name, tensor in ordered.items():
        if tensor.dtype != np.float32:
            raise ValueError(f"tensor {name!r} must be float32 before writing")
        if tensor.ndim == 0 or any(d <= 0 for d in tensor.shape):
            raise ValueError(f"tensor {name!r} has non-positive shape {tuple(tensor.shape)}")
        nbytes = 4 * int(np.prod(tensor.shape))
        records[name] = {
            "dtype": "f32",
            "shape": [int(d) for d in tensor.shape],
            "offset": offset,
            "nbytes": nbytes,
        }
        offset += nbytes
    manifest = {
        "manifest_version": MANIFEST_VERSION,
        "metadata": metadata,
        "tensors": records,
    }
    payload = json.dumps(manifest, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(payload.encode("utf-8"))))
        fh.write(payload.encode("utf-8"))
        for tensor in ordered.values():
            fh.write(np.ascontiguousarray(tensor, dtype="<f4").tobytes())
