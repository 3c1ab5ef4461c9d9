"""Framework-neutral checkpoint container with bit-exact serialization.

File layout: the magic bytes ``SGLB1\\n``, an 8-byte little-endian unsigned
manifest length, a UTF-8 JSON manifest (``manifest_version``, ``metadata``,
``tensors``), then a data section of raw little-endian IEEE-754 f32 values.
Tensor offsets are relative to the start of the data section.

Archives are immutable after load and safe to share across readers.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    FormatError,
    IntegrityError,
    MissingRoleMapError,
    UnsupportedDtypeError,
    ValidationError,
)

MAGIC = b"SGLB1\n"
MANIFEST_VERSION = 1
ROLES = ("encoder", "decoder")
SCOPES = ("encoder", "decoder", "full")

_LEN_FMT = "<Q"
_LEN_SIZE = struct.calcsize(_LEN_FMT)


@dataclass
class ArchiveMetadata:
    """Identifies the trajectory point and configuration of a checkpoint.

    ``iteration`` is the training step at which the weights were taken and
    ``hyperparam_id`` names the hyperparameter configuration of the run.
    ``role_prefixes`` maps "encoder"/"decoder" to tensor-name prefixes; the
    exporter declares the boundary, it is never inferred. ``extra`` carries
    additional manifest keys (averaging provenance, exporter warnings) and
    round-trips verbatim.
    """

    model_id: str
    iteration: int = 0
    hyperparam_id: str = ""
    role_prefixes: dict[str, list[str]] | None = None
    extra: dict = field(default_factory=dict)

    def to_json_obj(self) -> dict:
        obj = {
            "model_id": self.model_id,
            "iteration": self.iteration,
            "hyperparam_id": self.hyperparam_id,
        }
        if self.role_prefixes is not None:
            obj["role_prefixes"] = {r: list(p) for r, p in sorted(self.role_prefixes.items())}
        obj.update(self.extra)
        return obj

    @classmethod
    def from_json_obj(cls, obj: dict) -> "ArchiveMetadata":
        known = {"model_id", "iteration", "hyperparam_id", "role_prefixes"}
        prefixes = obj.get("role_prefixes")
        if prefixes is not None:
            prefixes = {str(r): [str(p) for p in ps] for r, ps in prefixes.items()}
        return cls(
            model_id=str(obj.get("model_id", "")),
            iteration=int(obj.get("iteration", 0)),
            hyperparam_id=str(obj.get("hyperparam_id", "")),
            role_prefixes=prefixes,
            extra={k: v for k, v in obj.items() if k not in known},
        )


@dataclass(eq=False)
class TensorArchive:
    """Named f32 tensors plus trajectory metadata, in canonical name order."""

    tensors: dict[str, np.ndarray]
    metadata: ArchiveMetadata
    manifest_version: int = MANIFEST_VERSION

    def __post_init__(self):
        # Canonical order: sorted by name. Makes serialization deterministic
        # and round trips order-exact.
        self.tensors = {name: self.tensors[name] for name in sorted(self.tensors)}

    def names(self) -> list[str]:
        return list(self.tensors)

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {name: tuple(t.shape) for name, t in self.tensors.items()}


def validate_archive(archive: TensorArchive) -> None:
    """Check every structural invariant; raise before any bytes are written."""
    if not isinstance(archive.manifest_version, int) or archive.manifest_version < 1:
        raise ValidationError("manifest_version must be a positive integer")
    for name, tensor in archive.tensors.items():
        if not isinstance(name, str) or not name:
            raise ValidationError("tensor names must be non-empty strings")
        if not isinstance(tensor, np.ndarray):
            raise ValidationError(f"tensor {name!r} is not an ndarray")
        if tensor.dtype != np.float32:
            raise UnsupportedDtypeError(f"tensor {name!r} has dtype {tensor.dtype}, only f32 is supported")
        if tensor.ndim == 0 or any(d <= 0 for d in tensor.shape):
            raise ValidationError(f"tensor {name!r} has non-positive shape {tuple(tensor.shape)}")
    md = archive.metadata
    if md.iteration < 0:
        raise ValidationError("iteration must be non-negative")
    if md.role_prefixes is not None:
        unknown = set(md.role_prefixes) - set(ROLES)
        if unknown:
            raise ValidationError(f"unknown roles in role_prefixes: {sorted(unknown)}")
        _check_role_disjointness(archive)


def _check_role_disjointness(archive: TensorArchive) -> None:
    seen: dict[str, str] = {}
    for role in ROLES:
        for name in _names_for_role(archive, role):
            if name in seen and seen[name] != role:
                raise ValidationError(
                    f"tensor {name!r} matches both {seen[name]} and {role} prefixes"
                )
            seen[name] = role


def _names_for_role(archive: TensorArchive, role: str) -> set[str]:
    prefixes = (archive.metadata.role_prefixes or {}).get(role, [])
    return {name for name in archive.tensors if any(name.startswith(p) for p in prefixes)}


def partition_by_role(archive: TensorArchive, scope: str) -> set[str]:
    """Tensor names belonging to ``scope`` ("encoder", "decoder" or "full").

    "full" selects every tensor. The role scopes require ``role_prefixes``
    in the metadata; names covered by no prefix belong to neither role.
    """
    if scope not in SCOPES:
        raise ValidationError(f"unknown scope {scope!r}, expected one of {SCOPES}")
    if scope == "full":
        return set(archive.tensors)
    if archive.metadata.role_prefixes is None:
        raise MissingRoleMapError(
            f"scope {scope!r} requires role_prefixes in the archive metadata"
        )
    return _names_for_role(archive, scope)


def write_archive(archive: TensorArchive, path: str | Path) -> None:
    """Serialize deterministically: same archive, byte-identical file."""
    validate_archive(archive)
    records = {}
    offset = 0
    for name, tensor in archive.tensors.items():  # canonical (sorted) order
        nbytes = 4 * int(np.prod(tensor.shape))
        records[name] = {
            "dtype": "f32",
            "shape": [int(d) for d in tensor.shape],
            "offset": offset,
            "nbytes": nbytes,
        }
        offset += nbytes
    manifest = {
        "manifest_version": archive.manifest_version,
        "metadata": archive.metadata.to_json_obj(),
        "tensors": records,
    }
    manifest_bytes = json.dumps(
        manifest, sort_keys=True, separators=(",", ":"), ensure_ascii=False
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack(_LEN_FMT, len(manifest_bytes)))
        fh.write(manifest_bytes)
        for tensor in archive.tensors.values():
            fh.write(np.ascontiguousarray(tensor, dtype="<f4").tobytes())


def read_archive(path: str | Path) -> TensorArchive:
    """Load and fully validate an archive file."""
    blob = Path(path).read_bytes()
    if len(blob) < len(MAGIC) + _LEN_SIZE:
        raise FormatError(f"{path}: file shorter than the fixed header")
    if blob[: len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: bad magic bytes, not a tensor archive")
    (manifest_len,) = struct.unpack_from(_LEN_FMT, blob, len(MAGIC))
    data_start = len(MAGIC) + _LEN_SIZE + manifest_len
    if data_start > len(blob):
        raise FormatError(f"{path}: declared manifest length exceeds file size")
    try:
        manifest = json.loads(blob[len(MAGIC) + _LEN_SIZE : data_start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: manifest is not valid UTF-8 JSON: {exc}") from exc
    if not isinstance(manifest, dict) or "tensors" not in manifest:
        raise FormatError(f"{path}: manifest lacks a tensors map")

    data = blob[data_start:]
    tensors: dict[str, np.ndarray] = {}
    extents: list[tuple[int, int, str]] = []
    for name, rec in manifest["tensors"].items():
        if not name:
            raise FormatError(f"{path}: empty tensor name in manifest")
        dtype = rec.get("dtype")
        if dtype != "f32":
            raise UnsupportedDtypeError(f"{path}: tensor {name!r} declares dtype {dtype!r}")
        shape = rec.get("shape")
        if not isinstance(shape, list) or not shape or any(
            not isinstance(d, int) or d <= 0 for d in shape
        ):
            raise FormatError(f"{path}: tensor {name!r} has invalid shape {shape!r}")
        offset, nbytes = rec.get("offset"), rec.get("nbytes")
        if not isinstance(offset, int) or not isinstance(nbytes, int) or offset < 0:
            raise FormatError(f"{path}: tensor {name!r} has invalid extent fields")
        expected = 4 * int(np.prod(shape))
        if nbytes != expected:
            raise IntegrityError(
                f"{path}: tensor {name!r} declares nbytes={nbytes}, shape implies {expected}"
            )
        if offset % 4 != 0:
            raise IntegrityError(f"{path}: tensor {name!r} offset {offset} is not 4-byte aligned")
        if offset + nbytes > len(data):
            raise IntegrityError(f"{path}: tensor {name!r} extent ends beyond the data section")
        extents.append((offset, offset + nbytes, name))
        arr = np.frombuffer(data, dtype="<f4", count=expected // 4, offset=offset)
        arr = arr.reshape(shape).copy()
        arr.flags.writeable = False
        tensors[name] = arr

    extents.sort()
    for (_, prev_end, prev_name), (start, _, name) in zip(extents, extents[1:]):
        if start < prev_end:
            raise IntegrityError(
                f"{path}: tensor extents overlap ({prev_name!r} and {name!r})"
            )

    metadata = ArchiveMetadata.from_json_obj(manifest.get("metadata", {}))
    archive = TensorArchive(
        tensors=tensors,
        metadata=metadata,
        manifest_version=int(manifest.get("manifest_version", 0)),
    )
    try:
        validate_archive(archive)
    except UnsupportedDtypeError:
        raise
    except ValidationError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    return archive


def archives_equal(a: TensorArchive, b: TensorArchive) -> bool:
    """Field-for-field equality with bit-exact tensor comparison."""
    if a.manifest_version != b.manifest_version or a.metadata != b.metadata:
        return False
    if a.names() != b.names():
        return False
    return all(
        a.tensors[n].shape == b.tensors[n].shape
        and a.tensors[n].tobytes() == b.tensors[n].tobytes()
        for n in a.tensors
    )
