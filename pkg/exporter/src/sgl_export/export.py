"""Checkpoint and prediction export into the neutral toolkit formats."""

from __future__ import annotations

import fnmatch
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .archive_writer import write_tensor_archive

PROB_MAX = 65535


class ExportError(Exception):
    pass


@dataclass
class ExportSpec:
    """What to export and where the encoder/decoder boundary lies.

    ``exclude`` holds glob patterns for buffers intentionally left out
    (e.g. ``*num_batches_tracked``); everything excluded is listed in the
    archive metadata. Non-floating parameters that are not excluded are an
    error.
    """

    source: str | Path
    model_id: str
    output: str | Path
    iteration: int = 0
    hyperparam_id: str = ""
    encoder_prefixes: list[str] = field(default_factory=list)
    decoder_prefixes: list[str] = field(default_factory=list)
    exclude: list[str] = field(default_factory=list)


def _load_state_dict(path: str | Path) -> dict[str, torch.Tensor]:
    try:
        obj = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise ExportError(f"{path}: cannot load checkpoint: {exc}") from exc
    for key in ("state_dict", "model_state_dict", "model"):
        if isinstance(obj, dict) and key in obj and isinstance(obj[key], dict):
            obj = obj[key]
            break
    if not isinstance(obj, dict) or not all(isinstance(v, torch.Tensor) for v in obj.values()):
        raise ExportError(f"{path}: checkpoint is not a state dict of tensors")
    return obj


def export_checkpoint(spec: ExportSpec) -> Path:
    """Write a tensor archive; re-exporting the same checkpoint is byte-identical."""
    state = _load_state_dict(spec.source)

    both = [
        name
        for name in state
        if any(name.startswith(p) for p in spec.encoder_prefixes)
        and any(name.startswith(p) for p in spec.decoder_prefixes)
    ]
    if both:
        raise ExportError(f"prefix rules overlap on tensors: {sorted(both)}")

    excluded = sorted(
        name for name in state if any(fnmatch.fnmatch(name, pat) for pat in spec.exclude)
    )
    remaining = {name: t for name, t in state.items() if name not in set(excluded)}
    non_float = sorted(name for name, t in remaining.items() if not t.is_floating_point())
    if non_float:
        raise ExportError(
            f"non-float parameters cannot be exported (exclude them explicitly): {non_float}"
        )

    tensors = {
        name: t.detach().to(torch.float32).numpy().copy()
        for name, t in remaining.items()
    }
    scalar = sorted(name for name, arr in tensors.items() if arr.ndim == 0)
    for name in scalar:
        tensors[name] = tensors[name].reshape(1)

    unassigned = sorted(
        name
        for name in tensors
        if not any(name.startswith(p) for p in spec.encoder_prefixes + spec.decoder_prefixes)
    )
    metadata = {
        "model_id": spec.model_id,
        "iteration": spec.iteration,
        "hyperparam_id": spec.hyperparam_id,
        "role_prefixes": {
            "encoder": sorted(spec.encoder_prefixes),
            "decoder": sorted(spec.decoder_prefixes),
        },
    }
    if excluded:
        metadata["excluded_buffers"] = excluded
    if unassigned and (spec.encoder_prefixes or spec.decoder_prefixes):
        metadata["unassigned_tensors"] = unassigned
    if scalar:
        metadata["reshaped_scalars"] = scalar

    out = Path(spec.output)
    write_tensor_archive(tensors, metadata, out)
    return out


def export_predictions(in_dir: str | Path, out_dir: str | Path) -> Path:
    """Quantize per-image model outputs to 16-bit probability PNGs.

    Inputs are ``<image_id>.<LESION>.npy`` float arrays; values outside
    [0, 1] are clamped and counted in the manifest fragment.
    """
    in_dir, out_dir = Path(in_dir), Path(out_dir)
    paths = sorted(in_dir.glob("*.npy"))
    if not paths:
        raise ExportError(f"no .npy prediction files under {in_dir}")
    out_dir.mkdir(parents=True, exist_ok=True)

    images: dict[str, dict[str, str]] = {}
    clamped = 0
    for path in paths:
        parts = path.stem.split(".")
        if len(parts) != 2:
            raise ExportError(f"{path}: expected <image_id>.<LESION>.npy")
        image_id, lesion = parts
        probs = np.asarray(np.load(path), dtype=np.float64)
        if probs.ndim != 2:
            raise ExportError(f"{path}: predictions must be 2D, got {probs.ndim} dims")
        clamped += int(np.count_nonzero((probs < 0.0) | (probs > 1.0)))
        probs = np.clip(probs, 0.0, 1.0)
        quantized = np.round(probs * PROB_MAX).astype(np.uint16)
        filename = f"{image_id}.{lesion}.prob.png"
        Image.fromarray(quantized).save(out_dir / filename)
        images.setdefault(image_id, {})[lesion] = filename

    fragment = {
        "images": [
            {"image_id": image_id, "predictions": dict(sorted(preds.items()))}
            for image_id, preds in sorted(images.items())
        ],
        "clamped_pixels": clamped,
    }
    fragment_path = out_dir / "predictions.manifest.json"
    fragment_path.write_text(json.dumps(fragment, indent=2, sort_keys=True) + "\n")
    return fragment_path
