"""Masks, probability maps and the deterministic preprocessing geometry.

File conventions: masks are 8-bit grayscale PNGs named
``<image_id>.<LESION>.png`` (nonzero = lesion); probability maps are 16-bit
grayscale PNGs named ``<image_id>.<LESION>.prob.png`` with p = value/65535;
fundus images are standard 8-bit RGB PNGs.

All geometry here is deterministic: background cropping, aspect-preserving
resize-and-pad to a square target, and grid patch extraction. Random
augmentation belongs to training and is not provided.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import cv2
import numpy as np

from .errors import (
    EmptyContentError,
    FormatError,
    NamingError,
    SizeError,
    TransformError,
    ValidationError,
)

LESION_CODES = ("EX", "CWS", "HE", "MA")
PROB_MAX = 65535  # 16-bit quantization ceiling
DEFAULT_TARGET_SIZE = 1536
DEFAULT_BACKGROUND_THRESHOLD = 10


@dataclass
class LesionMask:
    image_id: str
    lesion: str
    bits: np.ndarray  # bool, (height, width)

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]


@dataclass
class ProbabilityMap:
    image_id: str
    lesion: str
    probs: np.ndarray  # float64 in [0, 1], (height, width)

    @property
    def width(self) -> int:
        return self.probs.shape[1]

    @property
    def height(self) -> int:
        return self.probs.shape[0]


@dataclass
class FundusImage:
    image_id: str
    pixels: np.ndarray  # uint8, (height, width, 3)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass
class FrameTransform:
    """Crop rectangle plus the scale/pad mapping into a square target frame."""

    source_width: int
    source_height: int
    crop_left: int
    crop_top: int
    crop_width: int
    crop_height: int
    scale: float
    pad_x: int
    pad_y: int
    target_size: int

    @property
    def scaled_width(self) -> int:
        return int(round(self.crop_width * self.scale))

    @property
    def scaled_height(self) -> int:
        return int(round(self.crop_height * self.scale))

    @classmethod
    def identity(cls, size: int) -> "FrameTransform":
        return cls(size, size, 0, 0, size, size, 1.0, 0, 0, size)


# --- file naming -------------------------------------------------------------

def _check_lesion(code: str, path) -> str:
    if code not in LESION_CODES:
        raise NamingError(f"{path}: unknown lesion code {code!r}, expected one of {LESION_CODES}")
    return code


def parse_mask_name(path: str | Path) -> tuple[str, str]:
    parts = Path(path).name.split(".")
    if len(parts) != 3 or parts[-1] != "png":
        raise NamingError(f"{path}: mask files must be named <image_id>.<LESION>.png")
    return parts[0], _check_lesion(parts[1], path)


def parse_prob_name(path: str | Path) -> tuple[str, str]:
    parts = Path(path).name.split(".")
    if len(parts) != 4 or parts[-2] != "prob" or parts[-1] != "png":
        raise NamingError(
            f"{path}: probability maps must be named <image_id>.<LESION>.prob.png"
        )
    return parts[0], _check_lesion(parts[1], path)


def mask_filename(image_id: str, lesion: str) -> str:
    return f"{image_id}.{lesion}.png"


def prob_filename(image_id: str, lesion: str) -> str:
    return f"{image_id}.{lesion}.prob.png"


# --- load / store ------------------------------------------------------------

def _imread(path: str | Path) -> np.ndarray:
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise FormatError(f"{path}: not a readable image file")
    return raw


def load_mask(path: str | Path) -> LesionMask:
    image_id, lesion = parse_mask_name(path)
    raw = _imread(path)
    if raw.ndim != 2:
        raise FormatError(f"{path}: masks must be single-channel, got {raw.ndim} dims")
    if raw.dtype != np.uint8:
        raise FormatError(f"{path}: masks must be 8-bit, got {raw.dtype}")
    return LesionMask(image_id=image_id, lesion=lesion, bits=raw > 0)


def save_mask(mask: LesionMask, directory: str | Path) -> Path:
    path = Path(directory) / mask_filename(mask.image_id, mask.lesion)
    cv2.imwrite(str(path), mask.bits.astype(np.uint8) * 255)
    return path


def load_probability_map(path: str | Path) -> ProbabilityMap:
    image_id, lesion = parse_prob_name(path)
    raw = _imread(path)
    if raw.ndim != 2:
        raise FormatError(f"{path}: probability maps must be single-channel, got {raw.ndim} dims")
    if raw.dtype != np.uint16:
        raise FormatError(f"{path}: probability maps must be 16-bit, got {raw.dtype}")
    return ProbabilityMap(
        image_id=image_id, lesion=lesion, probs=raw.astype(np.float64) / PROB_MAX
    )


def save_probability_map(pmap: ProbabilityMap, directory: str | Path) -> Path:
    probs = np.asarray(pmap.probs, dtype=np.float64)
    if probs.min() < 0.0 or probs.max() > 1.0:
        raise ValidationError(f"{pmap.image_id}: probabilities outside [0, 1]")
    quantized = np.round(probs * PROB_MAX).astype(np.uint16)
    path = Path(directory) / prob_filename(pmap.image_id, pmap.lesion)
    cv2.imwrite(str(path), quantized)
    return path


def load_image(path: str | Path) -> FundusImage:
    raw = _imread(path)
    if raw.ndim != 3 or raw.shape[2] != 3 or raw.dtype != np.uint8:
        raise FormatError(f"{path}: fundus images must be 8-bit 3-channel")
    return FundusImage(image_id=Path(path).stem, pixels=cv2.cvtColor(raw, cv2.COLOR_BGR2RGB))


# --- geometry ----------------------------------------------------------------

def compute_crop(
    image: FundusImage,
    background_threshold: int = DEFAULT_BACKGROUND_THRESHOLD,
    target_size: int = DEFAULT_TARGET_SIZE,
) -> FrameTransform:
    """Tight content bounding box, mapped centered into the square target.

    Content is any pixel whose max-channel intensity exceeds the threshold;
    the crop is scaled aspect-preserving so its longer side fills the target,
    then centered with zero padding.
    """
    content = image.pixels.max(axis=2) > background_threshold
    rows = np.flatnonzero(content.any(axis=1))
    cols = np.flatnonzero(content.any(axis=0))
    if rows.size == 0:
        raise EmptyContentError(
            f"{image.image_id}: no pixel above background threshold {background_threshold}"
        )
    top, bottom = int(rows[0]), int(rows[-1])
    left, right = int(cols[0]), int(cols[-1])
    crop_w, crop_h = right - left + 1, bottom - top + 1
    scale = target_size / max(crop_w, crop_h)
    scaled_w = int(round(crop_w * scale))
    scaled_h = int(round(crop_h * scale))
    return FrameTransform(
        source_width=image.width,
        source_height=image.height,
        crop_left=left,
        crop_top=top,
        crop_width=crop_w,
        crop_height=crop_h,
        scale=scale,
        pad_x=(target_size - scaled_w) // 2,
        pad_y=(target_size - scaled_h) // 2,
        target_size=target_size,
    )


def apply_transform(raster: np.ndarray, transform: FrameTransform, interpolation: str) -> np.ndarray:
    """Resample a raster through the crop/scale/pad mapping.

    Sampling is center-aligned: target pixel centers map back into source
    coordinates, clamped to the crop rectangle. The padding region is 0.
    Boolean rasters require nearest interpolation and stay boolean.
    """
    if interpolation not in ("nearest", "bilinear"):
        raise ValidationError(f"unknown interpolation {interpolation!r}")
    h, w = raster.shape[:2]
    if (w, h) != (transform.source_width, transform.source_height):
        raise TransformError(
            f"raster is {w}x{h}, transform expects "
            f"{transform.source_width}x{transform.source_height}"
        )
    if raster.dtype == bool and interpolation != "nearest":
        raise ValidationError("binary masks must be resampled with nearest interpolation")

    t = transform
    size = t.target_size
    xs = np.arange(size, dtype=np.float64)
    inside_x = (xs >= t.pad_x) & (xs < t.pad_x + t.scaled_width)
    inside_y = (xs >= t.pad_y) & (xs < t.pad_y + t.scaled_height)
    inside = inside_y[:, None] & inside_x[None, :]
    # Source coordinates of each target pixel center, relative to the frame.
    u = (xs - t.pad_x + 0.5) / t.scale - 0.5 + t.crop_left
    v = (xs - t.pad_y + 0.5) / t.scale - 0.5 + t.crop_top
    lo_u, hi_u = t.crop_left, t.crop_left + t.crop_width - 1
    lo_v, hi_v = t.crop_top, t.crop_top + t.crop_height - 1

    if interpolation == "nearest":
        ui = np.clip(np.round(u), lo_u, hi_u).astype(np.intp)
        vi = np.clip(np.round(v), lo_v, hi_v).astype(np.intp)
        out = raster[vi[:, None], ui[None, :]]
        out = np.where(inside[..., None] if raster.ndim == 3 else inside, out, 0)
        return out.astype(raster.dtype)

    uc = np.clip(u, lo_u, hi_u)
    vc = np.clip(v, lo_v, hi_v)
    u0 = np.floor(uc).astype(np.intp)
    v0 = np.floor(vc).astype(np.intp)
    u1 = np.minimum(u0 + 1, hi_u)
    v1 = np.minimum(v0 + 1, hi_v)
    fu = (uc - u0)[None, :]
    fv = (vc - v0)[:, None]
    if raster.ndim == 3:
        fu = fu[..., None]
        fv = fv[..., None]
    src = raster.astype(np.float64)
    top = src[v0[:, None], u0[None, :]] * (1 - fu) + src[v0[:, None], u1[None, :]] * fu
    bot = src[v1[:, None], u0[None, :]] * (1 - fu) + src[v1[:, None], u1[None, :]] * fu
    out = top * (1 - fv) + bot * fv
    out = np.where(inside[..., None] if raster.ndim == 3 else inside, out, 0.0)
    if raster.dtype == np.uint8:
        return np.clip(np.round(out), 0, 255).astype(np.uint8)
    return out


class Patch(NamedTuple):
    x: int
    y: int
    data: np.ndarray


def _axis_origins(size: int, patch: int, stride: int) -> list[int]:
    origins = list(range(0, size - patch + 1, stride))
    if origins[-1] != size - patch:
        origins.append(size - patch)  # anchor the last patch to the edge
    return origins


def extract_patches(raster: np.ndarray, patch_size: int, stride: int) -> list[Patch]:
    """Row-major grid of patches covering the raster completely."""
    if patch_size <= 0 or stride <= 0:
        raise ValidationError("patch_size and stride must be positive")
    h, w = raster.shape[:2]
    if patch_size > w or patch_size > h:
        raise SizeError(f"patch size {patch_size} exceeds raster {w}x{h}")
    return [
        Patch(x=x, y=y, data=raster[y : y + patch_size, x : x + patch_size])
        for y in _axis_origins(h, patch_size, stride)
        for x in _axis_origins(w, patch_size, stride)
    ]
