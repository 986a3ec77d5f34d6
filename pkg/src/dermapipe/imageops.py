"""Deterministic image decode, bilinear resize, z-score normalisation, masking.

Images are numpy float32 arrays of shape (H, W, 3) in [0, 1] after decoding
(unbounded after normalisation); binary masks are uint8 arrays of shape
(H, W) with values in {0, 1}. All operations are pure, so the full
decode -> resize -> mask -> normalise pipeline is bit-reproducible.
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import (
    CorruptFile,
    EmptyMaskFallback,
    MissingFile,
    UnsupportedFormat,
    ZeroDimension,
)

log = logging.getLogger(__name__)

# Canonical channel statistics implied by "ImageNet normalisation".
IMAGENET_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
IMAGENET_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)

SEG_INPUT_SIZE = 448      # side length presented to the segmenter backend
FEATURE_INPUT_SIZE = 224  # side length presented to the feature extractor
MASK_THRESHOLD = 128      # on-disk masks binarize at this 8-bit value

# Masks covering less than this fraction of pixels are treated as empty and
# the whole image is used instead of an (almost) all-black crop.
MASK_COVERAGE_FLOOR = 0.01

_RASTER_FORMATS = ("PNG", "JPEG")


def decode_image(path: str | Path) -> np.ndarray:
    """Decode a PNG or JPEG to an RGB float32 array scaled to [0, 1]."""
    p = Path(path)
    if not p.is_file():
        raise MissingFile(f"image not found: {p}")
    try:
        with Image.open(p) as im:
            if im.format not in _RASTER_FORMATS:
                raise UnsupportedFormat(f"{p}: format {im.format!r} (want PNG or JPEG)")
            rgb = im.convert("RGB")
            arr = np.asarray(rgb, dtype=np.float32)
    except UnidentifiedImageError:
        raise UnsupportedFormat(f"{p}: not a recognisable raster file") from None
    except OSError as exc:
        raise CorruptFile(f"{p}: {exc}") from None
    return arr / np.float32(255.0)


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with half-pixel source centers.

    Source coordinates follow src = (dst + 0.5) * (in / out) - 0.5, clamped
    to the source grid; channels are interpolated independently. Output
    values stay within the per-channel input range (convex combination).
    """
    if out_h < 1 or out_w < 1:
        raise ZeroDimension(f"target size {out_h}x{out_w} is not positive")
    in_h, in_w = img.shape[:2]

    src_y = np.clip((np.arange(out_h, dtype=np.float64) + 0.5) * (in_h / out_h) - 0.5,
                    0.0, in_h - 1.0)
    src_x = np.clip((np.arange(out_w, dtype=np.float64) + 0.5) * (in_w / out_w) - 0.5,
                    0.0, in_w - 1.0)
    y0 = np.floor(src_y).astype(np.int64)
    x0 = np.floor(src_x).astype(np.int64)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = (src_y - y0).astype(np.float32)
    wx = (src_x - x0).astype(np.float32)

    if img.ndim == 3:
        wy = wy[:, None, None]
        wx = wx[None, :, None]
        rows0, rows1 = y0[:, None], y1[:, None]
        cols0, cols1 = x0[None, :], x1[None, :]
    else:
        wy = wy[:, None]
        wx = wx[None, :]
        rows0, rows1 = y0[:, None], y1[:, None]
        cols0, cols1 = x0[None, :], x1[None, :]

    top = img[rows0, cols0] * (1.0 - wx) + img[rows0, cols1] * wx
    bot = img[rows1, cols0] * (1.0 - wx) + img[rows1, cols1] * wx
    return (top * (1.0 - wy) + bot * wy).astype(np.float32)


def resize_mask_nearest(mask: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbour mask resize; preserves strict binarity."""
    if out_h < 1 or out_w < 1:
        raise ZeroDimension(f"target size {out_h}x{out_w} is not positive")
    in_h, in_w = mask.shape
    rows = np.minimum(((np.arange(out_h) + 0.5) * (in_h / out_h)).astype(np.int64), in_h - 1)
    cols = np.minimum(((np.arange(out_w) + 0.5) * (in_w / out_w)).astype(np.int64), in_w - 1)
    return mask[rows[:, None], cols[None, :]]


def normalize_imagenet(img: np.ndarray) -> np.ndarray:
    """Per-channel z-score with the pinned ImageNet statistics."""
    return ((img - IMAGENET_MEAN) / IMAGENET_STD).astype(np.float32)


def denormalize_imagenet(img: np.ndarray) -> np.ndarray:
    """Inverse of :func:`normalize_imagenet`."""
    return (img * IMAGENET_STD + IMAGENET_MEAN).astype(np.float32)


def apply_mask(img: np.ndarray, mask: np.ndarray,
               coverage_floor: float = MASK_COVERAGE_FLOOR) -> np.ndarray:
    """Zero out pixels where mask == 0, in raw [0, 1] space.

    The mask is nearest-resized to the image dimensions if needed. Raises
    :class:`EmptyMaskFallback` when coverage is below ``coverage_floor``;
    use :func:`apply_mask_or_whole` for the fallback-to-whole-image policy.
    """
    if mask.shape != img.shape[:2]:
        mask = resize_mask_nearest(mask, img.shape[0], img.shape[1])
    coverage = float(np.count_nonzero(mask)) / mask.size
    if coverage < coverage_floor:
        raise EmptyMaskFallback(
            f"mask covers {coverage:.4%} of pixels (< {coverage_floor:.0%})")
    return (img * mask[:, :, None]).astype(np.float32)


def apply_mask_or_whole(img: np.ndarray, mask: np.ndarray | None,
                        record_id: str = "") -> tuple[np.ndarray, bool]:
    """Masked image, or the whole image (with a warning) on degenerate masks.

    Returns ``(image, used_fallback)``.
    """
    if mask is None:
        return img, True
    try:
        return apply_mask(img, mask), False
    except EmptyMaskFallback as exc:
        log.warning("record %s: %s; using whole image", record_id or "<unknown>", exc)
        return img, True


def crop_to_mask_bbox(img: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Crop the image to the mask's bounding box (experimental alternative
    to pixel masking)."""
    if mask.shape != img.shape[:2]:
        mask = resize_mask_nearest(mask, img.shape[0], img.shape[1])
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        raise EmptyMaskFallback("mask has no foreground pixels")
    return img[ys.min():ys.max() + 1, xs.min():xs.max() + 1]


def load_mask(path: str | Path) -> np.ndarray:
    """Load an 8-bit mask PNG, binarizing at the pinned threshold."""
    p = Path(path)
    if not p.is_file():
        raise MissingFile(f"mask not found: {p}")
    try:
        with Image.open(p) as im:
            gray = np.asarray(im.convert("L"))
    except UnidentifiedImageError:
        raise UnsupportedFormat(f"{p}: not a recognisable raster file") from None
    except OSError as exc:
        raise CorruptFile(f"{p}: {exc}") from None
    return (gray >= MASK_THRESHOLD).astype(np.uint8)


def save_mask(mask: np.ndarray, path: str | Path) -> None:
    """Write a {0,1} mask as a single-channel PNG with values {0, 255}."""
    Image.fromarray((mask.astype(np.uint8) * 255), mode="L").save(path, format="PNG")


def feature_tensor(
    image_path: str | Path,
    mask: np.ndarray | None = None,
    size: int = FEATURE_INPUT_SIZE,
    crop_bbox: bool = False,
    record_id: str = "",
) -> tuple[np.ndarray, bool]:
    """Canonical preprocessing for feature extraction.

    decode -> resize to ``size`` -> (optionally) mask in raw pixel space ->
    ImageNet normalisation. Masking happens before normalisation, so
    background pixels map to the constant -mean/std. Returns the normalised
    tensor and a flag telling whether a degenerate mask forced the
    whole-image fallback (always False when no mask was requested).
    ``crop_bbox=True`` crops to the mask bounding box instead of zeroing
    pixels (experimental).
    """
    img = decode_image(image_path)
    fallback = False
    if mask is not None and crop_bbox:
        try:
            img = crop_to_mask_bbox(img, mask)
        except EmptyMaskFallback as exc:
            log.warning("record %s: %s; using whole image", record_id or "<unknown>", exc)
            fallback = True
        mask = None
    img = resize_bilinear(img, size, size)
    if mask is None:
        return normalize_imagenet(img), fallback
    img, fallback = apply_mask_or_whole(img, mask, record_id=record_id)
    return normalize_imagenet(img), fallback
