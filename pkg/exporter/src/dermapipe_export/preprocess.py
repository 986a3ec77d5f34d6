"""Torch-side preprocessing, numerically matched to the pipeline's imageops.

The classification pipeline publishes a vector-test fixture (ten images with
expected normalised tensors); this module is an independent implementation
of the same contract, so any drift between the two code bases is caught by
the self-test instead of silently skewing downstream features:

* decode to RGB float32 in [0, 1],
* bilinear resize with half-pixel source centers
  (``torch.nn.functional.interpolate`` with ``align_corners=False``),
* nearest-neighbour mask resize at ``src = floor((dst + 0.5) * in / out)``,
* masking in raw pixel space before ImageNet z-scoring, with masks that
  cover less than 1% of pixels falling back to the whole image.

Images are CHW float32 torch tensors here (the model side of the fence);
``to_hwc`` converts to the HWC numpy layout the fixture stores.
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image, UnidentifiedImageError

from .errors import ExportError

log = logging.getLogger(__name__)

IMAGENET_MEAN = torch.tensor([0.485, 0.456, 0.406], dtype=torch.float32)
IMAGENET_STD = torch.tensor([0.229, 0.224, 0.225], dtype=torch.float32)

FEATURE_INPUT_SIZE = 224
SEG_INPUT_SIZE = 448
MASK_THRESHOLD = 128
MASK_COVERAGE_FLOOR = 0.01


def load_image(path: str | Path) -> torch.Tensor:
    """Decode an image file to a (3, H, W) float32 tensor in [0, 1]."""
    p = Path(path)
    if not p.is_file():
        raise ExportError(f"image not found: {p}")
    try:
        with Image.open(p) as im:
            arr = np.array(im.convert("RGB"), dtype=np.uint8)
    except UnidentifiedImageError:
        raise ExportError(f"{p}: not a recognisable raster file") from None
    except OSError as exc:
        raise ExportError(f"{p}: {exc}") from None
    return torch.from_numpy(arr).permute(2, 0, 1).float().div_(255.0)


def load_mask(path: str | Path) -> torch.Tensor:
    """Load an 8-bit mask PNG as a (H, W) uint8 tensor in {0, 1}."""
    p = Path(path)
    if not p.is_file():
        raise ExportError(f"mask not found: {p}")
    try:
        with Image.open(p) as im:
            gray = np.array(im.convert("L"))
    except UnidentifiedImageError:
        raise ExportError(f"{p}: not a recognisable raster file") from None
    except OSError as exc:
        raise ExportError(f"{p}: {exc}") from None
    return torch.from_numpy((gray >= MASK_THRESHOLD).astype(np.uint8))


def resize_image(img: torch.Tensor, out_h: int, out_w: int) -> torch.Tensor:
    """Bilinear resize of a (3, H, W) tensor with half-pixel centers.

    Interpolation runs in float64: the float32 kernel computes source
    coordinates in single precision, which drifts by ~5e-5 on strong
    downscales - enough to fail the published-vector self-test.
    """
    if out_h < 1 or out_w < 1:
        raise ExportError(f"target size {out_h}x{out_w} is not positive")
    return F.interpolate(img.double().unsqueeze(0), size=(out_h, out_w),
                         mode="bilinear", align_corners=False,
                         antialias=False).squeeze(0).float()


def resize_mask(mask: torch.Tensor, out_h: int, out_w: int) -> torch.Tensor:
    """Nearest-neighbour mask resize, half-pixel convention, exact indices.

    The index math runs in float64 (``floor((dst + 0.5) * in / out)``) so the
    chosen source pixels agree bit-for-bit with the pipeline's resize even at
    boundary ties, where a float32 round-off could pick the other neighbour.
    """
    if out_h < 1 or out_w < 1:
        raise ExportError(f"target size {out_h}x{out_w} is not positive")
    in_h, in_w = mask.shape
    rows = torch.clamp(((torch.arange(out_h, dtype=torch.float64) + 0.5)
                        * (in_h / out_h)).floor().long(), max=in_h - 1)
    cols = torch.clamp(((torch.arange(out_w, dtype=torch.float64) + 0.5)
                        * (in_w / out_w)).floor().long(), max=in_w - 1)
    return mask[rows][:, cols]


def normalize(img: torch.Tensor) -> torch.Tensor:
    """Per-channel ImageNet z-score of a (3, H, W) tensor."""
    return (img - IMAGENET_MEAN[:, None, None]) / IMAGENET_STD[:, None, None]


def feature_tensor(
    image_path: str | Path,
    mask: torch.Tensor | None = None,
    size: int = FEATURE_INPUT_SIZE,
    record_id: str = "",
) -> tuple[torch.Tensor, bool]:
    """Decode -> resize -> (mask) -> normalise; the model-input tensor.

    Masking happens in raw pixel space before normalisation (background
    pixels end up at the constant -mean/std). Masks below the coverage
    floor are ignored with a warning and the whole image is used; the
    returned flag records that fallback.
    """
    img = resize_image(load_image(image_path), size, size)
    fallback = False
    if mask is not None:
        if tuple(mask.shape) != (size, size):
            mask = resize_mask(mask, size, size)
        coverage = float(mask.sum().item()) / mask.numel()
        if coverage < MASK_COVERAGE_FLOOR:
            log.warning("record %s: mask covers %.4f%% of pixels (< 1%%); "
                        "using whole image", record_id or "<unknown>",
                        100.0 * coverage)
            fallback = True
        else:
            img = img * mask.to(img.dtype)
    return normalize(img), fallback


def to_hwc(img: torch.Tensor) -> np.ndarray:
    """(3, H, W) tensor -> (H, W, 3) float32 numpy array."""
    return img.permute(1, 2, 0).contiguous().numpy().astype(np.float32, copy=False)
