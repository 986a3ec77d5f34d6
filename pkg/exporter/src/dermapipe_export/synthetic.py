"""Synthetic oracle datasets: Gaussian class blobs plus toy images/masks.

The generator fabricates everything the pipeline consumes - a manifest,
images, annotated masks and both feature arms - with known structure:

* masked features are 4 Gaussian blobs whose centers sit pairwise at 10x
  the noise sigma (linearly separable by a wide margin, so a classifier
  that fails on them is broken, not unlucky);
* whole-image features are the same blobs with extra nuisance noise added
  on the upper half of the dimensions, mimicking background clutter that
  masking would have removed.

Everything derives from one seed and all timestamps are pinned, so a rerun
produces byte-identical files.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .ddxf import MASKING_MASKED, MASKING_WHOLE, write_ddxf
from .errors import ExportError

CENTER_DISTANCE_OVER_SIGMA = 10.0
PROVIDER = "synthetic-blobs-v1"


def _class_centers(rng: np.random.Generator, dim: int, classes: int,
                   sigma: float) -> np.ndarray:
    """(classes, dim) centers, pairwise distance exactly 10 * sigma."""
    if dim < classes:
        raise ExportError(f"need dim >= classes, got dim={dim} < {classes}")
    basis, _ = np.linalg.qr(rng.normal(size=(dim, classes)))
    # Orthonormal columns sit at distance sqrt(2) from each other; rescale.
    scale = CENTER_DISTANCE_OVER_SIGMA * sigma / np.sqrt(2.0)
    return (basis * scale).T


def _toy_image(rng: np.random.Generator, size: int) -> Image.Image:
    arr = rng.integers(0, 256, size=(size, size, 3), dtype=np.uint8)
    return Image.fromarray(arr, mode="RGB")


def _toy_mask(size: int) -> Image.Image:
    mask = np.zeros((size, size), dtype=np.uint8)
    q = size // 4
    mask[q:size - q, q:size - q] = 255  # centered box, half the side length
    return Image.fromarray(mask, mode="L")


def make_synthetic(
    out_dir: str | Path,
    seed: int = 0,
    n: int = 200,
    dim: int = 768,
    classes: int = 4,
    sigma: float = 1.0,
    nuisance: float = 4.0,
    image_size: int = 64,
) -> dict[str, Path]:
    """Write a complete synthetic workspace; returns the paths written."""
    if n < classes:
        raise ExportError(f"need n >= classes, got n={n} < {classes}")
    if classes < 2:
        raise ExportError("need at least 2 classes")

    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(seed)
    centers = _class_centers(rng, dim, classes, sigma)

    ids = [f"syn{i:04d}" for i in range(n)]
    labels = [i % classes for i in range(n)]
    masked = np.empty((n, dim), dtype=np.float32)
    for i, label in enumerate(labels):
        masked[i] = centers[label] + sigma * rng.normal(size=dim)
    # Nuisance clutter on the upper half of the dims only, so the two arms
    # stay comparable on the signal-carrying half.
    whole = masked.copy()
    half = dim // 2
    whole[:, half:] += nuisance * rng.normal(size=(n, dim - half)).astype(np.float32)

    rows = []
    for rid, label in zip(ids, labels):
        image_rel = f"images/{rid}.png"
        mask_rel = f"masks/{rid}.png"
        _toy_image(rng, image_size).save(out / image_rel, format="PNG")
        _toy_mask(image_size).save(out / mask_rel, format="PNG")
        rows.append({"id": rid, "image_path": image_rel, "mask_path": mask_rel,
                     "label": label, "source": PROVIDER})

    manifest = out / "manifest.jsonl"
    manifest.write_text("".join(json.dumps(r) + "\n" for r in rows),
                        encoding="utf-8")

    masked_path = out / "features_masked.ddxf"
    whole_path = out / "features_whole.ddxf"
    write_ddxf(masked_path, ids, masked, provider=PROVIDER,
               masking=MASKING_MASKED, created_unix=0)
    write_ddxf(whole_path, ids, whole, provider=PROVIDER,
               masking=MASKING_WHOLE, created_unix=0)
    return {
        "manifest": manifest,
        "features_masked": masked_path,
        "features_whole": whole_path,
        "images": out / "images",
        "masks": out / "masks",
    }
