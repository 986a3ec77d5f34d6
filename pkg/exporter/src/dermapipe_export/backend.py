"""In-context segmentation backend speaking the pipeline's job protocol.

The coordinator hands us a job file

    {"image": path, "size": [448, 448],
     "prompts": [{"image": path, "mask": path}, ...],
     "out_mask": path}

and expects an 8-bit mask PNG at ``out_mask`` plus exit status 0. The
bundled engine is a deterministic patch-matching transfer: query and prompt
images are resized to the working size, cut into 16x16 patches, and every
query patch copies the mask patch of its nearest prompt patch (L2 over raw
normalised pixels, all prompts pooled). Predicting an image that also
appears as its own prompt therefore reproduces the prompt mask exactly -
the protocol's self-consistency probe. Checkpoint-backed inference is not
bundled; this engine keeps the contract honest without any weights.
"""

from __future__ import annotations

import io
import json
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from . import preprocess
from .ddxf import atomic_write
from .errors import JobFileError

PATCH = 16


def _load_job(job_path: str | Path) -> dict:
    p = Path(job_path)
    if not p.is_file():
        raise JobFileError(f"job file not found: {p}")
    try:
        job = json.loads(p.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise JobFileError(f"{p}: unreadable job file: {exc}") from None
    for key in ("image", "size", "prompts", "out_mask"):
        if key not in job:
            raise JobFileError(f"{p}: job file missing key {key!r}")
    size = job["size"]
    if (not isinstance(size, list) or len(size) != 2
            or not all(isinstance(v, int) and v >= PATCH for v in size)):
        raise JobFileError(f"{p}: bad size {size!r} (want [h, w] >= {PATCH})")
    if not isinstance(job["prompts"], list) or not job["prompts"]:
        raise JobFileError(f"{p}: job needs at least one prompt pair")
    for pair in job["prompts"]:
        if not isinstance(pair, dict) or "image" not in pair or "mask" not in pair:
            raise JobFileError(f"{p}: prompt entries need 'image' and 'mask'")
    return job


def _patch_grid(img: torch.Tensor, h: int, w: int) -> np.ndarray:
    """Resize to (h, w), normalise, cut into (n_patches, PATCH*PATCH*3) rows."""
    x = preprocess.normalize(preprocess.resize_image(img, h, w))
    grid = x.unfold(1, PATCH, PATCH).unfold(2, PATCH, PATCH)  # (3, gh, gw, P, P)
    gh, gw = grid.shape[1], grid.shape[2]
    return (grid.permute(1, 2, 0, 3, 4).reshape(gh * gw, -1)).numpy()


def _mask_patches(mask: torch.Tensor, h: int, w: int) -> np.ndarray:
    """Resize to (h, w), cut into (n_patches, PATCH, PATCH) uint8 blocks."""
    m = preprocess.resize_mask(mask, h, w)
    blocks = m.unfold(0, PATCH, PATCH).unfold(1, PATCH, PATCH)  # (gh, gw, P, P)
    return blocks.reshape(-1, PATCH, PATCH).numpy()


def run_backend_job(job_path: str | Path, patch: int = PATCH) -> Path:
    """Execute one job file; returns the path of the written mask."""
    job = _load_job(job_path)
    h, w = job["size"]
    h -= h % patch
    w -= w % patch

    query = _patch_grid(preprocess.load_image(job["image"]), h, w)

    prompt_vecs = []
    prompt_masks = []
    for pair in job["prompts"]:
        prompt_vecs.append(_patch_grid(preprocess.load_image(pair["image"]), h, w))
        prompt_masks.append(_mask_patches(preprocess.load_mask(pair["mask"]), h, w))
    bank = np.concatenate(prompt_vecs, axis=0)
    bank_masks = np.concatenate(prompt_masks, axis=0)

    # Nearest prompt patch per query patch; ties resolve to the first index,
    # so identical inputs always reproduce the same mask.
    d2 = ((query ** 2).sum(axis=1)[:, None]
          - 2.0 * query @ bank.T
          + (bank ** 2).sum(axis=1)[None, :])
    nearest = np.argmin(d2, axis=1)

    gh, gw = h // patch, w // patch
    out = (bank_masks[nearest]
           .reshape(gh, gw, patch, patch)
           .transpose(0, 2, 1, 3)
           .reshape(h, w))
    out_path = Path(job["out_mask"])
    out_path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.BytesIO()
    Image.fromarray(out.astype(np.uint8) * 255, mode="L").save(buf, format="PNG")
    atomic_write(out_path, buf.getvalue())  # never a half-written mask
    return out_path
