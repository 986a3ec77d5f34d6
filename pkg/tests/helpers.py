import json
from pathlib import Path

import numpy as np
from PIL import Image

from dermapipe.dataset import ImageRecord, Manifest
from dermapipe.featurestore import (
    MASKING_MASKED,
    MASKING_WHOLE,
    FeatureStore,
    write_feature_file,
)

DIM = 768


def blob_labels(n):
    """Round-robin class assignment img0000->0, img0001->1, ..."""
    return [(f"img{i:04d}", i % 4) for i in range(n)]


def class_centers(dim=DIM, scale=10.0, center_seed=0):
    """Four orthogonal centers with pairwise distance exactly ``scale``."""
    gen = np.random.default_rng(center_seed)
    q, _ = np.linalg.qr(gen.normal(size=(dim, 4)))
    return (q * (scale / np.sqrt(2))).T


def blob_store(ids_labels, dim=DIM, scale=10.0, noise=1.0, center_seed=0,
               noise_seed=1, signal_gain=1.0, nuisance=0.0, masking=None):
    """Gaussian blobs around orthogonal class centers.

    ``signal_gain`` attenuates the class signal and ``nuisance`` adds extra
    high-variance noise on the upper half of the dimensions — the
    "whole image" arm, where background pixels drown the lesion signal.
    """
    centers = class_centers(dim, scale, center_seed)
    gen = np.random.default_rng(noise_seed)
    store = FeatureStore(dim, masking=masking)
    half = dim // 2
    for rid, cls in ids_labels:
        vec = signal_gain * centers[cls] + noise * gen.normal(size=dim)
        if nuisance:
            vec[half:] += nuisance * gen.normal(size=dim - half)
        store.add(rid, vec.astype(np.float32))
    return store


def blob_manifest(ids_labels, with_masks=False):
    records = [
        ImageRecord(id=rid, image_path=f"images/{rid}.png",
                    mask_path=f"masks/{rid}.png" if with_masks else None,
                    label=cls, source="synthetic")
        for rid, cls in ids_labels
    ]
    return Manifest(records)


def write_manifest(path, ids_labels, with_masks=False):
    lines = []
    for rid, cls in ids_labels:
        row = {"id": rid, "image_path": f"images/{rid}.png",
               "mask_path": f"masks/{rid}.png" if with_masks else None,
               "label": cls, "source": "synthetic"}
        lines.append(json.dumps(row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return Path(path)


def write_rgb_png(path, h, w, seed=0):
    gen = np.random.default_rng(seed)
    arr = gen.integers(0, 256, size=(h, w, 3), dtype=np.uint8)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")
    return np.asarray(Image.open(path).convert("RGB"))


def write_mask_png(path, h, w, box=None):
    """box = (y0, y1, x0, x1) half-open; None -> empty mask."""
    m = np.zeros((h, w), dtype=np.uint8)
    if box is not None:
        y0, y1, x0, x1 = box
        m[y0:y1, x0:x1] = 255
    Image.fromarray(m, mode="L").save(path, format="PNG")
    return (m >= 128).astype(np.uint8)
