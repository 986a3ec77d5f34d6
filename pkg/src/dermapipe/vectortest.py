"""Preprocessing conformance fixture.

Writes a small directory of deterministic PNGs (mixed sizes, some with
masks, including a near-empty mask and a mask at a different resolution
than its image) together with the exact feature tensors this package
computes for them. External embedding exporters re-run their own
preprocessing over the same files and compare against ``expected.npz``;
agreement within 1e-5 means the two implementations resize, mask and
normalize identically.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .imageops import FEATURE_INPUT_SIZE, feature_tensor, load_mask
from .rng import derive_seed

TOLERANCE = 1e-5

# (name, image height, image width, mask kind). Mask kinds:
#   none      - no mask recorded
#   box       - centered rectangle covering ~25% of the image
#   blob      - thresholded smooth noise
#   tiny      - single lit pixel (under the coverage floor -> whole image)
#   offgrid   - box mask stored at half the image resolution
_CASES = (
    ("exact", 224, 224, "none"),
    ("down2x", 448, 448, "box"),
    ("up", 64, 96, "blob"),
    ("portrait", 300, 200, "none"),
    ("landscape", 180, 320, "box"),
    ("tiny-src", 7, 5, "none"),
    ("narrow", 512, 24, "blob"),
    ("sparse", 256, 256, "tiny"),
    ("offgrid", 250, 210, "offgrid"),
    ("large", 600, 800, "blob"),
)


@dataclass
class FixtureCase:
    name: str
    image_path: str
    mask_path: str | None


def _image_pixels(gen: np.random.Generator, h: int, w: int) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w]
    base = np.stack([
        (yy / max(h - 1, 1)),
        (xx / max(w - 1, 1)),
        ((yy + xx) / max(h + w - 2, 1)),
    ], axis=-1)
    noise = gen.random((h, w, 3))
    img = 0.6 * base + 0.4 * noise
    return np.clip(img * 255.0, 0, 255).astype(np.uint8)


def _mask_pixels(gen: np.random.Generator, h: int, w: int, kind: str) -> np.ndarray | None:
    if kind == "none":
        return None
    if kind == "tiny":
        m = np.zeros((h, w), dtype=np.uint8)
        m[h // 2, w // 2] = 255
        return m
    if kind == "offgrid":
        mh, mw = max(1, h // 2), max(1, w // 2)
        m = np.zeros((mh, mw), dtype=np.uint8)
        m[mh // 4: 3 * mh // 4, mw // 4: 3 * mw // 4] = 255
        return m
    if kind == "box":
        m = np.zeros((h, w), dtype=np.uint8)
        m[h // 4: 3 * h // 4, w // 4: 3 * w // 4] = 255
        return m
    if kind == "blob":
        field = gen.random((max(2, h // 8), max(2, w // 8)))
        big = np.asarray(Image.fromarray((field * 255).astype(np.uint8)).resize(
            (w, h), Image.Resampling.BILINEAR))
        return np.where(big >= np.quantile(big, 0.7), 255, 0).astype(np.uint8)
    raise ValueError(f"unknown mask kind {kind!r}")


def generate_fixture(out_dir: str | Path, seed: int = 0,
                     size: int = FEATURE_INPUT_SIZE) -> Path:
    """Write images, masks, cases.json and expected.npz under ``out_dir``."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)

    cases = []
    expected: dict[str, np.ndarray] = {}
    for i, (name, h, w, kind) in enumerate(_CASES):
        gen = np.random.default_rng(derive_seed(seed, i))
        image_path = out / "images" / f"{name}.png"
        Image.fromarray(_image_pixels(gen, h, w)).save(image_path)
        mask = _mask_pixels(gen, h, w, kind)
        mask_path = None
        if mask is not None:
            mask_path = out / "masks" / f"{name}.png"
            Image.fromarray(mask).save(mask_path)
        loaded = load_mask(mask_path) if mask_path else None
        tensor, _ = feature_tensor(str(image_path), mask=loaded, size=size,
                                   record_id=name)
        expected[name] = tensor
        cases.append({
            "name": name,
            "image": str(image_path.relative_to(out)),
            "mask": str(mask_path.relative_to(out)) if mask_path else None,
        })

    np.savez(out / "expected.npz", **expected)
    (out / "cases.json").write_text(
        json.dumps({"size": size, "cases": cases}, indent=2) + "\n",
        encoding="utf-8")
    return out


def load_fixture(fixture_dir: str | Path) -> tuple[int, list[FixtureCase], dict[str, np.ndarray]]:
    root = Path(fixture_dir)
    spec = json.loads((root / "cases.json").read_text(encoding="utf-8"))
    with np.load(root / "expected.npz") as payload:
        expected = {k: payload[k] for k in payload.files}
    cases = [
        FixtureCase(
            name=c["name"],
            image_path=str(root / c["image"]),
            mask_path=str(root / c["mask"]) if c["mask"] else None,
        )
        for c in spec["cases"]
    ]
    return int(spec["size"]), cases, expected


def max_abs_diff(expected: np.ndarray, actual: np.ndarray) -> float:
    a = np.asarray(expected, dtype=np.float64)
    b = np.asarray(actual, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.max(np.abs(a - b))) if a.size else 0.0
