"""Preprocessing self-test against the pipeline's published vector fixture.

The classification pipeline ships a small fixture directory: ``cases.json``
listing ten image/mask cases, the referenced files, and ``expected.npz``
holding the normalised tensors its own preprocessing produced. Running the
exporter's preprocessing over the same cases and comparing elementwise is
the guard against cross-implementation drift (resampling conventions are
notoriously easy to get subtly wrong). Any case off by more than the
tolerance raises :class:`PreprocessMismatch`.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import preprocess
from .errors import ExportError, PreprocessMismatch

TOLERANCE = 1e-5


def run_selftest(fixture_dir: str | Path,
                 tolerance: float = TOLERANCE) -> dict[str, float]:
    """Compare our preprocessing to the fixture; returns per-case max |diff|."""
    root = Path(fixture_dir)
    cases_file = root / "cases.json"
    expected_file = root / "expected.npz"
    if not cases_file.is_file() or not expected_file.is_file():
        raise ExportError(f"{root}: not a vector-test fixture "
                          "(need cases.json and expected.npz)")
    spec = json.loads(cases_file.read_text(encoding="utf-8"))
    size = int(spec["size"])

    diffs: dict[str, float] = {}
    with np.load(expected_file) as expected:
        for case in spec["cases"]:
            name = case["name"]
            if name not in expected:
                raise ExportError(f"{root}: expected.npz has no entry {name!r}")
            mask = preprocess.load_mask(root / case["mask"]) if case["mask"] else None
            tensor, _ = preprocess.feature_tensor(root / case["image"], mask,
                                                  size=size, record_id=name)
            ours = preprocess.to_hwc(tensor)
            want = expected[name]
            if ours.shape != want.shape:
                raise PreprocessMismatch(
                    f"case {name!r}: shape {ours.shape} != expected {want.shape}")
            diffs[name] = float(np.max(np.abs(ours - want)))

    worst = max(diffs, key=diffs.get)
    if diffs[worst] > tolerance:
        raise PreprocessMismatch(
            f"case {worst!r}: max |diff| {diffs[worst]:.3e} exceeds "
            f"tolerance {tolerance:g}")
    return diffs
