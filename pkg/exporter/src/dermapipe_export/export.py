"""The `features` operation: manifest in, DDXF embedding file out.

Images are preprocessed exactly as the classification pipeline expects
(224x224, ImageNet z-score, mask-before-normalise for the masked arm),
batched through the frozen backbone in eval mode, and written with
provenance metadata naming the checkpoint (content hash) or preset that
produced them. Relative manifest paths resolve against the manifest's own
directory, so a dataset directory can be moved as a unit.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import preprocess
from .ddxf import MASKING_MASKED, MASKING_WHOLE, write_ddxf
from .errors import ExportError
from .selftest import run_selftest
from .vit import EMBED_DIM, PRESETS, build_model, load_checkpoint

log = logging.getLogger(__name__)

DEFAULT_BATCH = 16


@dataclass(frozen=True)
class ManifestRow:
    id: str
    image_path: Path
    mask_path: Path | None


def read_manifest(path: str | Path) -> list[ManifestRow]:
    """Minimal JSONL manifest reader (id, image_path, optional mask_path)."""
    p = Path(path)
    if not p.is_file():
        raise ExportError(f"manifest not found: {p}")
    base = p.parent
    rows: list[ManifestRow] = []
    seen: set[str] = set()
    for line_no, line in enumerate(p.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ExportError(f"{p}:{line_no}: bad JSON: {exc}") from None
        rid = obj.get("id")
        image = obj.get("image_path")
        if not isinstance(rid, str) or not rid or not isinstance(image, str) or not image:
            raise ExportError(f"{p}:{line_no}: need string 'id' and 'image_path'")
        if rid in seen:
            raise ExportError(f"{p}:{line_no}: duplicate id {rid!r}")
        seen.add(rid)
        mask = obj.get("mask_path")
        rows.append(ManifestRow(
            id=rid,
            image_path=base / image if not Path(image).is_absolute() else Path(image),
            mask_path=(base / mask if not Path(mask).is_absolute() else Path(mask))
            if isinstance(mask, str) and mask else None,
        ))
    if not rows:
        raise ExportError(f"{p}: manifest has no records")
    return rows


def resolve_model(checkpoint: str, seed: int = 0):
    """Checkpoint id -> (model, provider string).

    A preset name builds seeded stand-in weights; anything else is treated
    as a path to real backbone weights for the full architecture.
    """
    if checkpoint in PRESETS:
        model = build_model(checkpoint, seed=seed)
        return model, f"standin-{checkpoint}-seed{seed}"
    model = build_model("vit-base-16")
    digest = load_checkpoint(model, checkpoint)
    return model, f"dino-vitb16-{digest[:16]}"


def export_features(
    manifest_path: str | Path,
    out_path: str | Path,
    masked: bool = False,
    checkpoint: str = "tiny768",
    pooling: str = "cls",
    batch_size: int = DEFAULT_BATCH,
    seed: int = 0,
    selftest_dir: str | Path | None = None,
) -> Path:
    """Embed every manifest record and write the feature file."""
    if selftest_dir is not None:
        diffs = run_selftest(selftest_dir)
        log.info("preprocessing self-test passed on %d cases (worst %.2e)",
                 len(diffs), max(diffs.values()))
    rows = read_manifest(manifest_path)
    if masked:
        missing = [r.id for r in rows if r.mask_path is None]
        if missing:
            raise ExportError(f"masked export needs a mask for every record; "
                              f"missing for {missing[:5]!r}"
                              + ("..." if len(missing) > 5 else ""))

    model, provider = resolve_model(checkpoint, seed=seed)

    ids = [r.id for r in rows]
    vectors = np.empty((len(rows), EMBED_DIM), dtype=np.float32)
    batch: list[torch.Tensor] = []
    done = 0
    for row in rows:
        mask = preprocess.load_mask(row.mask_path) if masked else None
        tensor, _ = preprocess.feature_tensor(row.image_path, mask,
                                              record_id=row.id)
        batch.append(tensor)
        if len(batch) == batch_size:
            vectors[done:done + len(batch)] = model.features(
                torch.stack(batch), pooling=pooling).numpy()
            done += len(batch)
            batch = []
    if batch:
        vectors[done:done + len(batch)] = model.features(
            torch.stack(batch), pooling=pooling).numpy()

    write_ddxf(out_path, ids, vectors,
               provider=f"{provider}-{pooling}",
               masking=MASKING_MASKED if masked else MASKING_WHOLE)
    return Path(out_path)
