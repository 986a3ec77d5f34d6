"""Manifest ingestion, cross-validation splits, and train-fraction subsampling.

A manifest is a UTF-8 file with one JSON object per line:

    {"id": "img001", "image_path": "images/img001.jpg",
     "mask_path": "masks/img001.png", "label": 2, "source": "clinic"}

``mask_path`` may be null or absent, ``source`` is free text, unknown keys
are ignored. Labels are the 4-point severity scale: 0 none, 1 mild,
2 moderate, 3 severe.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator

from . import rng
from .errors import (
    DuplicateId,
    EmptyManifest,
    FractionOutOfRange,
    InvalidLabel,
    MissingFile,
    ParseError,
    UnknownId,
)

NUM_CLASSES = 4


@dataclass(frozen=True)
class ImageRecord:
    id: str
    image_path: str
    mask_path: str | None
    label: int
    source: str = ""


class Manifest:
    """Immutable, id-indexed collection of image records."""

    def __init__(self, records: list[ImageRecord]):
        self._records = tuple(records)
        self._by_id: dict[str, ImageRecord] = {}
        for rec in self._records:
            if rec.id in self._by_id:
                raise DuplicateId(rec.id)
            self._by_id[rec.id] = rec

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self) -> Iterator[ImageRecord]:
        return iter(self._records)

    def ids(self) -> list[str]:
        return [r.id for r in self._records]

    def get(self, record_id: str) -> ImageRecord:
        try:
            return self._by_id[record_id]
        except KeyError:
            raise UnknownId(record_id) from None

    def __contains__(self, record_id: str) -> bool:
        return record_id in self._by_id

    def labels(self) -> dict[str, int]:
        return {r.id: r.label for r in self._records}


@dataclass(frozen=True)
class SplitSpec:
    """One train/validation assignment, possibly after subsampling."""

    seed: int
    split_index: int
    fraction: float
    train_ids: tuple[str, ...]
    val_ids: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "split_index": self.split_index,
            "fraction": self.fraction,
            "train_ids": list(self.train_ids),
            "val_ids": list(self.val_ids),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SplitSpec":
        return cls(
            seed=int(d["seed"]),
            split_index=int(d["split_index"]),
            fraction=float(d["fraction"]),
            train_ids=tuple(d["train_ids"]),
            val_ids=tuple(d["val_ids"]),
        )


def _round_half_up(x: float) -> int:
    # Pinned so split sizes are identical everywhere; Python's round()
    # half-to-even would disagree with other implementations.
    return int(math.floor(x + 0.5))


def _parse_record(obj: dict, line_no: int) -> ImageRecord:
    rec_id = obj.get("id")
    if not isinstance(rec_id, str) or not rec_id:
        raise ParseError("missing or empty 'id'", line_no)
    image_path = obj.get("image_path")
    if not isinstance(image_path, str) or not image_path:
        raise ParseError(f"record {rec_id!r}: missing or empty 'image_path'", line_no)
    mask_path = obj.get("mask_path")
    if mask_path is not None and not isinstance(mask_path, str):
        raise ParseError(f"record {rec_id!r}: 'mask_path' must be a string or null", line_no)
    label = obj.get("label")
    if isinstance(label, bool) or not isinstance(label, int) or not 0 <= label < NUM_CLASSES:
        raise InvalidLabel(rec_id, label)
    source = obj.get("source", "")
    if not isinstance(source, str):
        raise ParseError(f"record {rec_id!r}: 'source' must be a string", line_no)
    return ImageRecord(id=rec_id, image_path=image_path, mask_path=mask_path or None,
                       label=label, source=source)


def load_manifest(path: str | Path) -> Manifest:
    """Read a JSON-lines manifest, rejecting duplicate ids and bad labels."""
    p = Path(path)
    if not p.is_file():
        raise MissingFile(f"manifest not found: {p}")
    records: list[ImageRecord] = []
    seen: set[str] = set()
    with p.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", line_no) from None
            if not isinstance(obj, dict):
                raise ParseError("row is not a JSON object", line_no)
            rec = _parse_record(obj, line_no)
            if rec.id in seen:
                raise DuplicateId(rec.id)
            seen.add(rec.id)
            records.append(rec)
    return Manifest(records)


def make_splits(
    manifest: Manifest,
    n_splits: int,
    train_ratio: float,
    seed: int,
    stratify: bool = False,
) -> list[SplitSpec]:
    """Generate independent seeded shuffles cut at round(train_ratio * N).

    Split ``i`` shuffles the manifest ids with ``seed + i``, so the whole set
    of splits is reproducible from one seed. Splits are plain uniform
    shuffles by default; ``stratify=True`` shuffles and cuts per class
    instead.
    """
    if len(manifest) == 0:
        raise EmptyManifest("cannot split an empty manifest")
    if n_splits < 1:
        raise ValueError("n_splits must be >= 1")
    if not 0.0 < train_ratio < 1.0:
        raise ValueError("train_ratio must be in (0, 1)")

    ids = manifest.ids()
    splits: list[SplitSpec] = []
    for i in range(n_splits):
        split_seed = (seed + i) & ((1 << 64) - 1)
        if stratify:
            train: list[str] = []
            val: list[str] = []
            for cls in range(NUM_CLASSES):
                cls_ids = [r.id for r in manifest if r.label == cls]
                if not cls_ids:
                    continue
                order = rng.shuffled(cls_ids, rng.derive_seed(split_seed, cls))
                cut = _round_half_up(train_ratio * len(order))
                train.extend(order[:cut])
                val.extend(order[cut:])
        else:
            order = rng.shuffled(ids, split_seed)
            cut = _round_half_up(train_ratio * len(order))
            train, val = order[:cut], order[cut:]
        splits.append(SplitSpec(seed=seed, split_index=i, fraction=1.0,
                                train_ids=tuple(train), val_ids=tuple(val)))
    return splits


def subsample_train(split: SplitSpec, fraction: float, seed: int) -> SplitSpec:
    """Keep a seeded permutation prefix of the train ids; validation untouched.

    Prefixes of one permutation make fraction subsets nested (the 20% subset
    is contained in the 40% subset for the same seed). ``fraction == 1.0``
    returns the split unchanged.
    """
    if not 0.0 < fraction <= 1.0:
        raise FractionOutOfRange(f"fraction {fraction} not in (0, 1]")
    if fraction == 1.0:
        return split
    keep = _round_half_up(fraction * len(split.train_ids))
    prefix = rng.sample_prefix(split.train_ids, keep, seed)
    return replace(split, fraction=fraction, train_ids=tuple(prefix))


def save_splits(splits: list[SplitSpec], path: str | Path) -> None:
    payload = [s.to_dict() for s in splits]
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


def load_splits(path: str | Path) -> list[SplitSpec]:
    p = Path(path)
    if not p.is_file():
        raise MissingFile(f"splits file not found: {p}")
    try:
        payload = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid splits file: {exc.msg}") from None
    if not isinstance(payload, list):
        raise ParseError("splits file must contain a JSON array")
    return [SplitSpec.from_dict(d) for d in payload]
