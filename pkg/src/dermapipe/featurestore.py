"""Bit-exact binary interchange of frozen embedding vectors.

Feature files are produced offline by an exporter that runs the pretrained
backbone; this package only reads and writes the interchange format, so the
pipeline stays free of any deep-learning dependency.

File layout (all little-endian):

    magic  'DDXF'   4 bytes
    version u32     = 1
    dim     u32     vector length (768 for ViT-B class tokens)
    count   u64     number of records
    then per record:
    id_len  u16     byte length of the UTF-8 id
    id      bytes
    values  dim * f32

Provenance lives in a sidecar ``{path}.meta.json`` with keys ``provider``,
``masking`` ("masked" | "whole_image") and ``created_unix``.
"""

from __future__ import annotations

import json
import struct
import time
from pathlib import Path
from typing import Iterable, Protocol

import numpy as np

from .errors import (
    BadMagic,
    DimMismatch,
    DuplicateId,
    IoError,
    MissingFile,
    NonFinite,
    ProvenanceMismatch,
    TruncatedFile,
    UnknownId,
    UnsupportedVersion,
)

MAGIC = b"DDXF"
VERSION = 1
HEADER = struct.Struct("<4sIIQ")  # magic, version, dim, count

MASKING_MASKED = "masked"
MASKING_WHOLE = "whole_image"


class EmbeddingProvider(Protocol):
    """In-process source of embeddings; a FeatureStore satisfies this, and a
    model runtime can be plugged in behind the same surface."""

    @property
    def dim(self) -> int: ...

    def get(self, record_id: str) -> np.ndarray: ...


class FeatureStore:
    """Immutable id -> vector map with a fixed dimension and provenance tag."""

    def __init__(self, dim: int, provider: str = "", masking: str | None = None):
        if dim < 1:
            raise DimMismatch("feature dimension must be positive")
        self._dim = int(dim)
        self._vectors: dict[str, np.ndarray] = {}
        self.provider = provider
        self.masking = masking

    @property
    def dim(self) -> int:
        return self._dim

    def add(self, record_id: str, vector: np.ndarray | Iterable[float]) -> None:
        if record_id in self._vectors:
            raise DuplicateId(record_id)
        vec = np.ascontiguousarray(vector, dtype=np.float32)
        if vec.shape != (self._dim,):
            raise DimMismatch(
                f"record {record_id!r}: got shape {vec.shape}, want ({self._dim},)")
        if not np.all(np.isfinite(vec)):
            raise NonFinite(record_id)
        vec.flags.writeable = False  # store is immutable after load
        self._vectors[record_id] = vec

    def get(self, record_id: str) -> np.ndarray:
        try:
            return self._vectors[record_id]
        except KeyError:
            raise UnknownId(record_id) from None

    def ids(self) -> list[str]:
        return list(self._vectors.keys())

    def __contains__(self, record_id: str) -> bool:
        return record_id in self._vectors

    def __len__(self) -> int:
        return len(self._vectors)

    def matrix(self, ids: list[str] | None = None) -> np.ndarray:
        """Stack vectors (in store order, or the given id order) into (N, dim)."""
        keys = self.ids() if ids is None else ids
        if not keys:
            return np.empty((0, self._dim), dtype=np.float32)
        return np.stack([self.get(k) for k in keys])

    @classmethod
    def from_arrays(cls, ids: list[str], matrix: np.ndarray,
                    provider: str = "", masking: str | None = None) -> "FeatureStore":
        store = cls(matrix.shape[1], provider=provider, masking=masking)
        for rid, row in zip(ids, matrix):
            store.add(rid, row)
        return store


def get_embedding(store: EmbeddingProvider, record_id: str) -> np.ndarray:
    return store.get(record_id)


def meta_path(path: str | Path) -> Path:
    return Path(str(path) + ".meta.json")


def write_feature_file(store: FeatureStore, path: str | Path,
                       write_meta: bool = True) -> None:
    """Serialize the store; ``read_feature_file`` inverts this bit-exactly."""
    chunks = [HEADER.pack(MAGIC, VERSION, store.dim, len(store))]
    for rid in store.ids():
        id_bytes = rid.encode("utf-8")
        if len(id_bytes) > 0xFFFF:
            raise IoError(f"record id too long: {rid[:32]!r}...")
        chunks.append(struct.pack("<H", len(id_bytes)))
        chunks.append(id_bytes)
        chunks.append(store.get(rid).tobytes())
    try:
        Path(path).write_bytes(b"".join(chunks))
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from None
    if write_meta:
        meta = {
            "provider": store.provider,
            "masking": store.masking,
            "created_unix": int(time.time()),
        }
        meta_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n",
                                   encoding="utf-8")


def read_feature_file(path: str | Path) -> FeatureStore:
    """Load and validate a feature file (and its metadata sidecar if present)."""
    p = Path(path)
    if not p.is_file():
        raise MissingFile(f"feature file not found: {p}")
    data = p.read_bytes()
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagic(f"{p}: not a feature file")
    if len(data) < HEADER.size:
        raise TruncatedFile(f"{p}: header incomplete")
    _, version, dim, count = HEADER.unpack_from(data, 0)
    if version != VERSION:
        raise UnsupportedVersion(f"{p}: version {version} (supported: {VERSION})")
    if dim < 1:
        raise DimMismatch(f"{p}: header dim must be positive")

    provider, masking = "", None
    mp = meta_path(p)
    if mp.is_file():
        meta = json.loads(mp.read_text(encoding="utf-8"))
        provider = str(meta.get("provider", ""))
        masking = meta.get("masking")

    store = FeatureStore(dim, provider=provider, masking=masking)
    offset = HEADER.size
    vec_bytes = dim * 4
    for i in range(count):
        if offset + 2 > len(data):
            raise TruncatedFile(f"{p}: record {i}: id length missing "
                                f"(header says {count} records)")
        (id_len,) = struct.unpack_from("<H", data, offset)
        offset += 2
        if offset + id_len + vec_bytes > len(data):
            raise TruncatedFile(f"{p}: record {i}: incomplete "
                                f"(header says {count} records)")
        rid = data[offset:offset + id_len].decode("utf-8")
        offset += id_len
        vec = np.frombuffer(data, dtype="<f4", count=dim, offset=offset).copy()
        offset += vec_bytes
        store.add(rid, vec)
    if offset != len(data):
        raise TruncatedFile(f"{p}: {len(data) - offset} trailing bytes after "
                            f"{count} records")
    return store


def merge_stores(a: FeatureStore, b: FeatureStore) -> FeatureStore:
    """Combine two stores; refuses to mix masked and whole-image provenance."""
    if a.dim != b.dim:
        raise DimMismatch(f"cannot merge dim {a.dim} with dim {b.dim}")
    if a.masking is not None and b.masking is not None and a.masking != b.masking:
        raise ProvenanceMismatch(
            f"cannot merge {a.masking!r} features with {b.masking!r} features")
    out = FeatureStore(a.dim, provider=a.provider or b.provider,
                       masking=a.masking if a.masking is not None else b.masking)
    for rid in a.ids():
        out.add(rid, a.get(rid))
    for rid in b.ids():
        out.add(rid, b.get(rid))
    return out
