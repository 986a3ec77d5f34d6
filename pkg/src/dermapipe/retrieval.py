"""Exact K-nearest-neighbour retrieval of segmentation prompts.

Distances are plain Euclidean in embedding space; with a few hundred
candidates a brute-force scan is exact and effectively free, so there is no
approximate index. Ties are broken by ascending record id so results do not
depend on insertion order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import Manifest
from .errors import DermapipeError, DimMismatch, EmptyCandidates
from .featurestore import FeatureStore


@dataclass(frozen=True)
class Neighbor:
    record_id: str
    distance: float


@dataclass(frozen=True)
class PromptPair:
    record_id: str
    image_path: str
    mask_path: str
    distance: float


@dataclass(frozen=True)
class PromptSet:
    """K (image, mask) pairs sorted by ascending distance to the query."""

    k: int
    pairs: tuple[PromptPair, ...]


def knn(query: np.ndarray, candidates: FeatureStore, k: int,
        exclude_id: str | None = None) -> list[Neighbor]:
    """The k candidates minimising Euclidean distance to ``query``.

    ``exclude_id`` drops the query's own record when it is present among the
    candidates. Returns all candidates (sorted) when k exceeds their count.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    query = np.asarray(query, dtype=np.float32)
    if query.shape != (candidates.dim,):
        raise DimMismatch(f"query has shape {query.shape}, candidates have dim "
                          f"{candidates.dim}")
    ids = [rid for rid in candidates.ids() if rid != exclude_id]
    if not ids:
        raise EmptyCandidates("no candidates to search")
    mat = candidates.matrix(ids).astype(np.float64)
    dists = np.sqrt(((mat - query.astype(np.float64)) ** 2).sum(axis=1))
    order = sorted(range(len(ids)), key=lambda i: (dists[i], ids[i]))
    return [Neighbor(ids[i], float(dists[i])) for i in order[:k]]


def build_prompt_set(neighbors: list[Neighbor], manifest: Manifest, k: int) -> PromptSet:
    """Join neighbours with their manifest records; every pair needs a mask."""
    pairs = []
    for nb in neighbors:
        rec = manifest.get(nb.record_id)
        if not rec.mask_path:
            raise DermapipeError(
                f"prompt candidate {rec.id!r} has no mask; restrict the "
                "candidate pool to records with masks")
        pairs.append(PromptPair(rec.id, rec.image_path, rec.mask_path, nb.distance))
    return PromptSet(k=k, pairs=tuple(pairs))


def retrieve_prompts(query: np.ndarray, candidates: FeatureStore, manifest: Manifest,
                     k: int, exclude_id: str | None = None) -> PromptSet:
    """KNN search plus manifest join, as used by the segmentation stage."""
    return build_prompt_set(knn(query, candidates, k, exclude_id=exclude_id),
                            manifest, k)
