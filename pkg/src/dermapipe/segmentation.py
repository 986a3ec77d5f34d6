"""Prompt assembly, backend invocation and batch mask management.

The actual segmenter is external: the coordinator writes a ``job.json``

    {"image": path, "size": [448, 448],
     "prompts": [{"image": path, "mask": path}, ...],
     "out_mask": path}

and invokes the configured command with the job file as its single
argument. The backend must write an 8-bit PNG mask to ``out_mask`` and exit
0; anything grayscale is binarized at 128 on the way back in, and the mask
is nearest-resized from the 448x448 working size to the inference image's
original resolution. Two in-process test doubles (oracle, trivial) let the
rest of the pipeline be exercised without any real model.
"""

from __future__ import annotations

import hashlib
import json
import logging
import shlex
import subprocess
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from . import imageops
from .dataset import Manifest
from .errors import (
    BackendFailure,
    BackendTimeout,
    DermapipeError,
    MalformedBackendOutput,
    MissingFeature,
    UnknownId,
)
from .featurestore import FeatureStore
from .retrieval import PromptSet, retrieve_prompts

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 120.0
BACKEND_SIZE = (imageops.SEG_INPUT_SIZE, imageops.SEG_INPUT_SIZE)


@dataclass
class SegmentationJob:
    image_path: str
    prompts: PromptSet
    out_mask_path: str
    size: tuple[int, int] = BACKEND_SIZE

    def to_protocol_dict(self) -> dict:
        return {
            "image": self.image_path,
            "size": list(self.size),
            "prompts": [{"image": p.image_path, "mask": p.mask_path}
                        for p in self.prompts.pairs],
            "out_mask": self.out_mask_path,
        }


class SegmenterBackend:
    """Produces a raw mask file for a job. ``backend_id`` keys the mask cache."""

    backend_id: str = "abstract"

    def run(self, job: SegmentationJob) -> None:
        raise NotImplementedError


class CommandBackend(SegmenterBackend):
    """External process speaking the job-file protocol."""

    def __init__(self, command: str | list[str], timeout: float = DEFAULT_TIMEOUT):
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        self.timeout = timeout
        digest = hashlib.sha256(" ".join(self.command).encode("utf-8")).hexdigest()
        self.backend_id = f"cmd-{digest[:12]}"

    def run(self, job: SegmentationJob) -> None:
        with tempfile.TemporaryDirectory(prefix="dermapipe-job-") as tmp:
            job_file = Path(tmp) / "job.json"
            job_file.write_text(json.dumps(job.to_protocol_dict()), encoding="utf-8")
            try:
                proc = subprocess.run(
                    self.command + [str(job_file)],
                    capture_output=True, text=True, timeout=self.timeout,
                )
            except subprocess.TimeoutExpired:
                raise BackendTimeout(
                    f"backend exceeded {self.timeout}s on {job.image_path}") from None
            except OSError as exc:
                raise BackendFailure(f"cannot launch backend: {exc}") from None
        if proc.returncode != 0:
            raise BackendFailure(f"backend exited with status {proc.returncode}",
                                 exit_status=proc.returncode, stderr=proc.stderr)
        if not Path(job.out_mask_path).is_file():
            raise BackendFailure("backend exited 0 but wrote no mask file",
                                 exit_status=0, stderr=proc.stderr)


class OracleBackend(SegmenterBackend):
    """Test double returning each record's annotated ground-truth mask."""

    backend_id = "oracle"

    def __init__(self, manifest: Manifest):
        self._mask_by_image = {r.image_path: r.mask_path for r in manifest}

    def run(self, job: SegmentationJob) -> None:
        mask_path = self._mask_by_image.get(job.image_path)
        if not mask_path:
            raise BackendFailure(f"oracle has no annotated mask for {job.image_path}")
        mask = imageops.load_mask(mask_path)
        imageops.save_mask(mask, job.out_mask_path)


class TrivialBackend(SegmenterBackend):
    """Whole-image fallback: an all-ones mask."""

    backend_id = "trivial"

    def run(self, job: SegmentationJob) -> None:
        h, w = job.size
        imageops.save_mask(np.ones((h, w), dtype=np.uint8), job.out_mask_path)


def make_backend(spec: str, timeout: float = DEFAULT_TIMEOUT,
                 manifest: Manifest | None = None) -> SegmenterBackend:
    """Backend from a CLI spec: 'trivial', 'oracle', or an external command."""
    if spec == "trivial":
        return TrivialBackend()
    if spec == "oracle":
        if manifest is None:
            raise DermapipeError("oracle backend needs a manifest")
        return OracleBackend(manifest)
    return CommandBackend(spec, timeout=timeout)


def _image_size(path: str) -> tuple[int, int]:
    try:
        with Image.open(path) as im:
            return im.height, im.width
    except (UnidentifiedImageError, OSError) as exc:
        raise MalformedBackendOutput(f"cannot read image {path}: {exc}") from None


def segment(job: SegmentationJob, backend: SegmenterBackend) -> np.ndarray:
    """Run one job and return a strictly binary mask at the inference image's
    original resolution."""
    backend.run(job)
    out = Path(job.out_mask_path)
    try:
        with Image.open(out) as im:
            gray = np.asarray(im.convert("L"))
    except (UnidentifiedImageError, OSError) as exc:
        raise MalformedBackendOutput(f"backend mask unreadable: {exc}") from None
    mask = (gray >= imageops.MASK_THRESHOLD).astype(np.uint8)
    orig_h, orig_w = _image_size(job.image_path)
    if mask.shape != (orig_h, orig_w):
        mask = imageops.resize_mask_nearest(mask, orig_h, orig_w)
    return mask


@dataclass
class BatchResult:
    out_dir: Path
    masks: dict[str, str]      # record id -> mask path
    failures: dict[str, str]   # record id -> reason
    invoked: int               # records that actually hit the backend


def run_segmentation_batch(
    manifest: Manifest,
    store: FeatureStore,
    backend: SegmenterBackend,
    k: int,
    out_dir: str | Path,
    pool_ids: list[str] | None = None,
    jobs: int = 1,
    force: bool = False,
) -> BatchResult:
    """Predict one mask per manifest record, with on-disk caching.

    Retrieval queries use whole-image embeddings from ``store``; candidates
    are ``pool_ids`` (default: every record with an annotated mask), always
    excluding the query record itself. Masks are written to
    ``out_dir/<id>.png`` and indexed in ``out_dir/index.json``. Existing
    masks are skipped unless ``force``; per-record backend failures are
    recorded and the batch continues.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    index_file = out / "index.json"

    # The cache is keyed by (record id, K, backend id); refuse to silently
    # mix masks produced under a different key.
    if index_file.is_file() and not force:
        old = json.loads(index_file.read_text(encoding="utf-8"))
        if old.get("k") != k or old.get("backend") != backend.backend_id:
            raise DermapipeError(
                f"{out} holds masks for k={old.get('k')}, backend="
                f"{old.get('backend')!r}; pass force=True to overwrite")

    if pool_ids is None:
        pool_ids = [r.id for r in manifest if r.mask_path]
    pool = FeatureStore(store.dim, provider=store.provider, masking=store.masking)
    for rid in pool_ids:
        try:
            vec = store.get(rid)
        except UnknownId:
            raise MissingFeature(rid) from None
        pool.add(rid, vec)

    records = sorted(manifest, key=lambda r: r.id)
    for rec in records:
        if rec.id not in store:
            raise MissingFeature(rec.id)

    masks: dict[str, str] = {}
    failures: dict[str, str] = {}
    todo = []
    for rec in records:
        mask_path = out / f"{rec.id}.png"
        if mask_path.is_file() and not force:
            masks[rec.id] = str(mask_path)
            continue
        todo.append((rec, mask_path))

    def _one(item):
        rec, mask_path = item
        prompts = retrieve_prompts(store.get(rec.id), pool, manifest, k,
                                   exclude_id=rec.id)
        job = SegmentationJob(image_path=rec.image_path, prompts=prompts,
                              out_mask_path=str(mask_path))
        mask = segment(job, backend)
        imageops.save_mask(mask, mask_path)
        return rec.id, str(mask_path)

    workers = max(1, jobs)
    with ThreadPoolExecutor(max_workers=workers) as pool_exec:
        futures = {pool_exec.submit(_one, item): item[0] for item in todo}
        for fut, rec in futures.items():
            try:
                rid, path = fut.result()
                masks[rid] = path
            except DermapipeError as exc:
                log.warning("record %s: segmentation failed: %s", rec.id, exc)
                failures[rec.id] = str(exc)
                Path(out / f"{rec.id}.png").unlink(missing_ok=True)

    index = {
        "k": k,
        "backend": backend.backend_id,
        "masks": {rid: masks[rid] for rid in sorted(masks)},
        "failures": {rid: failures[rid] for rid in sorted(failures)},
    }
    index_file.write_text(json.dumps(index, indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")
    return BatchResult(out_dir=out, masks=index["masks"], failures=index["failures"],
                       invoked=len(todo))
