"""Writer for the `DDXF` embedding interchange format.

Layout (little-endian), as consumed by the classification pipeline:

    magic  'DDXF'   4 bytes
    version u32     = 1
    dim     u32     vector length
    count   u64     number of records
    then per record:
    id_len  u16     byte length of the UTF-8 id
    id      bytes
    values  dim * f32

Provenance travels in a ``{path}.meta.json`` sidecar with keys ``provider``,
``masking`` ("masked" | "whole_image" | null) and ``created_unix``. Both
files are written atomically (temp file + rename) so a crashed export never
leaves a half-written file that parses as truncated garbage.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
import time
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ExportError

MAGIC = b"DDXF"
VERSION = 1
HEADER = struct.Struct("<4sIIQ")

MASKING_MASKED = "masked"
MASKING_WHOLE = "whole_image"


def atomic_write(path: Path, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp",
                               dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def write_ddxf(
    path: str | Path,
    ids: Sequence[str],
    matrix: np.ndarray,
    provider: str = "",
    masking: str | None = None,
    created_unix: int | None = None,
) -> None:
    """Write one vector per id; the pipeline's loader inverts this bit-exactly.

    ``created_unix=None`` stamps the current time; pass an explicit value
    (the synthetic generator uses 0) when byte-identical reruns matter.
    """
    matrix = np.ascontiguousarray(matrix, dtype=np.float32)
    if matrix.ndim != 2 or matrix.shape[0] != len(ids):
        raise ExportError(f"matrix shape {matrix.shape} does not match "
                          f"{len(ids)} ids")
    dim = matrix.shape[1]
    if dim < 1:
        raise ExportError("feature dimension must be positive")
    if len(set(ids)) != len(ids):
        raise ExportError("duplicate record ids")
    if not np.all(np.isfinite(matrix)):
        raise ExportError("non-finite feature values")
    if masking not in (None, MASKING_MASKED, MASKING_WHOLE):
        raise ExportError(f"unknown masking arm {masking!r}")

    chunks = [HEADER.pack(MAGIC, VERSION, dim, len(ids))]
    for rid, row in zip(ids, matrix):
        id_bytes = rid.encode("utf-8")
        if len(id_bytes) > 0xFFFF:
            raise ExportError(f"record id too long: {rid[:32]!r}...")
        chunks.append(struct.pack("<H", len(id_bytes)))
        chunks.append(id_bytes)
        chunks.append(row.tobytes())

    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    atomic_write(out, b"".join(chunks))

    meta = {
        "provider": provider,
        "masking": masking,
        "created_unix": int(time.time()) if created_unix is None else created_unix,
    }
    meta_bytes = (json.dumps(meta, indent=2, sort_keys=True) + "\n").encode("utf-8")
    atomic_write(Path(str(out) + ".meta.json"), meta_bytes)
