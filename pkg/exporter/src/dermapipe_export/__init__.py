"""Offline export tool for the dermapipe classification pipeline.

Runs the frozen backbones (or seeded stand-ins) and writes the pipeline's
interchange files: DDXF embedding files, backend mask PNGs via the job-file
protocol, and fully synthetic oracle datasets.
"""

__version__ = "0.1.0"

from .errors import CheckpointLoadError, ExportError, JobFileError, PreprocessMismatch
from .export import export_features, read_manifest
from .selftest import run_selftest
from .synthetic import make_synthetic

__all__ = [
    "CheckpointLoadError",
    "ExportError",
    "JobFileError",
    "PreprocessMismatch",
    "export_features",
    "make_synthetic",
    "read_manifest",
    "run_selftest",
    "__version__",
]
