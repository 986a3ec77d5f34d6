"""Typed errors for the export tool."""


class ExportError(Exception):
    """Base class; the CLI turns these into a message on stderr + exit 1."""


class CheckpointLoadError(ExportError):
    """Checkpoint file missing, unreadable, or incompatible with the model."""


class PreprocessMismatch(ExportError):
    """Self-test against the published preprocessing vectors failed."""


class JobFileError(ExportError):
    """Backend job file missing, malformed, or referencing absent inputs."""
