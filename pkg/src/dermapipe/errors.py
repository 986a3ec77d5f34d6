"""Exception types shared across the pipeline.

Every error raised by this package derives from :class:`DermapipeError`, so
callers can catch one base class. The CLI maps subfamilies to exit codes
(config -> 2, data -> 3, backend -> 4).
"""


class DermapipeError(Exception):
    """Base class for all pipeline errors."""


# --- manifest / splits ---------------------------------------------------

class MissingFile(DermapipeError):
    pass


class ParseError(DermapipeError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DuplicateId(DermapipeError):
    def __init__(self, record_id: str):
        self.record_id = record_id
        super().__init__(f"duplicate record id {record_id!r}")


class InvalidLabel(DermapipeError):
    def __init__(self, record_id: str, value):
        self.record_id = record_id
        self.value = value
        super().__init__(f"record {record_id!r}: label {value!r} not in [0, 3]")


class EmptyManifest(DermapipeError):
    pass


class FractionOutOfRange(DermapipeError):
    pass


# --- image handling ------------------------------------------------------

class UnsupportedFormat(DermapipeError):
    pass


class CorruptFile(DermapipeError):
    pass


class ZeroDimension(DermapipeError):
    pass


class EmptyMaskFallback(DermapipeError):
    """Mask coverage is below the floor; caller should use the whole image."""


# --- feature interchange -------------------------------------------------

class BadMagic(DermapipeError):
    pass


class UnsupportedVersion(DermapipeError):
    pass


class TruncatedFile(DermapipeError):
    pass


class DimMismatch(DermapipeError):
    pass


class NonFinite(DermapipeError):
    def __init__(self, record_id: str):
        self.record_id = record_id
        super().__init__(f"record {record_id!r} contains non-finite values")


class UnknownId(DermapipeError):
    def __init__(self, record_id: str):
        self.record_id = record_id
        super().__init__(f"unknown record id {record_id!r}")


class ProvenanceMismatch(DermapipeError):
    pass


class IoError(DermapipeError):
    pass


# --- retrieval -----------------------------------------------------------

class EmptyCandidates(DermapipeError):
    pass


# --- segmentation backends -----------------------------------------------

class BackendFailure(DermapipeError):
    def __init__(self, message: str, exit_status: int | None = None, stderr: str = ""):
        self.exit_status = exit_status
        self.stderr = stderr
        if stderr:
            message = f"{message}: {stderr.strip()}"
        super().__init__(message)


class MalformedBackendOutput(DermapipeError):
    pass


class BackendTimeout(DermapipeError):
    pass


# --- classifier ----------------------------------------------------------

class ShapeMismatch(DermapipeError):
    pass


class StaleCache(DermapipeError):
    pass


class MissingFeature(DermapipeError):
    def __init__(self, record_id: str):
        self.record_id = record_id
        super().__init__(f"no feature vector for record {record_id!r}")


class MissingLabel(DermapipeError):
    def __init__(self, record_id: str):
        self.record_id = record_id
        super().__init__(f"no label for record {record_id!r}")


# --- metrics -------------------------------------------------------------

class LengthMismatch(DermapipeError):
    pass


class EmptyInput(DermapipeError):
    pass


class EmptyList(DermapipeError):
    pass


# --- experiments ---------------------------------------------------------

class ConfigError(DermapipeError):
    pass


class MissingReport(DermapipeError):
    pass
