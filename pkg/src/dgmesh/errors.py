"""Exception hierarchy shared by every dgmesh module."""


class DGMeshError(Exception):
    """Base class; ``code`` is the machine-readable name used by the CLI and service."""

    code = "DGMeshError"

    def __init__(self, message: str = "", **details):
        super().__init__(message or self.code)
        self.details = details


class InvalidRotation(DGMeshError):
    code = "InvalidRotation"


class InvalidScale(DGMeshError):
    code = "InvalidScale"


class OutOfDomain(DGMeshError):
    code = "OutOfDomain"

    def __init__(self, index: int, message: str = ""):
        super().__init__(message or f"point {index} lies outside the grid domain", index=index)
        self.index = index


class UnsupportedResolution(DGMeshError):
    code = "UnsupportedResolution"


class EmptyInput(DGMeshError):
    code = "EmptyInput"


class AdjointMismatch(DGMeshError):
    code = "AdjointMismatch"


class NotDifferentiable(DGMeshError):
    code = "NotDifferentiable"


class DegenerateMesh(DGMeshError):
    code = "DegenerateMesh"


class SizeMismatch(DGMeshError):
    code = "SizeMismatch"


class TooLarge(DGMeshError):
    code = "TooLarge"


class GridMismatch(DGMeshError):
    code = "GridMismatch"


class DivergenceDetected(DGMeshError):
    code = "DivergenceDetected"

    def __init__(self, message: str = "", best_state=None, trace=None):
        super().__init__(message or "non-finite loss encountered")
        self.best_state = best_state
        self.trace = trace


class ConfigError(DGMeshError):
    code = "ConfigError"


class PlyError(DGMeshError):
    """Structured PLY parse failure; ``offset`` is the byte offset where parsing stopped."""

    code = "PlyError"

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})", offset=offset)
        self.offset = offset


class MalformedHeader(PlyError):
    code = "MalformedHeader"


class MissingProperty(PlyError):
    code = "MissingProperty"


class TruncatedBody(PlyError):
    code = "TruncatedBody"


class IoError(DGMeshError):
    code = "IoError"


class FileNotFound(IoError):
    code = "FileNotFound"
