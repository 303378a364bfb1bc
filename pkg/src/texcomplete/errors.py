"""Exception and warning types raised across the package."""


class TexCompleteError(Exception):
    """Base class for all package errors."""


class ValidationError(TexCompleteError, ValueError):
    """Bad user-supplied data (files, config, shapes). Maps to CLI exit code 1."""


class MeshError(ValidationError):
    pass


class NonPositiveDepth(TexCompleteError):
    def __init__(self, vertex: int, depth: float):
        super().__init__(f"vertex {vertex} has non-positive camera depth {depth:g}")
        self.vertex = vertex
        self.depth = depth


class ShapeMismatch(ValidationError):
    pass


class MismatchedSize(ShapeMismatch):
    pass


class ZeroEmbedding(TexCompleteError):
    pass


class NonFiniteGradient(TexCompleteError):
    pass


class DivergedLoss(TexCompleteError):
    pass


class IllConditioned(TexCompleteError):
    pass


class ObjSyntaxError(ValidationError):
    def __init__(self, line: int, msg: str):
        super().__init__(f"line {line}: {msg}")
        self.line = line


class IndexOutOfRange(ObjSyntaxError):
    pass


class MissingTexCoord(ObjSyntaxError):
    pass


class SchemaError(ValidationError):
    def __init__(self, path: str, msg: str):
        super().__init__(f"{path}: {msg}")
        self.path = path


class ViewError(TexCompleteError):
    """Wraps a failure inside the progressive loop with the view index."""

    def __init__(self, view: int, cause: Exception):
        super().__init__(f"view {view}: {cause}")
        self.view = view
        self.__cause__ = cause


class DegenerateNormalWarning(UserWarning):
    pass


class EmptyRasterWarning(UserWarning):
    pass


class UvOverlapWarning(UserWarning):
    pass
