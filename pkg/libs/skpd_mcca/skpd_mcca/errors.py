from __future__ import annotations


class SkpdError(Exception):
    """Root of every error raised by the library."""


class DimensionError(SkpdError, ValueError):
    pass


class NumericalError(SkpdError, ArithmeticError):
    def __init__(
        self,
        message: str,
        *,
        iteration: int | None = None,
        eigenvalue: float | None = None,
    ) -> None:
        super().__init__(message)
        self.iteration = iteration
        self.eigenvalue = eigenvalue


class GenerationError(SkpdError):
    pass


class PreprocessingError(SkpdError, ValueError):
    pass


class ModelSelectionError(SkpdError):
    """Every cell of a hyper-parameter grid failed."""


class StorageError(SkpdError):
    """A tensor, dataset or model file on disk is missing or malformed."""
