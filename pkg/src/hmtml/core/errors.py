from enum import Enum
from typing import Any, Dict, List, Optional


class ErrorCategory(Enum):
    VALIDATION = "validation"  # malformed or inconsistent input
    DATA = "data"              # ingestion / file content
    GENERATION = "generation"  # randomized construction gave up
    SOLVER = "solver"          # numerical failure during optimization
    IO = "io"                  # model / result file handling


class HmtmlError(Exception):
    """Base class for every error raised by the package."""

    category: ErrorCategory = ErrorCategory.VALIDATION

    def __init__(self, message: str, **context: Any):
        super().__init__(message)
        self.message = message
        self.context: Dict[str, Any] = context

    def to_dict(self) -> Dict[str, Any]:
        return {
            "error": type(self).__name__,
            "category": self.category.value,
            "message": self.message,
            **{k: v for k, v in self.context.items() if k != "trace"},
        }


class RejectedInputError(HmtmlError, ValueError):
    """Inputs violate an operation's preconditions."""

    category = ErrorCategory.VALIDATION


class IngestionError(HmtmlError):
    """A domain file could not be read."""

    category = ErrorCategory.DATA

    def __init__(self, message: str, path: str, line: Optional[int] = None, **context: Any):
        location = f"{path}:{line}" if line is not None else path
        super().__init__(f"{location}: {message}", path=path, line=line, **context)
        self.path = path
        self.line = line


class GenerationFailureError(HmtmlError):
    """Bounded resampling could not satisfy the required invariants."""

    category = ErrorCategory.GENERATION


class SolverDivergenceError(HmtmlError):
    """The objective or its gradient stopped being finite."""

    category = ErrorCategory.SOLVER

    def __init__(self, message: str, trace: Optional[List[float]] = None, **context: Any):
        super().__init__(message, trace=list(trace or []), **context)
        self.trace: List[float] = list(trace or [])


class ModelFileError(HmtmlError):
    """A model file is malformed."""

    category = ErrorCategory.IO
