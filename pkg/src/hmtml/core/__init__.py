from .config import EncodingConfig, HmtmlConfig, Settings, get_settings
from .errors import (
    GenerationFailureError,
    HmtmlError,
    IngestionError,
    ModelFileError,
    RejectedInputError,
    SolverDivergenceError,
)
from .models import Codebook, DomainData, KpcaModel, Metric, PairSet, SolverState, TaskWeights

__all__ = [
    "EncodingConfig",
    "HmtmlConfig",
    "Settings",
    "get_settings",
    "HmtmlError",
    "RejectedInputError",
    "IngestionError",
    "GenerationFailureError",
    "SolverDivergenceError",
    "ModelFileError",
    "Codebook",
    "DomainData",
    "KpcaModel",
    "Metric",
    "PairSet",
    "SolverState",
    "TaskWeights",
]
