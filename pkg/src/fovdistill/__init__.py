"""Self-distillation for cross-view localization on a synthetic world."""
from __future__ import annotations

from .errors import GenerationFailure, InvalidArgument, NumericError, TrainingFailure

__version__ = "0.1.0"

__all__ = ["GenerationFailure", "InvalidArgument", "NumericError", "TrainingFailure", "__version__"]
