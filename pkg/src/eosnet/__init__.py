"""End-of-session probability modelling for online-learning activity logs.

The package turns raw per-student action logs into gap-based sessions,
encodes each action as a fixed 13-dimensional feature vector, trains a
recurrent network (LSTM + two ReLU layers + sigmoid output, hand-derived
gradients) to score how likely each action is to be the last one of its
session, and evaluates the scores with stratified ROC-AUC reports.  A
seeded synthetic log generator stands in for production data.
"""

__version__ = "0.1.0"

from eosnet.errors import (
    CheckpointError,
    DataValidationError,
    LogParseError,
    NumericalFault,
)

__all__ = [
    "CheckpointError",
    "DataValidationError",
    "LogParseError",
    "NumericalFault",
    "__version__",
]
