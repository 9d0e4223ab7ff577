"""Few-shot dense prediction by hierarchical token matching.

A single shared model adapts to arbitrary dense prediction tasks through a
small set of task-specific parameters: per-layer bias vectors and relative
position bias tables in the image encoder, a row-stochastic matrix mixing the
feature levels fed to each matching head, and a 1x1 decoder head.  Episodic
meta-training learns the shared weights; few-shot fine-tuning adapts the
task-specific set from a handful of labeled examples.
"""

from .config import ModelConfig
from .errors import (
    CheckpointError,
    ConfigError,
    InputError,
    NoPoseError,
    RegistrationError,
    ResolutionMismatchError,
    SamplerError,
    ShapeError,
    TokenMatchError,
    TrainStepError,
    UndefinedMetricError,
)
from .matching import normalize_lambda, reweight_features
from .model import FewShotDenseModel
from .registry import Registry, TaskParams
from .tasks import DatasetEntry, DatasetManifest, Episode, TaskDescriptor, TaskGroup

__all__ = [
    "ModelConfig",
    "FewShotDenseModel",
    "Registry",
    "TaskParams",
    "DatasetManifest",
    "DatasetEntry",
    "TaskDescriptor",
    "TaskGroup",
    "Episode",
    "normalize_lambda",
    "reweight_features",
    "TokenMatchError",
    "ConfigError",
    "InputError",
    "ShapeError",
    "RegistrationError",
    "ResolutionMismatchError",
    "CheckpointError",
    "SamplerError",
    "TrainStepError",
    "UndefinedMetricError",
    "NoPoseError",
]

__version__ = "0.1.0"
