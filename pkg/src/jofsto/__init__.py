"""Joint feature scoring, subsampling and task training for experiment design."""

from .baselines import BaselineResult, random_select, train_baseline
from .data import AcquisitionScheme, Dataset, normalize, simulate, split
from .estimator import JofstoSelector, RandomSubsetRegressor, halving_schedule
from .exceptions import ChecksumError, ConfigError, FormatError, TrainingAbort
from .metrics import jaccard, mse_metric, seed_stability
from .nn import AdamState, DenseNet
from .trainer import NetConfig, Networks, Schedule, StepArtifact, infer, train

__version__ = "0.1.0"

__all__ = [
    "AcquisitionScheme", "AdamState", "BaselineResult", "ChecksumError", "ConfigError",
    "Dataset", "DenseNet", "FormatError", "JofstoSelector", "NetConfig", "Networks",
    "RandomSubsetRegressor", "Schedule", "StepArtifact", "TrainingAbort", "halving_schedule",
    "infer", "jaccard", "mse_metric", "normalize", "random_select", "seed_stability",
    "simulate", "split", "train", "train_baseline",
]
