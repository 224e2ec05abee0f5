"""Meta-learned per-example weights for training on related-task data."""
from ._backend import BACKEND
from .meta import MetaTrainConfig, TrainingDiverged, TrainState, train
from .report import RunReport, aggregate
from .strategies import REGIMES, STRATEGIES, WeightingStrategy, run_regime

__version__ = "0.1.0"

__all__ = ["BACKEND", "MetaTrainConfig", "REGIMES", "RunReport", "STRATEGIES", "TrainState", "TrainingDiverged",
           "WeightingStrategy", "aggregate", "run_regime", "train"]
