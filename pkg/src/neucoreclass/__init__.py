"""Self-supervised time-series anomaly detection with learnable neural
transformations trained on contrastive, reconstruction and transformation
classification proxy tasks."""

from .data import (
    AnomalyProblem,
    RawDataset,
    TrainValSplit,
    derive_problems,
    load_dataset,
    split_train_val,
    znormalize,
)
from .estimator import NeuCoReClassAD
from .evaluation import aggregate, aupr, auroc
from .model import ModelConfig, init_model, load_checkpoint, save_checkpoint
from .scoring import ScoreBreakdown, score_batch, score_sample
from .training import TrainConfig, run_ablation, run_sensitivity, train

__version__ = "0.1.0"

__all__ = [
    "AnomalyProblem", "RawDataset", "TrainValSplit", "derive_problems", "load_dataset",
    "split_train_val", "znormalize", "NeuCoReClassAD", "aggregate", "aupr", "auroc", "ModelConfig",
    "init_model", "load_checkpoint", "save_checkpoint", "ScoreBreakdown", "score_batch",
    "score_sample", "TrainConfig", "run_ablation", "run_sensitivity", "train",
]
