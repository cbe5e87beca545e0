"""Multi-source domain adaptation with label-wise moment matching,
confidence-thresholded pseudolabels, and ensembles of diversified
feature extractors, plus an analysis suite for the related
generalization-bound quantities.
"""

from .data import DomainDataset, SyntheticSpec
from .model import EnsembleModel, ModelConfig, init_model
from .objective import LossWeights, PseudolabelAssignment
from .tensor import Tensor
from .trainer import TrainConfig, OptimizerConfig, run_variant

__all__ = [
    "DomainDataset", "SyntheticSpec", "EnsembleModel", "ModelConfig",
    "init_model", "LossWeights", "PseudolabelAssignment", "Tensor",
    "TrainConfig", "OptimizerConfig", "run_variant",
]
