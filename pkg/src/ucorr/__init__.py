"""Monocular wire segmentation and depth estimation with a temporal
correlation layer, on a minimal numpy autodiff engine."""

from .correlation import CorrConfig, correlate, correlate_oracle
from .losses import LossConfig, depth_mae, msssim, total_loss, wire_loss
from .metrics import EvalReport, MetricAccumulator
from .model import Model, ModelConfig, build_model, make_variant_suite
from .optim import SGD, lr_at_epoch
from .tensor import Tensor, gradient_check
from .train import TrainConfig, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "CorrConfig", "correlate", "correlate_oracle",
    "LossConfig", "wire_loss", "depth_mae", "msssim", "total_loss",
    "EvalReport", "MetricAccumulator",
    "Model", "ModelConfig", "build_model", "make_variant_suite",
    "SGD", "lr_at_epoch",
    "Tensor", "gradient_check",
    "TrainConfig", "train", "evaluate",
]
