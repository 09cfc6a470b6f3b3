"""Convolutional-autoencoder anomaly detection for malaria cell images, in numpy."""
from .model import Model, ModelConfig, build_model, load_checkpoint, model_backward, model_forward, save_checkpoint
from .pipeline import calibrate_threshold, classify, compute_metrics, evaluate, per_image_loss, reconstruct, train

__version__ = "0.1.0"

__all__ = [
    "Model",
    "ModelConfig",
    "build_model",
    "calibrate_threshold",
    "classify",
    "compute_metrics",
    "evaluate",
    "load_checkpoint",
    "model_backward",
    "model_forward",
    "per_image_loss",
    "reconstruct",
    "save_checkpoint",
    "train",
]
