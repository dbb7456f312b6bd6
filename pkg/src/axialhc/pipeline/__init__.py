"""Data ingestion, learning-rate schedule, checkpoints and the training loop."""
from .checkpoint import load_checkpoint, save_checkpoint
from .data import Batch, Dataset, Splits, augment, load_cifar, normalize
from .schedule import lr_schedule
from .training import SGD, TrainConfig, TrainResult, evaluate, load_network, train

__all__ = ["Batch", "Dataset", "SGD", "Splits", "TrainConfig", "TrainResult", "augment", "evaluate",
           "load_checkpoint", "load_cifar", "load_network", "lr_schedule", "normalize", "save_checkpoint",
           "train"]
