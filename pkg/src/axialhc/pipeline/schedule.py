"""Learning-rate schedule: linear warmup from zero, then cosine decay to zero."""
from __future__ import annotations

import math

from ..errors import ContractError


def warmup_cosine(epoch: int, epochs: int, peak_lr: float, warmup_epochs: int) -> float:
    if not 0 <= epoch < epochs:
        raise ContractError(f"epoch {epoch} outside [0, {epochs})")
    if epoch < warmup_epochs:
        return peak_lr * ((epoch + 1) / warmup_epochs)
    span = epochs - 1 - warmup_epochs
    if span <= 0:
        return peak_lr
    return peak_lr * 0.5 * (1.0 + math.cos(math.pi * (epoch - warmup_epochs) / span))


def lr_schedule(epoch: int, cfg) -> float:
    """Learning rate for a 0-based ``epoch`` under ``cfg`` (needs epochs, peak_lr, warmup_epochs).

    The warmup reaches ``peak_lr`` on its last epoch, the cosine starts at
    ``peak_lr`` on the next one and lands on exactly zero at the final epoch.
    """
    return warmup_cosine(epoch, cfg.epochs, cfg.peak_lr, cfg.warmup_epochs)
