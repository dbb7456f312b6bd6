"""SGD training loop, evaluation and checkpoint plumbing for the network families."""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .. import tensorcore as tc
from ..blocks import ArchConfig, Network, build_network, format_config, parse_config
from ..errors import ConfigurationError, NonFiniteLossError
from ..layers import Module, set_probe
from ..tensorcore import Tensor
from .checkpoint import load_checkpoint, save_checkpoint
from .data import Dataset, Splits, batch_indices, load_cifar, make_batch, normalize
from .schedule import lr_schedule

METRICS_COLUMNS = ("epoch", "lr", "train_loss", "val_acc")


@dataclass
class TrainConfig:
    epochs: int = 150
    batch_size: int = 128
    peak_lr: float = 0.1
    warmup_epochs: int = 10
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0
    arch: ArchConfig = field(default_factory=ArchConfig)
    dataset: str = "cifar10"
    # None: on for CIFAR, off for generic-dir
    augment: bool | None = None
    image_size: int = 32  # generic-dir only
    train_subset: int | None = None
    val_subset: int | None = None
    eval_batch_size: int = 256

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be positive (got {self.epochs})")
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ConfigurationError(
                f"warmup_epochs must lie in [0, epochs) (got {self.warmup_epochs} of {self.epochs})")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be at least 1 (got {self.batch_size})")

    @property
    def uses_augmentation(self) -> bool:
        return self.dataset != "generic-dir" if self.augment is None else self.augment

    def to_text(self) -> str:
        values = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "arch"}
        return format_config(values) + self.arch.to_text()

    @classmethod
    def from_text(cls, text: str) -> "TrainConfig":
        values = parse_config(text)
        arch_keys = {f.name for f in fields(ArchConfig)}
        own_keys = {f.name for f in fields(cls)} - {"arch"}
        unknown = set(values) - arch_keys - own_keys
        if unknown:
            raise ConfigurationError(f"unknown config keys: {', '.join(sorted(unknown))}")
        arch = ArchConfig.from_mapping({k: v for k, v in values.items() if k in arch_keys})
        return cls(arch=arch, **{k: v for k, v in values.items() if k in own_keys})


class SGD:
    """Momentum SGD with coupled L2 weight decay: ``v = mu v + g + wd p``; ``p -= lr v``."""

    def __init__(self, params: list[Tensor], momentum: float = 0.9, weight_decay: float = 0.0):
        self.params = params
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [np.zeros_like(p.data) for p in params]

    def step(self, lr: float) -> None:
        for p, v in zip(self.params, self.velocity):
            if p.grad is None:
                continue
            g = p.grad + self.weight_decay * p.data if self.weight_decay else p.grad
            v *= self.momentum
            v += g
            p.data -= p.data.dtype.type(lr) * v


@dataclass
class EpochLog:
    epoch: int
    lr: float
    train_loss: float
    val_acc: float
    train_acc: float
    seconds: float


@dataclass
class TrainResult:
    network: Network
    history: list[EpochLog]
    final_train_acc: float
    mean: np.ndarray
    std: np.ndarray
    checkpoint: Path | None = None

    @property
    def losses(self) -> list[float]:
        return [h.train_loss for h in self.history]


def first_nonfinite_layer(net: Module, x: Tensor) -> str | None:
    """Re-run ``x`` and name the first module whose output contains NaN or inf."""
    names = {id(m): name or "network" for name, m in net.named_modules()}
    hits: list[str] = []

    def probe(module, out):
        if not hits and not np.all(np.isfinite(out.data)):
            hits.append(f"{names.get(id(module), '?')} ({type(module).__name__})")

    set_probe(probe)
    try:
        with tc.no_grad():
            net(x)
    finally:
        set_probe(None)
    return hits[0] if hits else None


def checkpoint_meta(net: Network, cfg: TrainConfig | None, mean, std, **extra) -> dict:
    meta = {"arch": net.config.to_text(), "mean": list(map(float, mean)), "std": list(map(float, std))}
    if cfg is not None:
        meta["train_config"] = cfg.to_text()
    meta.update(extra)
    return meta


def save_network(path, net: Network, mean, std, cfg: TrainConfig | None = None, **extra) -> None:
    save_checkpoint(path, net.state_dict(), checkpoint_meta(net, cfg, mean, std, **extra))


def load_network(path) -> tuple[Network, dict]:
    tensors, meta = load_checkpoint(path)
    if "arch" not in meta:
        raise ConfigurationError(f"{path}: checkpoint carries no architecture")
    arch = ArchConfig.from_mapping(parse_config(meta["arch"]))
    dtype = next(iter(tensors.values())).dtype if tensors else tc.get_default_dtype()
    with tc.precision(dtype):
        net = build_network(arch, seed=None)
    net.load_state_dict(tensors)
    return net, meta


def predict(net: Network, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Arg-max class for already-normalized images, in eval mode."""
    was_training = net.training
    net.eval()
    preds = []
    try:
        with tc.no_grad():
            for start in range(0, len(images), batch_size):
                chunk = Tensor(images[start:start + batch_size].astype(net.stem_bn.gamma.dtype))
                preds.append(net(chunk).data.argmax(axis=1))
    finally:
        net.train(was_training)
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def evaluate(checkpoint, dataset: Dataset | Splits, mean=None, std=None, batch_size: int = 256) -> float:
    """Top-1 accuracy of a checkpoint file (or a network plus statistics) on ``dataset``.

    A :class:`Splits` argument is evaluated on its test split.
    """
    if isinstance(checkpoint, Network):
        net = checkpoint
        if mean is None or std is None:
            raise ConfigurationError("evaluating a live network needs the normalization mean and std")
    else:
        net, meta = load_network(checkpoint)
        mean = meta["mean"] if mean is None else mean
        std = meta["std"] if std is None else std
    data = dataset.test if isinstance(dataset, Splits) else dataset
    arch = net.config
    if data.num_classes != arch.num_classes:
        raise ConfigurationError(
            f"dataset has {data.num_classes} classes but the network predicts {arch.num_classes}")
    if data.images.shape[1:] != (3,) + tuple(arch.input_size):
        raise ConfigurationError(
            f"images are {data.images.shape[1:]} but the network expects 3x{arch.input_size[0]}x{arch.input_size[1]}")
    if len(data) == 0:
        return float("nan")
    preds = predict(net, normalize(data.images, mean, std), batch_size)
    return float(np.mean(preds == data.labels))


def _resolve_data(cfg: TrainConfig, data) -> Splits:
    if isinstance(data, Splits):
        return data
    return load_cifar(data, cfg.dataset, side=cfg.image_size, num_classes=cfg.arch.num_classes)


def train(cfg: TrainConfig, data, out_dir=None, log=None, network: Network | None = None) -> TrainResult:
    """Train ``network`` (default: a fresh one built from ``cfg.arch`` and ``cfg.seed``).

    ``data`` is a :class:`Splits` or a dataset directory. With ``out_dir`` set,
    ``metrics.csv`` gains a row and ``checkpoint.bin`` is rewritten after every
    epoch.
    """
    splits = _resolve_data(cfg, data)
    if splits.num_classes != cfg.arch.num_classes:
        raise ConfigurationError(
            f"dataset has {splits.num_classes} classes but arch.num_classes is {cfg.arch.num_classes}")
    if splits.train.images.shape[2:] != tuple(cfg.arch.input_size):
        raise ConfigurationError(
            f"images are {splits.train.images.shape[2:]} but arch.input_size is {cfg.arch.input_size}")
    if network is not None and network.config != cfg.arch:
        raise ConfigurationError("network architecture differs from cfg.arch")
    net = network if network is not None else build_network(cfg.arch, seed=cfg.seed)
    data_rng = np.random.default_rng([cfg.seed, 1])
    train_set = splits.train.take(cfg.train_subset, data_rng)
    val_set = splits.test.take(cfg.val_subset, data_rng)
    mean, std = splits.mean, splits.std
    val_images = normalize(val_set.images, mean, std)
    opt = SGD(net.parameters(), cfg.momentum, cfg.weight_decay)

    out = Path(out_dir) if out_dir is not None else None
    metrics_file = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.txt").write_text(cfg.to_text())
        metrics_file = (out / "metrics.csv").open("w", newline="")
        writer = csv.writer(metrics_file)
        writer.writerow(METRICS_COLUMNS)

    history: list[EpochLog] = []
    try:
        for epoch in range(cfg.epochs):
            start = time.perf_counter()
            lr = lr_schedule(epoch, cfg)
            net.train()
            loss_sum, correct = 0.0, 0
            for step, idx in enumerate(batch_indices(len(train_set), cfg.batch_size, data_rng)):
                batch = make_batch(train_set, idx, mean, std, data_rng, cfg.uses_augmentation)
                x = Tensor(batch.images.astype(tc.get_default_dtype()))
                logits = net(x)
                loss = tc.softmax_cross_entropy(logits, batch.labels)
                value = float(loss.data)
                if not math.isfinite(value):
                    where = first_nonfinite_layer(net, x) or "loss"
                    raise NonFiniteLossError(
                        f"non-finite loss {value} at epoch {epoch} step {step}; first non-finite output: {where}")
                net.zero_grad()
                loss.backward()
                opt.step(lr)
                loss_sum += value * len(idx)
                correct += int(np.sum(logits.data.argmax(axis=1) == batch.labels))
            train_loss = loss_sum / len(train_set)
            val_acc = float(np.mean(predict(net, val_images, cfg.eval_batch_size) == val_set.labels)) \
                if len(val_set) else float("nan")
            entry = EpochLog(epoch, lr, train_loss, val_acc, correct / len(train_set),
                             time.perf_counter() - start)
            history.append(entry)
            if out is not None:
                writer.writerow([epoch, repr(lr), repr(train_loss), repr(val_acc)])
                metrics_file.flush()
                save_network(out / "checkpoint.bin", net, mean, std, cfg, epoch=epoch,
                             rng_state=data_rng.bit_generator.state)
            if log is not None:
                log(f"epoch {epoch:3d}  lr {lr:.5f}  loss {train_loss:.4f}  "
                    f"train acc {entry.train_acc:.3f}  val acc {val_acc:.3f}  ({entry.seconds:.1f}s)")
    finally:
        if metrics_file is not None:
            metrics_file.close()

    final_acc = evaluate(net, train_set, mean, std, cfg.eval_batch_size)
    ckpt = None
    if out is not None:
        ckpt = out / "checkpoint.bin"
        save_network(ckpt, net, mean, std, cfg, epoch=cfg.epochs - 1,
                     rng_state=data_rng.bit_generator.state, final_train_acc=final_acc)
    return TrainResult(net, history, final_acc, mean, std, ckpt)


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]
