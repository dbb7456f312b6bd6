"""Bottleneck blocks and the four-stage ResNet assembler for every family."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from . import tensorcore as tc
from .errors import ConfigurationError
from .layers import (BatchNorm2d, Conv2d, CostRow, Dense, GlobalAvgPool, Module, PHMDense, QConv2d,
                     ReLU, VConv2d, axial_vconv_pair)
from .tensorcore import Tensor

FAMILIES = ("quaternion", "vectormap", "qphm", "axial", "resnet")
DEPTHS = {26: (1, 2, 4, 1), 35: (2, 3, 4, 2), 50: (3, 4, 6, 3)}
# channel grouping each family's convolutions require
_GROUPING = {"quaternion": 4, "qphm": 4, "axial": 12, "vectormap": 3, "resnet": 1}
_STEM_GROUPING = {"quaternion": 4, "qphm": 4, "axial": 4, "vectormap": 3, "resnet": 1}


@dataclass
class ArchConfig:
    family: str = "axial"
    multipliers: tuple[int, ...] = (1, 2, 4, 1)
    widths: tuple[int, ...] = (120, 240, 480, 960)
    stem_channels: int = 120
    num_classes: int = 10
    input_size: tuple[int, int] = (32, 32)
    phm_n: int = 5
    # None selects the family default: 2 for axial, 4 otherwise
    expansion: int | None = None

    def __post_init__(self):
        self.multipliers = tuple(int(m) for m in self.multipliers)
        self.widths = tuple(int(w) for w in self.widths)
        self.input_size = tuple(int(s) for s in self.input_size)

    @property
    def block_expansion(self) -> int:
        if self.expansion is not None:
            return self.expansion
        return 2 if self.family == "axial" else 4

    @property
    def uses_phm_head(self) -> bool:
        return self.family in ("qphm", "axial")

    @property
    def feature_width(self) -> int:
        return self.block_expansion * self.widths[-1]

    def to_text(self) -> str:
        return format_config(asdict(self))

    @classmethod
    def from_mapping(cls, values: dict) -> "ArchConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in values.items() if k in known})


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    if key in ("multipliers", "widths"):
        return tuple(int(v) for v in raw.replace(" ", "").split(",") if v)
    if key == "input_size":
        parts = raw.lower().replace(",", "x").split("x")
        return (int(parts[0]), int(parts[-1]))
    if raw.lower() in ("none", ""):
        return None
    if raw.lower() in ("true", "false"):
        return raw.lower() == "true"
    for cast in (int, float):
        try:
            return cast(raw)
        except ValueError:
            pass
    return raw


def parse_config(text: str) -> dict:
    """Parse ``key=value`` lines; ``#`` starts a comment, lists are comma separated."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected key=value, got {line!r}")
        key, raw = line.split("=", 1)
        key = key.strip()
        values[key] = _parse_value(key, raw)
    return values


def format_config(values: dict) -> str:
    lines = []
    for key, value in values.items():
        if key == "input_size":
            value = f"{value[0]}x{value[1]}"
        elif isinstance(value, (tuple, list)):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key}={value}")
    return "\n".join(lines) + "\n"


def named_arch(name: str, **overrides) -> ArchConfig:
    """``axial-26``, ``quaternion-50`` ... for every family and depth 26/35/50."""
    try:
        family, depth = name.rsplit("-", 1)
        multipliers = DEPTHS[int(depth)]
    except (ValueError, KeyError):
        raise ConfigurationError(f"unknown architecture name {name!r}") from None
    if family not in FAMILIES:
        raise ConfigurationError(f"unknown family {family!r}")
    return ArchConfig(family=family, multipliers=multipliers, **overrides)


def validate_config(cfg: ArchConfig) -> list[str]:
    """Every reason ``cfg`` cannot be built, as ``stage: constraint (actual value)`` strings."""
    problems = []
    if cfg.family not in FAMILIES:
        return [f"family: must be one of {', '.join(FAMILIES)} (got {cfg.family!r})"]
    if len(cfg.multipliers) != 4 or len(cfg.widths) != 4:
        problems.append(f"arch: needs 4 multipliers and 4 widths (got {len(cfg.multipliers)}, {len(cfg.widths)})")
        return problems
    if any(m < 1 for m in cfg.multipliers):
        problems.append(f"arch: multipliers must be positive (got {list(cfg.multipliers)})")
    if cfg.num_classes < 1:
        problems.append(f"head: num_classes must be positive (got {cfg.num_classes})")
    if cfg.block_expansion < 1:
        problems.append(f"arch: expansion must be positive (got {cfg.block_expansion})")
    g = _GROUPING[cfg.family]
    stem_g = _STEM_GROUPING[cfg.family]
    if cfg.stem_channels % stem_g:
        problems.append(f"stem: channels not divisible by {stem_g} (got {cfg.stem_channels})")
    for idx, width in enumerate(cfg.widths, 1):
        if width < 1 or width % g:
            problems.append(f"group {idx}: width not divisible by {g} (got {width})")
        out = cfg.block_expansion * width
        out_g = 4 if cfg.family == "axial" else g
        if out % out_g:
            problems.append(f"group {idx}: output channels not divisible by {out_g} (got {out})")
    if cfg.uses_phm_head:
        n = cfg.phm_n
        if n < 1:
            problems.append(f"head: phm_n must be positive (got {n})")
        else:
            if cfg.num_classes % n:
                problems.append(f"head: num_classes not divisible by phm_n={n} (got {cfg.num_classes})")
            if cfg.feature_width % n:
                problems.append(f"head: pooled features not divisible by phm_n={n} (got {cfg.feature_width})")
    h, w = cfg.input_size
    if h < 1 or w < 1:
        problems.append(f"input: size must be positive (got {h}x{w})")
    elif h < 8 or w < 8:
        problems.append(f"input: needs at least 8x8 for three stride-2 stages (got {h}x{w})")
    return problems


def _conv_factory(family: str):
    return {"quaternion": QConv2d, "qphm": QConv2d, "axial": QConv2d,
            "vectormap": VConv2d, "resnet": Conv2d}[family]


class Bottleneck(Module):
    """Reduce (1x1), spatial stage, expand (1x1), each conv followed by batch norm.

    The spatial stage is one 3x3 conv of the family's type, or for the axial
    family a 3x1 height-axis then a 1x3 width-axis vectormap conv. ReLU follows
    every batch norm except the last, which is added to the skip path first.
    """

    def __init__(self, family: str, c_in: int, width: int, stride: int = 1, expansion: int = 4,
                 rng: np.random.Generator | None = None):
        conv = _conv_factory(family)
        self.family = family
        self.c_in, self.width, self.stride = c_in, width, stride
        self.c_out = expansion * width
        self.reduce = conv(c_in, width, (1, 1), (1, 1), (0, 0), rng)
        self.reduce_bn = BatchNorm2d(width)
        if family == "axial":
            self.spatial = list(axial_vconv_pair(width, width, stride, rng))
        else:
            self.spatial = [conv(width, width, (3, 3), (stride, stride), (1, 1), rng)]
        self.spatial_bn = [BatchNorm2d(width) for _ in self.spatial]
        self.expand = conv(width, self.c_out, (1, 1), (1, 1), (0, 0), rng)
        self.expand_bn = BatchNorm2d(self.c_out)
        self.relu = ReLU()
        self.shortcut = None
        self.shortcut_bn = None
        if stride != 1 or c_in != self.c_out:
            self.shortcut = conv(c_in, self.c_out, (1, 1), (stride, stride), (0, 0), rng)
            self.shortcut_bn = BatchNorm2d(self.c_out)

    def forward(self, x: Tensor) -> Tensor:
        out = self.relu(self.reduce_bn(self.reduce(x)))
        for conv, bn in zip(self.spatial, self.spatial_bn):
            out = self.relu(bn(conv(out)))
        out = self.expand_bn(self.expand(out))
        skip = x if self.shortcut is None else self.shortcut_bn(self.shortcut(x))
        return self.relu(out + skip)

    def trace(self, shape, rows, name):
        out = self.reduce.trace(shape, rows, f"{name}.reduce")
        out = self.reduce_bn.trace(out, rows, f"{name}.reduce_bn")
        out = self.relu.trace(out, rows, f"{name}.relu")
        for idx, (conv, bn) in enumerate(zip(self.spatial, self.spatial_bn)):
            out = conv.trace(out, rows, f"{name}.spatial.{idx}")
            out = bn.trace(out, rows, f"{name}.spatial_bn.{idx}")
            out = self.relu.trace(out, rows, f"{name}.relu")
        out = self.expand.trace(out, rows, f"{name}.expand")
        out = self.expand_bn.trace(out, rows, f"{name}.expand_bn")
        if self.shortcut is not None:
            skip = self.shortcut.trace(shape, rows, f"{name}.shortcut")
            skip = self.shortcut_bn.trace(skip, rows, f"{name}.shortcut_bn")
            if skip != out:
                raise ConfigurationError(f"{name}: skip shape {skip} != residual shape {out}")
        elif tuple(shape) != tuple(out):
            raise ConfigurationError(f"{name}: identity skip needs matching shapes, {shape} vs {out}")
        return self.relu.trace(out, rows, f"{name}.relu")


def build_axial_bottleneck(c_in, width, stride=1, expansion=2, rng=None) -> Bottleneck:
    return Bottleneck("axial", c_in, width, stride, expansion, rng)


def build_quaternion_bottleneck(c_in, width, stride=1, expansion=4, rng=None) -> Bottleneck:
    return Bottleneck("quaternion", c_in, width, stride, expansion, rng)


def build_vectormap_bottleneck(c_in, width, stride=1, expansion=4, rng=None) -> Bottleneck:
    return Bottleneck("vectormap", c_in, width, stride, expansion, rng)


def build_qphm_bottleneck(c_in, width, stride=1, expansion=4, rng=None) -> Bottleneck:
    return Bottleneck("qphm", c_in, width, stride, expansion, rng)


class Network(Module):
    """Stem, four bottleneck groups, global average pool and a dense or PHM head."""

    def __init__(self, cfg: ArchConfig, rng: np.random.Generator | None = None):
        problems = validate_config(cfg)
        if problems:
            raise ConfigurationError("invalid architecture: " + "; ".join(problems))
        self.config = cfg
        family = cfg.family
        conv = _conv_factory(family)
        self.stem_in = 4 if conv is QConv2d else 3
        self.stem = conv(self.stem_in, cfg.stem_channels, (3, 3), (1, 1), (1, 1), rng)
        self.stem_bn = BatchNorm2d(cfg.stem_channels)
        self.relu = ReLU()
        self.groups = []
        c_in = cfg.stem_channels
        for g, (width, count) in enumerate(zip(cfg.widths, cfg.multipliers)):
            blocks = []
            for b in range(count):
                stride = 2 if g > 0 and b == 0 else 1
                block = Bottleneck(family, c_in, width, stride, cfg.block_expansion, rng)
                blocks.append(block)
                c_in = block.c_out
            self.groups.append(_Group(blocks))
        self.pool = GlobalAvgPool()
        if cfg.uses_phm_head:
            self.head = PHMDense(c_in, cfg.num_classes, cfg.phm_n, rng)
        else:
            self.head = Dense(c_in, cfg.num_classes, rng)

    def prepare_input(self, x: Tensor) -> Tensor:
        """Embed RGB as pure quaternions (zero real lane, R/G/B in i/j/k) for quaternion stems."""
        if x.shape[1] == self.stem_in:
            return x
        if self.stem_in == 4 and x.shape[1] == 3:
            # interleave a zero real lane in front of the three colour lanes
            zeros = Tensor(np.zeros((x.shape[0], 1) + x.shape[2:], dtype=x.dtype))
            return tc.concat([zeros, x], axis=1)
        raise ConfigurationError(f"network expects {self.stem_in} input channels, got {x.shape[1]}")

    def forward(self, x: Tensor) -> Tensor:
        out = self.relu(self.stem_bn(self.stem(self.prepare_input(x))))
        for group in self.groups:
            out = group(out)
        return self.head(self.pool(out))

    def stage_shapes(self, input_shape=None) -> list[tuple[int, ...]]:
        """(C, H, W) after the stem and after each bottleneck group."""
        rows: list[CostRow] = []
        c, h, w = input_shape or (3,) + tuple(self.config.input_size)
        shape = self.stem.trace((self.stem_in, h, w), rows, "stem")
        shapes = [shape]
        for idx, group in enumerate(self.groups):
            shape = group.trace(shape, rows, f"groups.{idx}")
            shapes.append(shape)
        return shapes

    def trace(self, shape, rows, name="") -> tuple[int, ...]:
        prefix = f"{name}." if name else ""
        c, h, w = shape
        if c != self.stem_in and not (self.stem_in == 4 and c == 3):
            raise ConfigurationError(f"network expects {self.stem_in} input channels, got {c}")
        out = self.stem.trace((self.stem_in, h, w), rows, f"{prefix}stem")
        out = self.stem_bn.trace(out, rows, f"{prefix}stem_bn")
        out = self.relu.trace(out, rows, f"{prefix}relu")
        for idx, group in enumerate(self.groups):
            out = group.trace(out, rows, f"{prefix}groups.{idx}")
        out = self.pool.trace(out, rows, f"{prefix}pool")
        return self.head.trace(out, rows, f"{prefix}head")

    def layer_count(self) -> int:
        """Depth by the baseline convention: stem + 3 per bottleneck + head."""
        return 1 + 3 * sum(self.config.multipliers) + 1


class _Group(Module):
    def __init__(self, blocks: list[Bottleneck]):
        self.blocks = blocks

    def forward(self, x):
        for block in self.blocks:
            x = block(x)
        return x

    def trace(self, shape, rows, name):
        for idx, block in enumerate(self.blocks):
            shape = block.trace(shape, rows, f"{name}.blocks.{idx}")
        return shape


def build_network(cfg: ArchConfig, rng: np.random.Generator | None = None, seed: int | None = 0) -> Network:
    """Build and initialize a network; ``seed=None`` with no ``rng`` leaves weights zeroed (cost analysis)."""
    if rng is None and seed is not None:
        rng = np.random.default_rng(seed)
    return Network(cfg, rng)
