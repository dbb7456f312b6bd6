"""Network layers binding hypercomplex weight synthesis to the autodiff core.

Each layer owns its learnable tensors as attributes; :class:`Module` discovers
them by walking attributes in definition order, which gives stable parameter
names for checkpoints and for the cost report.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import hyperalgebra as ha
from . import tensorcore as tc
from .errors import ConfigurationError
from .tensorcore import Tensor, conv_output_size


def Parameter(data, name: str | None = None) -> Tensor:
    return Tensor(np.asarray(data, dtype=tc.get_default_dtype()), requires_grad=True, name=name)


def _empty(shape) -> np.ndarray:
    return np.zeros(shape, dtype=tc.get_default_dtype())


@dataclass
class CostRow:
    """One leaf layer in a shape trace: learnable scalars and forward work."""

    name: str
    kind: str
    params: int
    macs: int
    shared_macs: int
    elementwise: int
    out_shape: tuple[int, ...]

    @property
    def flops(self) -> int:
        return self.macs + self.elementwise


class Module:
    training: bool = True

    # -- registry ----------------------------------------------------------
    def _children(self) -> Iterator[tuple[str, object]]:
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            if isinstance(value, (list, tuple)):
                for idx, item in enumerate(value):
                    yield f"{key}.{idx}", item
            else:
                yield key, value

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in self._children():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for key in getattr(self, "_buffer_names", ()):
            yield f"{prefix}{key}", getattr(self, key)
        for key, value in self._children():
            if isinstance(value, Module):
                yield from value.named_buffers(f"{prefix}{key}.")

    def named_modules(self, prefix: str = "") -> Iterator[tuple[str, "Module"]]:
        yield prefix.rstrip("."), self
        for key, value in self._children():
            if isinstance(value, Module):
                yield from value.named_modules(f"{prefix}{key}.")

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data for name, p in self.named_parameters()}
        state.update(self.named_buffers())
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        expected = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        missing = (set(expected) | set(buffers)) - set(state)
        if missing:
            raise ConfigurationError(f"state is missing entries: {sorted(missing)[:5]}")
        for name, p in expected.items():
            if state[name].shape != p.shape:
                raise ConfigurationError(f"{name}: stored shape {state[name].shape} != {p.shape}")
            p.data = np.array(state[name], dtype=p.dtype)
        for name, buf in buffers.items():
            buf[...] = state[name]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def train(self, mode: bool = True) -> "Module":
        for _, m in self.named_modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    # -- execution ---------------------------------------------------------
    def __call__(self, x: Tensor) -> Tensor:
        out = self.forward(x)
        if _PROBE is not None:
            _PROBE(self, out)
        return out

    def forward(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def trace(self, shape: tuple[int, ...], rows: list[CostRow], name: str) -> tuple[int, ...]:
        """Append cost rows for this module's leaves and return the output shape (C, H, W)."""
        raise NotImplementedError

    def num_params(self) -> int:
        return sum(p.size for p in self.parameters())


_PROBE = None


def set_probe(probe) -> None:
    """Install a callable ``probe(module, output)`` invoked after every module call."""
    global _PROBE
    _PROBE = probe


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_channels: int
    out_channels: int
    kernel: tuple[int, int] = (1, 1)
    stride: tuple[int, int] = (1, 1)
    padding: tuple[int, int] = (0, 0)

    KINDS = ("conv", "qconv", "vconv", "axial_v_h", "axial_v_w", "phm_dense", "dense",
             "batchnorm", "relu", "pool")

    def violations(self, phm_n: int = 5) -> list[str]:
        problems = []
        if self.kind not in self.KINDS:
            return [f"unknown layer kind {self.kind!r}"]
        groups = {"qconv": 4, "vconv": 3, "axial_v_h": 3, "axial_v_w": 3, "phm_dense": phm_n}.get(self.kind)
        if groups:
            for label, value in (("in", self.in_channels), ("out", self.out_channels)):
                if value % groups:
                    problems.append(f"{self.kind}: {label} channels {value} not divisible by {groups}")
        if self.kind == "axial_v_h" and self.kernel != (3, 1):
            problems.append(f"axial_v_h needs a (3, 1) kernel, got {self.kernel}")
        if self.kind == "axial_v_w" and self.kernel != (1, 3):
            problems.append(f"axial_v_w needs a (1, 3) kernel, got {self.kernel}")
        return problems


def _conv_trace(layer, shape, rows, name, kind, kernel_scalars):
    c, h, w = shape
    kh, kw = layer.kernel
    ho = conv_output_size(h, kh, layer.stride[0], layer.padding[0])
    wo = conv_output_size(w, kw, layer.stride[1], layer.padding[1])
    macs = ho * wo * kh * kw * layer.in_channels * layer.out_channels
    rows.append(CostRow(name, kind, layer.num_params(), macs, ho * wo * kernel_scalars, 0,
                        (layer.out_channels, ho, wo)))
    return layer.out_channels, ho, wo


class Conv2d(Module):
    """Real-valued convolution without bias."""

    def __init__(self, in_channels, out_channels, kernel=(3, 3), stride=(1, 1), padding=(0, 0),
                 rng: np.random.Generator | None = None):
        self.in_channels, self.out_channels = in_channels, out_channels
        self.kernel, self.stride, self.padding = tuple(kernel), tuple(stride), tuple(padding)
        shape = (out_channels, in_channels) + self.kernel
        if rng is None:
            data = _empty(shape)
        else:
            fan_in = in_channels * self.kernel[0] * self.kernel[1]
            data = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape)
        self.weight = Parameter(data)

    def forward(self, x):
        return tc.conv2d(x, self.weight, self.stride, self.padding)

    def trace(self, shape, rows, name):
        return _conv_trace(self, shape, rows, name, "conv", self.weight.size)


class QConv2d(Module):
    """Quaternion convolution: four shared kernels expanded by the Hamilton product."""

    def __init__(self, in_channels, out_channels, kernel=(3, 3), stride=(1, 1), padding=(0, 0),
                 rng: np.random.Generator | None = None):
        if in_channels % 4 or out_channels % 4:
            raise ConfigurationError(
                f"quaternion conv needs channels divisible by 4, got {in_channels}->{out_channels}")
        self.in_channels, self.out_channels = in_channels, out_channels
        self.kernel, self.stride, self.padding = tuple(kernel), tuple(stride), tuple(padding)
        shape = (out_channels // 4, in_channels // 4) + self.kernel
        if rng is None:
            parts = [_empty(shape) for _ in range(4)]
        else:
            taps = self.kernel[0] * self.kernel[1]
            parts = ha.init_quaternion_kernel(shape, in_channels // 4 * taps, out_channels // 4 * taps,
                                              rng).components()
        self.weight_r, self.weight_i, self.weight_j, self.weight_k = (Parameter(p) for p in parts)

    def kernels(self) -> list[Tensor]:
        return [self.weight_r, self.weight_i, self.weight_j, self.weight_k]

    def real_kernel(self) -> Tensor:
        s = Tensor(ha.QUATERNION_STRUCTURE.astype(self.weight_r.dtype))
        w = tc.einsum("mab,moixy->oaibxy", s, tc.stack(self.kernels()))
        return w.reshape((self.out_channels, self.in_channels) + self.kernel)

    def forward(self, x):
        return tc.conv2d(x, self.real_kernel(), self.stride, self.padding)

    def trace(self, shape, rows, name):
        return _conv_trace(self, shape, rows, name, "qconv", 4 * self.weight_r.size)


class VConv2d(Module):
    """Vectormap convolution: three shared kernels in circulant blocks scaled by a learnable 3x3 matrix."""

    KERNELS = {(3, 3), (3, 1), (1, 3), (1, 1)}

    def __init__(self, in_channels, out_channels, kernel=(3, 3), stride=(1, 1), padding=(0, 0),
                 rng: np.random.Generator | None = None):
        if in_channels % 3 or out_channels % 3:
            raise ConfigurationError(
                f"vectormap conv needs channels divisible by 3, got {in_channels}->{out_channels}")
        if tuple(kernel) not in self.KERNELS:
            raise ConfigurationError(f"unsupported vectormap kernel {kernel}")
        self.in_channels, self.out_channels = in_channels, out_channels
        self.kernel, self.stride, self.padding = tuple(kernel), tuple(stride), tuple(padding)
        shape = (out_channels // 3, in_channels // 3) + self.kernel
        if rng is None:
            parts = [_empty(shape) for _ in range(3)]
            scale = ha.VECTORMAP_L_INIT
        else:
            taps = self.kernel[0] * self.kernel[1]
            vk = ha.init_vectormap(shape, in_channels // 3 * taps, out_channels // 3 * taps, rng)
            parts, scale = vk.components(), vk.scale
        self.weight_a, self.weight_b, self.weight_c = (Parameter(p) for p in parts)
        self.scale = Parameter(scale)

    def kernels(self) -> list[Tensor]:
        return [self.weight_a, self.weight_b, self.weight_c]

    def real_kernel(self) -> Tensor:
        mask = Tensor(ha.VECTORMAP_MASK.astype(self.scale.dtype))
        structure = mask * tc.reshape(self.scale, (1, 3, 3))
        w = tc.einsum("mab,moixy->oaibxy", structure, tc.stack(self.kernels()))
        return w.reshape((self.out_channels, self.in_channels) + self.kernel)

    def forward(self, x):
        return tc.conv2d(x, self.real_kernel(), self.stride, self.padding)

    def trace(self, shape, rows, name):
        kind = {(3, 1): "axial_v_h", (1, 3): "axial_v_w"}.get(self.kernel, "vconv")
        return _conv_trace(self, shape, rows, name, kind, 3 * self.weight_a.size)


def axial_vconv_pair(in_channels, out_channels, stride: int = 1,
                     rng: np.random.Generator | None = None) -> tuple[VConv2d, VConv2d]:
    """Height-axis 3x1 then width-axis 1x3 vectormap convs; stride applied once per axis."""
    height = VConv2d(in_channels, out_channels, (3, 1), (stride, 1), (1, 0), rng)
    width = VConv2d(out_channels, out_channels, (1, 3), (1, stride), (0, 1), rng)
    return height, width


class Dense(Module):
    def __init__(self, in_features, out_features, rng: np.random.Generator | None = None):
        self.in_features, self.out_features = in_features, out_features
        if rng is None:
            w = _empty((out_features, in_features))
        else:
            bound = 1.0 / math.sqrt(in_features)
            w = rng.uniform(-bound, bound, size=(out_features, in_features))
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(out_features))

    def forward(self, x):
        return tc.matmul_affine(x, self.weight, self.bias)

    def trace(self, shape, rows, name):
        macs = self.in_features * self.out_features
        rows.append(CostRow(name, "dense", self.num_params(), macs, macs, 0, (self.out_features,)))
        return (self.out_features,)


class PHMDense(Module):
    """Dense layer whose weight is ``sum_i kron(I_i, A_i)``, rebuilt on every forward."""

    def __init__(self, in_features, out_features, n: int = 5, rng: np.random.Generator | None = None):
        ha.check_phm_shape(n, out_features, in_features)
        self.in_features, self.out_features, self.n = in_features, out_features, n
        if rng is None:
            w = ha.PHMWeight(n, np.zeros((n, out_features // n, in_features // n)),
                             ha.init_phm_structure(n, np.random.default_rng(0)), np.zeros(out_features))
        else:
            w = ha.init_phm(n, out_features, in_features, rng)
        self.factors = [Parameter(a) for a in w.a]
        self.structure = [Parameter(i) for i in w.i]
        self.bias = Parameter(w.b)

    @classmethod
    def from_weight(cls, w: ha.PHMWeight) -> "PHMDense":
        layer = cls(w.in_features, w.out_features, w.n)
        for p, a in zip(layer.factors, w.a):
            p.data = np.asarray(a, dtype=p.dtype)
        for p, i in zip(layer.structure, w.i):
            p.data = np.asarray(i, dtype=p.dtype)
        layer.bias.data = np.asarray(w.b, dtype=layer.bias.dtype)
        return layer

    def weight(self) -> ha.PHMWeight:
        return ha.PHMWeight(self.n, np.stack([p.data for p in self.factors]),
                            np.stack([p.data for p in self.structure]), self.bias.data)

    def synthesize(self) -> Tensor:
        h = tc.einsum("mab,mcd->acbd", tc.stack(self.structure), tc.stack(self.factors))
        return h.reshape((self.out_features, self.in_features))

    def forward(self, x):
        # input is read as n contiguous parts and the output is merged the same way
        return tc.matmul_affine(x, self.synthesize(), self.bias)

    def trace(self, shape, rows, name):
        macs = self.in_features * self.out_features
        rows.append(CostRow(name, "phm_dense", self.num_params(), macs, macs // self.n, 0,
                            (self.out_features,)))
        return (self.out_features,)


class BatchNorm2d(Module):
    _buffer_names = ("running_mean", "running_var")

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.channels, self.momentum, self.eps = channels, momentum, eps
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))
        self.running_mean = np.zeros(channels, dtype=tc.get_default_dtype())
        self.running_var = np.ones(channels, dtype=tc.get_default_dtype())

    def forward(self, x):
        return tc.batchnorm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                            self.training, self.momentum, self.eps)

    def trace(self, shape, rows, name):
        rows.append(CostRow(name, "batchnorm", self.num_params(), 0, 0, int(np.prod(shape)), tuple(shape)))
        return tuple(shape)


class ReLU(Module):
    def forward(self, x):
        return tc.relu(x)

    def trace(self, shape, rows, name):
        rows.append(CostRow(name, "relu", 0, 0, 0, int(np.prod(shape)), tuple(shape)))
        return tuple(shape)


class GlobalAvgPool(Module):
    def forward(self, x):
        return tc.global_avg_pool(x)

    def trace(self, shape, rows, name):
        rows.append(CostRow(name, "pool", 0, 0, 0, int(np.prod(shape)), (shape[0],)))
        return (shape[0],)


def build_layer(spec: LayerSpec, rng: np.random.Generator | None = None, phm_n: int = 5) -> Module:
    problems = spec.violations(phm_n)
    if problems:
        raise ConfigurationError("; ".join(problems))
    args = (spec.in_channels, spec.out_channels, spec.kernel, spec.stride, spec.padding, rng)
    if spec.kind == "conv":
        return Conv2d(*args)
    if spec.kind == "qconv":
        return QConv2d(*args)
    if spec.kind in ("vconv", "axial_v_h", "axial_v_w"):
        return VConv2d(*args)
    if spec.kind == "phm_dense":
        return PHMDense(spec.in_channels, spec.out_channels, phm_n, rng)
    if spec.kind == "dense":
        return Dense(spec.in_channels, spec.out_channels, rng)
    if spec.kind == "batchnorm":
        return BatchNorm2d(spec.out_channels)
    if spec.kind == "relu":
        return ReLU()
    return GlobalAvgPool()
