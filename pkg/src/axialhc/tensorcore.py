"""Dense tensors with reverse-mode automatic differentiation.

Only the operations needed by the hypercomplex layers are provided: elementwise
arithmetic with broadcasting, einsum, reshape/stack/concat, 2D convolution
(cross-correlation), affine maps, ReLU, batch normalization, global average
pooling and a fused softmax cross-entropy.

Every differentiable op records its parents and a closure mapping the output
gradient to one gradient per parent. :func:`backward` walks the recorded graph
in reverse topological order and accumulates into ``Tensor.grad`` of the leaves.
"""
from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import ContractError, DimensionError

_DEFAULT_DTYPE = np.dtype(np.float32)
_GRAD_ENABLED = True
_COUNTER: "OpCounter | None" = None


def get_default_dtype() -> np.dtype:
    return _DEFAULT_DTYPE


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported dtype {dtype}")
    _DEFAULT_DTYPE = dtype


@contextlib.contextmanager
def precision(dtype) -> Iterator[None]:
    """Temporarily switch the dtype used for new parameters and literals."""
    previous = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


def grad_enabled() -> bool:
    return _GRAD_ENABLED


@dataclass
class OpCounter:
    """Tally of work actually executed while instrumentation is active."""

    macs: int = 0
    elementwise: int = 0

    @property
    def total(self) -> int:
        return self.macs + self.elementwise


@contextlib.contextmanager
def count_ops() -> Iterator[OpCounter]:
    """Route conv/affine through the naive loop kernels and count their work.

    Convolutions and affine maps count one unit per multiply-add performed by
    the loop kernels; ReLU, batch norm and pooling count one unit per input
    element. Weight synthesis (einsum, stack) is not counted.
    """
    global _COUNTER
    previous = _COUNTER
    counter = OpCounter()
    _COUNTER = counter
    try:
        yield counter
    finally:
        _COUNTER = previous


class Tensor:
    """N-dimensional array with an optional autodiff node."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            raise TypeError("wrap the .data of an existing Tensor instead")
        if dtype is not None:
            arr = np.asarray(data, dtype=dtype)
        else:
            arr = np.asarray(data)
            if not np.issubdtype(arr.dtype, np.floating):
                arr = arr.astype(_DEFAULT_DTYPE)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.name = name

    # -- basic attributes -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return self.data.item()

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def backward(self) -> None:
        backward(self)

    # -- operators ---------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other, self.dtype)))

    def __rsub__(self, other):
        return add(_as_tensor(other, self.dtype), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _as_tensor(value, dtype=None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype or _DEFAULT_DTYPE))


def _result(data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# -- graph traversal ---------------------------------------------------------
def topological_order(root: Tensor) -> list[Tensor]:
    """Recorded nodes reachable from ``root``, each listed after its inputs."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf requiring grad."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any tensor requiring grad")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topological_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


# -- elementwise and shape ops ----------------------------------------------
def add(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)

    def _bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), _bw)


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)

    def _bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(a.data * b.data, (a, b), _bw)


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def _bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result(np.asarray(out), (a,), _bw)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a: Tensor, shape) -> Tensor:
    out = a.data.reshape(shape)
    return _result(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes=None) -> Tensor:
    out = np.transpose(a.data, axes)
    inverse = None if axes is None else np.argsort(axes)
    return _result(out, (a,), lambda g: (np.transpose(g, inverse),))


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    out = np.stack([t.data for t in tensors], axis=axis)

    def _bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _result(out, tensors, _bw)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def _bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _result(out, tensors, _bw)


def einsum(subscripts: str, *operands: Tensor) -> Tensor:
    """Differentiable ``np.einsum`` for explicit-output subscripts.

    Each operand index must also appear in the output or in another operand,
    which holds for the weight-synthesis contractions used by the layers.
    """
    operands = tuple(_as_tensor(op) for op in operands)
    inputs, output = subscripts.replace(" ", "").split("->")
    specs = inputs.split(",")
    if len(specs) != len(operands):
        raise DimensionError(f"{subscripts!r} expects {len(specs)} operands")
    out = np.einsum(subscripts, *(op.data for op in operands))

    def _bw(g):
        grads = []
        for j, spec in enumerate(specs):
            if not operands[j].requires_grad:
                grads.append(None)
                continue
            others = [s for k, s in enumerate(specs) if k != j]
            rule = ",".join([output] + others) + "->" + spec
            grads.append(np.einsum(rule, g, *(operands[k].data for k in range(len(specs)) if k != j)))
        return grads

    return _result(out, operands, _bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul of {a.shape} and {b.shape}")

    def _bw(g):
        return g @ b.data.T, a.data.T @ g

    return _result(a.data @ b.data, (a, b), _bw)


# -- network primitives -------------------------------------------------------
def matmul_affine(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``y[n] = weight @ x[n] + bias`` for x of shape (N, d) and weight (k, d)."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise DimensionError(f"affine map of input {x.shape} with weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise DimensionError(f"bias shape {bias.shape} does not match {weight.shape[0]} outputs")
    if _COUNTER is not None:
        out = affine_reference(x.data, weight.data, None if bias is None else bias.data, _COUNTER)
    else:
        out = x.data @ weight.data.T
        if bias is not None:
            out = out + bias.data

    def _bw(g):
        gx = g @ weight.data
        gw = g.T @ x.data
        gb = None if bias is None else g.sum(axis=0)
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _result(out, parents, _bw)


def affine_reference(x: np.ndarray, weight: np.ndarray, bias, counter: OpCounter | None = None) -> np.ndarray:
    """Row-by-row affine map used for instrumented execution."""
    n, _ = x.shape
    k = weight.shape[0]
    out = np.zeros((n, k), dtype=np.result_type(x, weight))
    for i in range(n):
        for j in range(k):
            out[i, j] = np.dot(weight[j], x[i])
            if counter is not None:
                counter.macs += weight.shape[1]
    if bias is not None:
        out += bias
    return out


def _pair(value) -> tuple[int, int]:
    if isinstance(value, int):
        return value, value
    a, b = value
    return int(a), int(b)


def conv_output_size(size: int, kernel: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - kernel) // stride + 1


def _im2col(xp: np.ndarray, kh: int, kw: int, sh: int, sw: int, ho: int, wo: int) -> np.ndarray:
    n, c = xp.shape[:2]
    if kh == 1 and kw == 1:
        view = xp[:, :, :sh * (ho - 1) + 1:sh, :sw * (wo - 1) + 1:sw]
        return view.reshape(n, c, ho * wo)
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, :sh * (ho - 1) + 1:sh, :sw * (wo - 1) + 1:sw]  # (N, C, Ho, Wo, kh, kw)
    return win.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * kh * kw, ho * wo)


def conv2d(x: Tensor, kernel: Tensor, stride=(1, 1), padding=(0, 0)) -> Tensor:
    """Cross-correlate (N, C_in, H, W) input with a (C_out, C_in, kh, kw) kernel."""
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    if x.ndim != 4 or kernel.ndim != 4:
        raise DimensionError(f"conv2d expects 4D input and kernel, got {x.shape} and {kernel.shape}")
    n, c, h, w = x.shape
    co, ci, kh, kw = kernel.shape
    if c != ci:
        raise DimensionError(f"input has {c} channels but kernel expects {ci}")
    if sh < 1 or sw < 1:
        raise ContractError("strides must be positive")
    if kh > h + 2 * ph or kw > w + 2 * pw:
        raise DimensionError(f"kernel {kh}x{kw} larger than padded input {h + 2 * ph}x{w + 2 * pw}")
    ho = conv_output_size(h, kh, sh, ph)
    wo = conv_output_size(w, kw, sw, pw)

    xp = x.data
    if ph or pw:
        xp = np.pad(xp, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    if _COUNTER is not None:
        out = conv2d_reference(xp, kernel.data, (sh, sw), (0, 0), _COUNTER)
        return _result(out, (x, kernel), None)
    # im2col: columns (N, C_in*kh*kw, Ho*Wo), then one batched product with the flattened kernel
    cols = _im2col(xp, kh, kw, sh, sw, ho, wo)
    flat = kernel.data.reshape(co, -1)
    out = (flat @ cols).reshape(n, co, ho, wo)

    def _bw(g):
        g2 = g.reshape(n, co, ho * wo)
        gk = None
        if kernel.requires_grad:
            gk = np.tensordot(g2, cols, axes=([0, 2], [0, 2])).reshape(kernel.shape)
        gx = None
        if x.requires_grad:
            gcols = (flat.T @ g2).reshape(n, c, kh, kw, ho, wo)
            gxp = np.zeros(xp.shape, dtype=g.dtype)
            for dy in range(kh):
                for dx in range(kw):
                    gxp[:, :, dy:dy + sh * (ho - 1) + 1:sh, dx:dx + sw * (wo - 1) + 1:sw] += gcols[:, :, dy, dx]
            gx = gxp[:, :, ph:ph + h, pw:pw + w]
        return gx, gk

    return _result(out, (x, kernel), _bw)


def conv2d_reference(x: np.ndarray, kernel: np.ndarray, stride=(1, 1), padding=(0, 0),
                     counter: OpCounter | None = None) -> np.ndarray:
    """Direct-loop cross-correlation: one dot product per output element."""
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    if ph or pw:
        x = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    n, _, h, w = x.shape
    co, _, kh, kw = kernel.shape
    ho = (h - kh) // sh + 1
    wo = (w - kw) // sw + 1
    out = np.zeros((n, co, ho, wo), dtype=np.result_type(x, kernel))
    taps = kernel.reshape(co, -1)
    for b in range(n):
        for oy in range(ho):
            for ox in range(wo):
                patch = x[b, :, oy * sh:oy * sh + kh, ox * sw:ox * sw + kw].reshape(-1)
                for o in range(co):
                    out[b, o, oy, ox] = np.dot(taps[o], patch)
                    if counter is not None:
                        counter.macs += patch.size
    return out


def relu(x: Tensor) -> Tensor:
    if _COUNTER is not None:
        _COUNTER.elementwise += x.size
    out = np.maximum(x.data, 0)
    return _result(out, (x,), lambda g: (g * (out > 0),))


def global_avg_pool(x: Tensor) -> Tensor:
    """(N, C, H, W) -> (N, C) spatial mean."""
    if x.ndim != 4:
        raise DimensionError(f"global_avg_pool expects 4D input, got {x.shape}")
    if _COUNTER is not None:
        _COUNTER.elementwise += x.size
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3))

    def _bw(g):
        return (np.broadcast_to(g[:, :, None, None] / (h * w), x.shape).copy(),)

    return _result(out, (x,), _bw)


def _channel_sum(a: np.ndarray) -> np.ndarray:
    n, c = a.shape[:2]
    return a.reshape(n, c, -1).sum(axis=2).sum(axis=0)


def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray, running_var: np.ndarray,
              training: bool = True, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalization over axis 1 of an (N, C, H, W) tensor.

    In training mode ``running_mean``/``running_var`` are updated in place with
    the unbiased batch variance; in eval mode they normalize the input.
    """
    if eps <= 0:
        raise ContractError("batchnorm eps must be positive")
    if x.ndim != 4:
        raise DimensionError(f"batchnorm expects 4D input, got {x.shape}")
    n, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"affine parameters must have shape ({c},)")
    if _COUNTER is not None:
        _COUNTER.elementwise += x.size
    shape = (1, c, 1, 1)
    g_ = gamma.data.reshape(shape)
    if training:
        count = n * h * w
        if count == 0:
            raise ContractError("batchnorm in training mode needs a non-empty batch")
        mu = _channel_sum(x.data) / count
        centered = x.data - mu.reshape(shape)
        var = _channel_sum(centered * centered) / count
        running_mean *= 1 - momentum
        running_mean += momentum * mu
        running_var *= 1 - momentum
        running_var += momentum * var * count / max(count - 1, 1)
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = centered * inv_std.reshape(shape)
        out = g_ * xhat + beta.data.reshape(shape)

        def _bw(g):
            g_beta = _channel_sum(g)
            g_gamma = _channel_sum(g * xhat)
            scale = (gamma.data * inv_std).reshape(shape)
            gx = scale * (g - (g_beta / count).reshape(shape) - xhat * (g_gamma / count).reshape(shape))
            return gx, g_gamma, g_beta
    else:
        inv_std = 1.0 / np.sqrt(running_var + eps)
        xhat = (x.data - running_mean.reshape(shape)) * inv_std.reshape(shape)
        out = g_ * xhat + beta.data.reshape(shape)

        def _bw(g):
            gx = g * (g_ * inv_std.reshape(shape))
            return gx, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

    return _result(out.astype(x.dtype, copy=False), (x, gamma, beta), _bw)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError(f"logits {logits.shape} do not match labels {labels.shape}")
    n, k = logits.shape
    if n == 0:
        raise ContractError("cross-entropy of an empty batch")
    if labels.min() < 0 or labels.max() >= k:
        raise DimensionError(f"labels must lie in [0, {k})")
    z = logits.data
    shifted = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    picked = shifted[np.arange(n), labels]
    loss = np.asarray((log_norm - picked).mean(), dtype=z.dtype)

    def _bw(g):
        p = softmax(z)
        p[np.arange(n), labels] -= 1.0
        return (p * (g / n),)

    return _result(loss, (logits,), _bw)
