"""Hypercomplex algebra: Hamilton products, weight-sharing kernels, PHM synthesis.

Everything here is plain numpy and side-effect free. The layers module reuses
the structure tensors defined here to synthesize real kernels inside the
autodiff graph.

Channel layout convention: a hypercomplex channel group is a run of ``n``
consecutive channels, so real channel ``g * n + a`` is component ``a`` of
group ``g``. A synthesized real kernel therefore satisfies::

    W[o * n + a, i * n + b] = sum_m S[m, a, b] * K_m[o, i]

where ``K_m`` are the shared kernels and ``S`` is the algebra's structure tensor.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError


@dataclass(frozen=True)
class Quaternion:
    r: float
    x: float
    y: float
    z: float

    def as_array(self) -> np.ndarray:
        return np.array([self.r, self.x, self.y, self.z], dtype=float)

    def norm(self) -> float:
        return math.sqrt(self.r ** 2 + self.x ** 2 + self.y ** 2 + self.z ** 2)

    def __mul__(self, other: "Quaternion") -> "Quaternion":
        return hamilton_product(self, other)


def hamilton_product(p: Quaternion, q: Quaternion) -> Quaternion:
    """Quaternion product ``p * q``.

    With ``p`` as the input and ``q`` as the filter this is the scalar form of
    quaternion convolution: r = pr qr - pi qi - pj qj - pk qk, and so on.
    """
    return Quaternion(
        p.r * q.r - p.x * q.x - p.y * q.y - p.z * q.z,
        p.x * q.r + p.r * q.x + p.y * q.z - p.z * q.y,
        p.y * q.r + p.r * q.y + p.z * q.x - p.x * q.z,
        p.z * q.r + p.r * q.z + p.x * q.y - p.y * q.x,
    )


def _quaternion_structure() -> np.ndarray:
    units = [Quaternion(*row) for row in np.eye(4)]
    s = np.zeros((4, 4, 4))
    for m, filt in enumerate(units):
        for b, inp in enumerate(units):
            s[m, :, b] = hamilton_product(inp, filt).as_array()
    return s


# QUATERNION_STRUCTURE[m, a, b]: sign with which filter component m carries
# input component b into output component a (components ordered r, i, j, k).
QUATERNION_STRUCTURE = _quaternion_structure()

# Which of the shared kernels (0=A, 1=B, 2=C) sits in block (a, b).
VECTORMAP_LAYOUT = np.array([[0, 1, 2], [2, 0, 1], [1, 2, 0]])
VECTORMAP_L_INIT = np.array([[1.0, 1.0, 1.0], [-1.0, 1.0, 1.0], [-1.0, 1.0, 1.0]])
VECTORMAP_MASK = np.stack([(VECTORMAP_LAYOUT == m).astype(float) for m in range(3)])


@dataclass
class QuaternionKernel:
    """Four shared real kernels, each of shape (C_out/4, C_in/4, kh, kw)."""

    r: np.ndarray
    i: np.ndarray
    j: np.ndarray
    k: np.ndarray

    def components(self) -> list[np.ndarray]:
        return [self.r, self.i, self.j, self.k]


@dataclass
class VectormapKernel:
    """Three shared real kernels of shape (C_out/3, C_in/3, kh, kw) and the 3x3 scale matrix."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    scale: np.ndarray

    def components(self) -> list[np.ndarray]:
        return [self.a, self.b, self.c]


@dataclass
class PHMWeight:
    """Factors of a PHM dense layer: ``H = sum_i kron(I[i], A[i])``, ``y = H x + b``."""

    n: int
    a: np.ndarray  # (n, k/n, d/n)
    i: np.ndarray  # (n, n, n)
    b: np.ndarray  # (k,)

    @property
    def out_features(self) -> int:
        return self.n * self.a.shape[1]

    @property
    def in_features(self) -> int:
        return self.n * self.a.shape[2]


def kron_sum(structure: np.ndarray, kernels: np.ndarray) -> np.ndarray:
    """Interleaved block kernel ``W[o*n+a, i*n+b, ...] = sum_m S[m,a,b] K[m,o,i,...]``."""
    m, n, _ = structure.shape
    out_g, in_g = kernels.shape[1:3]
    rest = kernels.shape[3:]
    w = np.einsum("mab,moi...->oaib...", structure, kernels)
    return w.reshape((out_g * n, in_g * n) + rest)


def quaternion_weight_matrix(kernel: QuaternionKernel) -> np.ndarray:
    """Real (C_out, C_in, kh, kw) kernel equivalent to the quaternion convolution."""
    return kron_sum(QUATERNION_STRUCTURE, np.stack(kernel.components()))


def vectormap_structure(scale: np.ndarray) -> np.ndarray:
    return VECTORMAP_MASK * np.asarray(scale)[None, :, :]


def vectormap_weight_matrix(kernel: VectormapKernel) -> np.ndarray:
    """Real kernel for ``L * [[A,B,C],[C,A,B],[B,C,A]]`` in interleaved channel layout."""
    return kron_sum(vectormap_structure(kernel.scale), np.stack(kernel.components()))


def kronecker(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Kronecker product of two matrices: block (u, v) equals ``p[u, v] * q``."""
    p = np.asarray(p)
    q = np.asarray(q)
    if p.ndim != 2 or q.ndim != 2:
        raise ValueError("kronecker expects two matrices")
    a, b = p.shape
    c, d = q.shape
    return np.einsum("uv,xy->uxvy", p, q).reshape(a * c, b * d)


def phm_synthesize(w: PHMWeight) -> np.ndarray:
    n = w.n
    if w.a.shape[0] != n or w.i.shape != (n, n, n):
        raise ConfigurationError(f"PHM factors do not match n={n}")
    if w.b.shape != (w.out_features,):
        raise ConfigurationError("PHM bias length must equal the output width")
    h = np.zeros((w.out_features, w.in_features), dtype=np.result_type(w.a, w.i))
    for idx in range(n):
        h += kronecker(w.i[idx], w.a[idx])
    return h


def check_phm_shape(n: int, out_features: int, in_features: int) -> None:
    if n < 1:
        raise ConfigurationError(f"PHM dimension must be positive, got {n}")
    if out_features % n or in_features % n:
        raise ConfigurationError(
            f"PHM with n={n} needs widths divisible by n, got out={out_features}, in={in_features}")


# -- initializers --------------------------------------------------------------
def _polar_init(components: int, shape, fan_in: float, fan_out: float, rng: np.random.Generator):
    if fan_in <= 0 or fan_out <= 0:
        raise ValueError("fan_in and fan_out must be positive")
    sigma = 1.0 / math.sqrt(2.0 * (fan_in + fan_out))
    shape = tuple(shape)
    # chi-distributed modulus with one degree of freedom per component
    modulus = sigma * np.sqrt(rng.chisquare(components, size=shape))
    phase = rng.uniform(-np.pi, np.pi, size=shape)
    axis = rng.uniform(0.0, 1.0, size=(components - 1,) + shape)
    axis /= np.sqrt((axis ** 2).sum(axis=0)) + 1e-12
    real = modulus * np.cos(phase)
    imag = modulus * np.sin(phase) * axis
    return [real] + list(imag)


def init_quaternion_kernel(shape, fan_in: float, fan_out: float, rng: np.random.Generator) -> QuaternionKernel:
    """Polar quaternion initialization with mean component variance 1/(2(fan_in+fan_out))."""
    return QuaternionKernel(*_polar_init(4, shape, fan_in, fan_out, rng))


def init_vectormap(shape, fan_in: float, fan_out: float, rng: np.random.Generator) -> VectormapKernel:
    a, b, c = _polar_init(3, shape, fan_in, fan_out, rng)
    return VectormapKernel(a, b, c, VECTORMAP_L_INIT.copy())


def init_phm_structure(n: int, rng: np.random.Generator) -> np.ndarray:
    """Initial ``I`` matrices: Hamilton basis for n=4, identity for n=1, random signs otherwise."""
    if n == 1:
        return np.ones((1, 1, 1))
    if n == 4:
        return QUATERNION_STRUCTURE.copy()
    mats = rng.integers(-1, 2, size=(n, n, n)).astype(float)
    norms = np.sqrt((mats ** 2).sum(axis=1, keepdims=True))
    return np.divide(mats, norms, out=np.zeros_like(mats), where=norms > 0)


def init_phm(n: int, out_features: int, in_features: int, rng: np.random.Generator) -> PHMWeight:
    check_phm_shape(n, out_features, in_features)
    ko, di = out_features // n, in_features // n
    bound = math.sqrt(6.0 / (ko + di)) / math.sqrt(n)
    a = rng.uniform(-bound, bound, size=(n, ko, di))
    return PHMWeight(n=n, a=a, i=init_phm_structure(n, rng), b=np.zeros(out_features))
