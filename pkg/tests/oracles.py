"""Reference implementations written independently of the library under test."""
from __future__ import annotations

import numpy as np


def conv_loops(x, k, stride=(1, 1), pad=(0, 0)):
    """Cross-correlation by six nested loops over batch, output channel, rows, cols, input channel, taps."""
    n, c, h, w = x.shape
    co, ci, kh, kw = k.shape
    sh, sw = stride
    ph, pw = pad
    xp = np.zeros((n, c, h + 2 * ph, w + 2 * pw), dtype=np.float64)
    xp[:, :, ph:ph + h, pw:pw + w] = x
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (w + 2 * pw - kw) // sw + 1
    out = np.zeros((n, co, ho, wo))
    for b in range(n):
        for o in range(co):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for ch in range(c):
                        for u in range(kh):
                            for v in range(kw):
                                acc += xp[b, ch, i * sh + u, j * sw + v] * k[o, ch, u, v]
                    out[b, o, i, j] = acc
    return out


def conv_windows(x, k, pad=(0, 0)):
    """Stride-1 cross-correlation summing one window per output position (faster than conv_loops)."""
    n, c, h, w = x.shape
    co, _, kh, kw = k.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad[0], pad[0]), (pad[1], pad[1])))
    ho, wo = xp.shape[2] - kh + 1, xp.shape[3] - kw + 1
    out = np.zeros((n, co, ho, wo))
    for i in range(ho):
        for j in range(wo):
            window = xp[:, :, i:i + kh, j:j + kw]
            out[:, :, i, j] = np.tensordot(window, k, axes=([1, 2, 3], [1, 2, 3]))
    return out


def affine_loops(x, w, b):
    n, d = x.shape
    k = w.shape[0]
    out = np.zeros((n, k))
    for r in range(n):
        for o in range(k):
            acc = b[o]
            for i in range(d):
                acc += w[o, i] * x[r, i]
            out[r, o] = acc
    return out


def hamilton(p, q):
    """Quaternion product written from i^2 = j^2 = k^2 = ijk = -1."""
    a1, b1, c1, d1 = p
    a2, b2, c2, d2 = q
    return np.array([
        a1 * a2 - b1 * b2 - c1 * c2 - d1 * d2,
        a1 * b2 + b1 * a2 + c1 * d2 - d1 * c2,
        a1 * c2 - b1 * d2 + c1 * a2 + d1 * b2,
        a1 * d2 + b1 * c2 - c1 * b2 + d1 * a2,
    ])


def phm_loops(a, i_mats, x, b):
    """y = (sum_m kron(I_m, A_m)) x + b with the Kronecker blocks written out element by element."""
    n, ko, di = a.shape
    h = np.zeros((n * ko, n * di))
    for m in range(n):
        for u in range(n):
            for v in range(n):
                for r in range(ko):
                    for s in range(di):
                        h[u * ko + r, v * di + s] += i_mats[m, u, v] * a[m, r, s]
    return x @ h.T + b


def central_difference(f, arr: np.ndarray, index, step: float = 1e-5) -> float:
    old = arr[index]
    arr[index] = old + step
    up = f()
    arr[index] = old - step
    down = f()
    arr[index] = old
    return (up - down) / (2 * step)


def gradient_errors(loss_fn, tensors, rng, samples: int = 12, step: float = 1e-5, pattern=None,
                    skipped: list | None = None):
    """Relative errors between backprop and central differences at random coordinates.

    ``loss_fn`` rebuilds the graph from ``tensors`` and returns a scalar Tensor.
    ``pattern`` (optional) returns the activation pattern of the last call; a
    coordinate whose pattern changes inside the +-step stencil straddles a kink,
    where central differences are not a valid oracle, so it is passed over and
    appended to ``skipped``.
    """
    for t in tensors:
        t.grad = None
    loss_fn().backward()
    base = pattern() if pattern else None
    analytic = [t.grad.copy() for t in tensors]
    errors = []
    for t, g in zip(tensors, analytic):
        flat = t.data.reshape(-1)
        order = rng.permutation(flat.size)
        taken = 0
        for p in order:
            if taken == samples:
                break
            idx = np.unravel_index(p, t.data.shape)
            patterns = []

            def f():
                value = float(loss_fn().data)
                if pattern:
                    patterns.append(pattern())
                return value

            numeric = central_difference(f, t.data, idx, step)
            if pattern and any(not np.array_equal(q, base) for q in patterns):
                if skipped is not None:
                    skipped.append(idx)
                continue
            taken += 1
            exact = float(g[idx])
            scale = max(abs(exact), abs(numeric), 1e-6)
            errors.append(abs(exact - numeric) / scale)
    return errors
