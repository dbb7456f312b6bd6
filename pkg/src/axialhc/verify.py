"""Self-contained property checks behind the ``verify`` command.

Each check draws its own random cases, compares the library against a
directly written reference and returns a one-line detail string; a failed
comparison raises ``AssertionError``.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import hyperalgebra as ha
from . import tensorcore as tc
from .analysis import count_flops, count_params, instrumented_flops, spatial_stage_ratio
from .blocks import ArchConfig, build_network, named_arch
from .layers import PHMDense, QConv2d, VConv2d, axial_vconv_pair
from .pipeline.schedule import warmup_cosine
from .tensorcore import Tensor, conv2d_reference


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


def _max_err(a, b) -> float:
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))))


def _check(err: float, tol: float, what: str) -> str:
    assert err <= tol, f"{what}: max error {err:.3g} exceeds {tol:g}"
    return f"{what}: max error {err:.2e} <= {tol:g}"


def hamilton_norm(rng, trials):
    worst = 0.0
    for _ in range(trials):
        p = ha.Quaternion(*rng.standard_normal(4))
        q = ha.Quaternion(*rng.standard_normal(4))
        worst = max(worst, abs((p * q).norm() - p.norm() * q.norm()))
    return _check(worst, 1e-10, f"|pq| = |p||q| over {trials} pairs")


def _conv(x, k, pad):
    return conv2d_reference(x, k, (1, 1), pad)


def quaternion_expansion(rng, trials):
    worst = 0.0
    for _ in range(trials):
        cin, cout = 4 * rng.integers(1, 3), 4 * rng.integers(1, 3)
        with tc.precision(np.float64):
            layer = QConv2d(cin, cout, (3, 3), (1, 1), (1, 1), rng)
        x = rng.standard_normal((2, cin, 5, 5))
        got = layer(Tensor(x)).data
        mr, mi, mj, mk = (x[:, c::4] for c in range(4))
        fr, fi, fj, fk = (p.data for p in layer.kernels())
        pad = (1, 1)
        rows = [
            _conv(mr, fr, pad) - _conv(mi, fi, pad) - _conv(mj, fj, pad) - _conv(mk, fk, pad),
            _conv(mi, fr, pad) + _conv(mr, fi, pad) + _conv(mj, fk, pad) - _conv(mk, fj, pad),
            _conv(mj, fr, pad) + _conv(mr, fj, pad) + _conv(mk, fi, pad) - _conv(mi, fk, pad),
            _conv(mk, fr, pad) + _conv(mr, fk, pad) + _conv(mi, fj, pad) - _conv(mj, fi, pad),
        ]
        want = np.stack(rows, axis=2).reshape(got.shape)
        worst = max(worst, _max_err(got, want))
    return _check(worst, 1e-10, f"quaternion conv vs 16-term expansion, {trials} trials")


def vectormap_expansion(rng, trials):
    worst = 0.0
    for _ in range(trials):
        cin, cout = 3 * rng.integers(1, 3), 3 * rng.integers(1, 3)
        with tc.precision(np.float64):
            layer = VConv2d(cin, cout, (3, 3), (1, 1), (1, 1), rng)
            layer.scale.data = rng.standard_normal((3, 3))
        x = rng.standard_normal((2, cin, 5, 5))
        got = layer(Tensor(x)).data
        x1, x2, x3 = (x[:, c::3] for c in range(3))
        a, b, c = (p.data for p in layer.kernels())
        s = layer.scale.data
        pad = (1, 1)
        rows = [
            s[0, 0] * _conv(x1, a, pad) + s[0, 1] * _conv(x2, b, pad) + s[0, 2] * _conv(x3, c, pad),
            s[1, 0] * _conv(x1, c, pad) + s[1, 1] * _conv(x2, a, pad) + s[1, 2] * _conv(x3, b, pad),
            s[2, 0] * _conv(x1, b, pad) + s[2, 1] * _conv(x2, c, pad) + s[2, 2] * _conv(x3, a, pad),
        ]
        want = np.stack(rows, axis=2).reshape(got.shape)
        worst = max(worst, _max_err(got, want))
    return _check(worst, 1e-10, f"vectormap conv vs row expansion, {trials} trials")


def phm_identity(rng, trials):
    for _ in range(trials):
        d, k = rng.integers(1, 8, size=2)
        w = ha.PHMWeight(1, rng.standard_normal((1, k, d)), np.ones((1, 1, 1)), rng.standard_normal(k))
        with tc.precision(np.float64):
            layer = PHMDense.from_weight(w)
        x = rng.standard_normal((3, d))
        got = layer(Tensor(x)).data
        want = tc.matmul_affine(Tensor(x), Tensor(w.a[0]), Tensor(w.b)).data
        assert np.array_equal(got, want), "PHM with n=1 differs from the affine map"
    return f"PHM n=1 equals the affine map exactly, {trials} trials"


def phm_quaternion_dense(rng, trials):
    worst = 0.0
    for _ in range(trials):
        ko, di = rng.integers(1, 4, size=2)
        a = rng.standard_normal((4, ko, di))
        w = ha.PHMWeight(4, a, ha.QUATERNION_STRUCTURE.copy(), np.zeros(4 * ko))
        with tc.precision(np.float64):
            layer = PHMDense.from_weight(w)
        x = rng.standard_normal((2, 4 * di))
        got = layer(Tensor(x)).data
        # quaternion dense over contiguous component blocks: out_o = sum_i x_i * W_oi
        want = np.zeros_like(got)
        for n in range(x.shape[0]):
            for o in range(ko):
                acc = ha.Quaternion(0.0, 0.0, 0.0, 0.0)
                for i in range(di):
                    xin = ha.Quaternion(*x[n, i::di][:4])
                    wq = ha.Quaternion(*a[:, o, i])
                    p = ha.hamilton_product(xin, wq)
                    acc = ha.Quaternion(acc.r + p.r, acc.x + p.x, acc.y + p.y, acc.z + p.z)
                want[n, o::ko] = acc.as_array()
        worst = max(worst, _max_err(got, want))
    return _check(worst, 1e-10, f"PHM n=4 with Hamilton structure vs quaternion dense, {trials} trials")


def kronecker_identity(rng, trials):
    worst = 0.0
    for _ in range(trials):
        a, b, c, d = rng.integers(1, 5, size=4)
        p, q = rng.standard_normal((a, b)), rng.standard_normal((c, d))
        xm = rng.standard_normal((d, b))
        lhs = ha.kronecker(p, q) @ xm.reshape(-1, order="F")
        rhs = (q @ xm @ p.T).reshape(-1, order="F")
        worst = max(worst, _max_err(lhs, rhs))
    return _check(worst, 1e-10, f"(P kron Q) vec X = vec(Q X P^T), {trials} trials")


def weight_sharing(rng, trials):
    q = QConv2d(8, 8, (3, 3), (1, 1), (1, 1), rng)
    v = VConv2d(6, 6, (3, 3), (1, 1), (1, 1), rng)
    assert len(q.parameters()) == 4, "quaternion conv should hold four kernels"
    assert len(v.parameters()) == 4 and v.scale.shape == (3, 3), "vectormap conv should hold A, B, C and L"
    assert np.array_equal(v.scale.data, ha.VECTORMAP_L_INIT), "L must start at its fixed initial value"
    return "4 kernels per quaternion conv, 3 kernels + 3x3 L per vectormap conv"


def axial_receptive_field(rng, trials):
    with tc.precision(np.float64):
        pair = axial_vconv_pair(3, 3, 1, rng)
    for conv in pair:
        for p in conv.parameters():
            p.data = np.abs(p.data) + 1.0
    x = np.zeros((1, 3, 9, 9))
    x[0, :, 4, 4] = 1.0
    out = Tensor(x)
    for conv in pair:
        out = conv(out)
    support = np.argwhere(np.abs(out.data[0]).sum(axis=0) > 0)
    extent = tuple(support.max(axis=0) - support.min(axis=0) + 1)
    assert extent == (3, 3), f"receptive field {extent}"
    return "impulse through 3x1 then 1x3 covers exactly 3x3"


def spatial_ladder(rng, trials):
    net = build_network(named_arch("axial-26"), seed=None)
    sizes = [s[1] for s in net.stage_shapes((3, 32, 32))]
    assert sizes == [32, 32, 16, 8, 4], f"spatial sizes {sizes}"
    return "stem/groups spatial sizes 32, 32, 16, 8, 4"


def parameter_ordering(rng, trials):
    parts = []
    for depth in (26, 35, 50):
        counts = {f: count_params(build_network(named_arch(f"{f}-{depth}"), seed=None))
                  for f in ("axial", "qphm", "vectormap")}
        assert counts["axial"] < counts["qphm"] < counts["vectormap"], f"depth {depth}: {counts}"
        parts.append(f"{depth}: " + " < ".join(f"{v / 1e6:.2f}M" for v in counts.values()))
    return "axial < qphm < vectormap; " + "; ".join(parts)


def stage_cost_ratio(rng, trials):
    ratio = spatial_stage_ratio(12, 8, "shared")
    assert ratio == Fraction(8, 9), f"ratio {ratio}"
    return "axial pair / quaternion 3x3 spatial MACs = 8/9"


def schedule_shape(rng, trials):
    lrs = [warmup_cosine(e, 150, 0.1, 10) for e in range(150)]
    assert abs(lrs[9] - 0.1) < 1e-15 and abs(lrs[10] - 0.1) < 1e-15, "warmup/cosine joint"
    assert lrs[-1] == 0.0 or abs(lrs[-1]) < 1e-15, "final epoch lr"
    assert all(a >= b for a, b in zip(lrs[10:], lrs[11:])), "cosine not non-increasing"
    return "lr(9) = lr(10) = 0.1, non-increasing after, lr(149) = 0"


def flop_counter(rng, trials):
    cfg = ArchConfig(family="axial", multipliers=(1, 1, 1, 1), widths=(12, 12, 12, 12), stem_channels=12,
                     phm_n=2, input_size=(8, 8))
    net = build_network(cfg, seed=0)
    counted = count_flops(net, (3, 8, 8))
    measured = instrumented_flops(net, (3, 8, 8)).total
    assert counted == measured, f"counter {counted} != instrumented {measured}"
    return f"analytic count equals instrumented execution ({counted} FLOPs)"


CHECKS = [
    ("hamilton_norm", hamilton_norm),
    ("quaternion_expansion", quaternion_expansion),
    ("vectormap_expansion", vectormap_expansion),
    ("phm_identity", phm_identity),
    ("phm_quaternion_dense", phm_quaternion_dense),
    ("kronecker_identity", kronecker_identity),
    ("weight_sharing", weight_sharing),
    ("axial_receptive_field", axial_receptive_field),
    ("spatial_ladder", spatial_ladder),
    ("parameter_ordering", parameter_ordering),
    ("stage_cost_ratio", stage_cost_ratio),
    ("schedule_shape", schedule_shape),
    ("flop_counter", flop_counter),
]


def run_checks(trials: int = 100, seed: int = 0, names=None) -> list[CheckResult]:
    results = []
    for name, fn in CHECKS:
        if names and name not in names:
            continue
        rng = np.random.default_rng(seed)
        start = time.perf_counter()
        try:
            detail, ok = fn(rng, trials), True
        except AssertionError as exc:
            detail, ok = str(exc), False
        results.append(CheckResult(name, ok, detail, time.perf_counter() - start))
    return results
