"""Parameter, multiply-add and latency accounting for built networks.

FLOP convention: one multiply-add is one FLOP. Two conventions are available
for convolutions and dense layers:

``executed``
    every multiply-add the forward pass performs, i.e. ``H'W' kh kw C_in C_out``
    for a convolution whatever its weight sharing. This is what an
    instrumented run of the naive kernels counts.
``shared``
    stored kernel scalars times output positions, so a quaternion conv costs a
    quarter and a vectormap conv a third of the real conv with the same shape.

Batch norm, ReLU and pooling add one FLOP per input element in both.
"""
from __future__ import annotations

import csv
import io
import time
from fractions import Fraction
from dataclasses import dataclass, field

import numpy as np

from . import tensorcore as tc
from .layers import CostRow, Module
from .tensorcore import Tensor

CONVENTIONS = ("executed", "shared")


@dataclass
class LatencyStats:
    samples: list[float]
    mean: float
    p50: float
    p95: float

    @classmethod
    def from_samples(cls, samples) -> "LatencyStats":
        arr = np.asarray(samples, dtype=float)
        return cls(list(arr), float(arr.mean()), float(np.percentile(arr, 50)), float(np.percentile(arr, 95)))


@dataclass
class ReportRow:
    layer: str
    kind: str
    params: int
    flops: int


@dataclass
class CostReport:
    rows: list[ReportRow]
    input_shape: tuple[int, int, int]
    convention: str = "executed"
    latency: LatencyStats | None = None
    title: str = ""
    extras: dict = field(default_factory=dict)

    @property
    def params(self) -> int:
        return sum(r.params for r in self.rows)

    @property
    def flops(self) -> int:
        return sum(r.flops for r in self.rows)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["layer", "params", "flops"])
        for r in self.rows:
            writer.writerow([r.layer, r.params, r.flops])
        writer.writerow(["TOTAL", self.params, self.flops])
        return buf.getvalue()

    def stage_totals(self) -> dict[str, tuple[int, int]]:
        """Params and FLOPs summed per top-level stage (stem, groups.N, pool, head)."""
        totals: dict[str, list[int]] = {}
        for r in self.rows:
            parts = r.layer.split(".")
            if parts[0] == "groups":
                stage = ".".join(parts[:2])
            else:
                stage = "stem" if parts[0] in ("stem_bn", "relu") else parts[0]
            acc = totals.setdefault(stage, [0, 0])
            acc[0] += r.params
            acc[1] += r.flops
        return {k: (v[0], v[1]) for k, v in totals.items()}

    def pretty(self) -> str:
        lines = []
        if self.title:
            lines.append(self.title)
        lines.append(f"input {'x'.join(map(str, self.input_shape))}, FLOP convention: {self.convention}")
        lines.append(f"{'stage':<12}{'params':>14}{'flops':>18}")
        for stage, (p, f) in self.stage_totals().items():
            lines.append(f"{stage:<12}{p:>14,}{f:>18,}")
        lines.append(f"{'total':<12}{self.params:>14,}{self.flops:>18,}")
        lines.append(f"{'':<12}{self.params / 1e6:>13.2f}M{self.flops / 1e9:>17.3f}G")
        if self.latency is not None:
            lat = self.latency
            lines.append(f"latency over {len(lat.samples)} runs: mean {lat.mean * 1e3:.2f} ms, "
                         f"p50 {lat.p50 * 1e3:.2f} ms, p95 {lat.p95 * 1e3:.2f} ms")
        return "\n".join(lines)


def count_params(net: Module) -> int:
    """Every learnable scalar in the registry, shared kernels counted once."""
    return sum(p.size for p in net.parameters())


def trace_rows(net: Module, input_shape) -> list[CostRow]:
    rows: list[CostRow] = []
    net.trace(tuple(input_shape), rows, "")
    return rows


def cost_report(net: Module, input_shape=(3, 32, 32), convention: str = "executed") -> CostReport:
    if convention not in CONVENTIONS:
        raise ValueError(f"convention must be one of {CONVENTIONS}")
    out = []
    for r in trace_rows(net, input_shape):
        macs = r.macs if convention == "executed" else r.shared_macs
        out.append(ReportRow(r.name, r.kind, r.params, macs + r.elementwise))
    # parameters not attached to a traced leaf would make the totals disagree
    traced = sum(r.params for r in out)
    total = count_params(net)
    if traced != total:
        raise RuntimeError(f"trace covers {traced} parameters but the registry holds {total}")
    return CostReport(out, tuple(input_shape), convention)


def count_flops(net: Module, input_shape=(3, 32, 32), convention: str = "executed") -> int:
    """Multiply-adds plus elementwise ops for one forward pass of a single image."""
    return cost_report(net, input_shape, convention).flops


def instrumented_flops(net: Module, input_shape=(3, 32, 32), seed: int = 0) -> tc.OpCounter:
    """Run one image through the naive loop kernels and count the work they do."""
    rng = np.random.default_rng(seed)
    x = Tensor(rng.standard_normal((1,) + tuple(input_shape)).astype(tc.get_default_dtype()))
    was_training = net.training
    net.eval()
    try:
        with tc.no_grad(), tc.count_ops() as counter:
            net(x)
    finally:
        net.train(was_training)
    return counter


def bench_latency(net: Module, input_shape=(3, 32, 32), runs: int = 30, warmup: int = 5,
                  seed: int = 0) -> LatencyStats:
    """Single-image forward timings in eval mode on one BLAS thread."""
    if runs < 30:
        raise ValueError("latency needs at least 30 timed runs")
    if warmup < 5:
        raise ValueError("latency needs at least 5 warmup runs")
    from threadpoolctl import threadpool_limits

    rng = np.random.default_rng(seed)
    x = Tensor(rng.standard_normal((1,) + tuple(input_shape)).astype(tc.get_default_dtype()))
    was_training = net.training
    net.eval()
    samples = []
    try:
        with threadpool_limits(limits=1), tc.no_grad():
            for _ in range(warmup):
                net(x)
            for _ in range(runs):
                start = time.perf_counter()
                net(x)
                samples.append(time.perf_counter() - start)
    finally:
        net.train(was_training)
    return LatencyStats.from_samples(samples)


def spatial_stage_ratio(width: int, resolution: int = 8, convention: str = "shared") -> Fraction:
    """FLOPs of the axial 3x1 + 1x3 vectormap pair over a 3x3 quaternion conv at equal width."""
    from .layers import QConv2d, axial_vconv_pair

    shape = (width, resolution, resolution)
    key = "shared_macs" if convention == "shared" else "macs"
    axial_rows: list[CostRow] = []
    s = shape
    for conv in axial_vconv_pair(width, width):
        s = conv.trace(s, axial_rows, "axial")
    quat_rows: list[CostRow] = []
    QConv2d(width, width, (3, 3), (1, 1), (1, 1)).trace(shape, quat_rows, "quat")
    return Fraction(sum(getattr(r, key) for r in axial_rows), sum(getattr(r, key) for r in quat_rows))
