"""Closed-form latency and resource models for the template accelerator.

Discrete forms use exact integer ceilings (what the hardware schedule would
do); smooth forms replace ceilings with their real-valued arguments and the
compute/memory max with a log-sum-exp soft maximum, so every quantity stays
differentiable in the parallel-factor exponent.

Model summary (a design choice, validated against the cycle oracle):
  * compute cycles  = ceil(MACs / (2**pf * pack(q))), pack(q) = 16 // q
  * memory cycles   = ceil(moved bytes / bandwidth), roofline max of the two
  * DSP = 2**pf * dsp_per_lane(q); LUT = 2**pf * lut_per_lane
  * BRAM holds weights plus a (k-1)-row line buffer
  * pooling and identity candidates are modeled as zero-cost pass-throughs
    (no MACs, no traffic, no resources) apart from the fixed per-op overhead
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Mapping

from . import autodiff as ad
from .space import (
    DesignPoint,
    OpCandidate,
    OpKind,
    SearchSpace,
    ZERO_COST_KINDS,
    round_half_up,
    shapes,
    validate,
)

Shape = tuple[int, int, int, int]  # (H, W, C_in, C_out)


class AccelMode(str, Enum):
    RECURSIVE = "recursive"  # one folded engine per op kind, latency = sum
    PIPELINED = "pipelined"  # one stage per slot, throughput set by slowest


class BoundKind(str, Enum):
    COMPUTE = "compute"
    MEMORY = "memory"


@dataclass(frozen=True)
class PlatformModel:
    """Target-device description: budgets, bandwidth, and cost coefficients."""

    clock_mhz: float
    dsp_budget: int
    bram_budget_kbit: int
    lut_budget: int
    bw_bytes_per_cycle: float
    dsp_per_lane: Mapping[int, float]
    lut_per_lane: float = 8.0
    overhead_cycles_per_op: int = 0
    accel_mode: AccelMode = AccelMode.RECURSIVE
    smooth_sharpness: float = 2.0
    sim_buffer_kbit: float = 2048.0

    def __post_init__(self) -> None:
        if self.clock_mhz <= 0:
            raise ValueError("clock_mhz must be > 0")
        if min(self.dsp_budget, self.bram_budget_kbit, self.lut_budget) <= 0:
            raise ValueError("resource budgets must be > 0")
        if self.bw_bytes_per_cycle <= 0:
            raise ValueError("bw_bytes_per_cycle must be > 0")
        if self.overhead_cycles_per_op < 0:
            raise ValueError("overhead_cycles_per_op must be >= 0")
        if self.smooth_sharpness <= 0:
            raise ValueError("smooth_sharpness must be > 0")
        if self.sim_buffer_kbit <= 0:
            raise ValueError("sim_buffer_kbit must be > 0")
        if any(v < 0 for v in self.dsp_per_lane.values()):
            raise ValueError("dsp_per_lane entries must be >= 0")

    def budgets(self) -> tuple[float, float, float]:
        return (float(self.dsp_budget), float(self.bram_budget_kbit), float(self.lut_budget))

    def dsp_cost(self, q: int) -> float:
        try:
            return float(self.dsp_per_lane[q])
        except KeyError:
            raise ValueError(f"dsp_per_lane has no entry for {q}-bit") from None


@dataclass(frozen=True)
class PerfReport:
    """Latency/throughput and resource usage of one design point."""

    per_op_cycles: tuple[int, ...]
    bound_kinds: tuple[BoundKind, ...]
    total_cycles: int
    latency_ms: float
    throughput_fps: float
    dsp: float
    bram_kbit: float
    lut: float

    def resources(self) -> tuple[float, float, float]:
        return (self.dsp, self.bram_kbit, self.lut)

    def to_json_dict(self) -> dict:
        return {
            "per_op_cycles": list(self.per_op_cycles),
            "total_cycles": self.total_cycles,
            "latency_ms": self.latency_ms,
            "throughput_fps": self.throughput_fps,
            "resources": {"dsp": self.dsp, "bram_kbit": self.bram_kbit, "lut": self.lut},
            "bound_kinds": [b.value for b in self.bound_kinds],
        }


def ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def pack_factor(q: int) -> int:
    """MAC operands packed per 16-bit hardware lane at bitwidth q."""
    if q <= 0 or 16 % q != 0:
        raise ValueError(f"bitwidth {q} does not divide the 16-bit lane")
    return 16 // q


def mbconv_internal_channels(op: OpCandidate, c_in: int) -> int:
    return max(1, round_half_up(op.expansion_ratio * c_in))


def op_macs(op: OpCandidate, shape: Shape) -> int:
    """Multiply-accumulate count of one candidate at one slot shape."""
    h, w, c_in, c_out = shape
    if op.kind is OpKind.CONV1X1:
        return h * w * c_in * c_out
    if op.kind is OpKind.DWCONV:
        return h * w * c_in * op.kernel_size**2
    if op.kind is OpKind.MBCONV:
        ec = mbconv_internal_channels(op, c_in)
        return h * w * c_in * ec + h * w * ec * op.kernel_size**2 + h * w * ec * c_out
    return 0


def weight_count(op: OpCandidate, shape: Shape) -> int:
    h, w, c_in, c_out = shape
    if op.kind is OpKind.CONV1X1:
        return c_in * c_out
    if op.kind is OpKind.DWCONV:
        return c_in * op.kernel_size**2
    if op.kind is OpKind.MBCONV:
        ec = mbconv_internal_channels(op, c_in)
        return c_in * ec + ec * op.kernel_size**2 + ec * c_out
    return 0


def moved_element_counts(op: OpCandidate, shape: Shape) -> tuple[int, int, int]:
    """(input, output, weight) element counts that cross the memory boundary.

    Zero-cost kinds move nothing; a depthwise op's real output has C_in
    channels regardless of the slot's declared C_out.
    """
    h, w, c_in, c_out = shape
    if op.kind in ZERO_COST_KINDS:
        return (0, 0, 0)
    out_ch = c_in if op.kind is OpKind.DWCONV else c_out
    return (h * w * c_in, h * w * out_ch, weight_count(op, shape))


def bytes_moved(op: OpCandidate, shape: Shape, q: int) -> float:
    i, o, wts = moved_element_counts(op, shape)
    return (i + o + wts) * q / 8.0


@dataclass(frozen=True)
class Stage:
    """One loop nest of an op: an (h, w, oc) output volume with per-unit
    cost factors. Composite ops (mobile bottleneck) run their stages
    sequentially through the engine; inter-stage maps stay on chip.

    macs_per_unit: MACs per output element; in_per_pixel: input elements
    fetched per spatial position (0 when the stage input is already on
    chip); weight_per_ochan: weight elements per output channel;
    out_counted: whether the stage writes its output off chip.
    """

    h: int
    w: int
    oc: int
    macs_per_unit: int
    in_per_pixel: int
    weight_per_ochan: int
    out_counted: bool

    @property
    def macs(self) -> int:
        return self.h * self.w * self.oc * self.macs_per_unit

    def moved_bytes(self, q: int) -> float:
        elems = (
            self.h * self.w * self.in_per_pixel
            + self.oc * self.weight_per_ochan
            + (self.h * self.w * self.oc if self.out_counted else 0)
        )
        return elems * q / 8.0


def op_stages(op: OpCandidate, shape: Shape) -> list[Stage]:
    """Stage decomposition; zero-cost kinds have none. Stage MACs and moved
    bytes sum exactly to op_macs / bytes_moved."""
    h, w, c_in, c_out = shape
    if op.kind in ZERO_COST_KINDS:
        return []
    if op.kind is OpKind.CONV1X1:
        return [Stage(h, w, c_out, c_in, c_in, c_in, True)]
    if op.kind is OpKind.DWCONV:
        k2 = op.kernel_size**2
        return [Stage(h, w, c_in, k2, c_in, k2, True)]
    ec = mbconv_internal_channels(op, c_in)
    k2 = op.kernel_size**2
    return [
        Stage(h, w, ec, c_in, c_in, c_in, False),
        Stage(h, w, ec, k2, 0, k2, False),
        Stage(h, w, c_out, ec, 0, ec, True),
    ]


def _check_impl_knobs(op: OpCandidate, q: int, pf) -> None:
    if q not in op.allowed_quant_bits:
        raise ValueError(f"q={q} not in allowed_quant_bits {list(op.allowed_quant_bits)}")
    lo, hi = op.pf_range
    pf_val = pf.value if isinstance(pf, ad.Node) else pf
    if not lo <= pf_val <= hi:
        raise ValueError(f"pf={pf_val} outside pf_range [{lo}, {hi}]")


def op_cycles_discrete(
    op: OpCandidate, shape: Shape, q: int, pf: int, platform: PlatformModel
) -> tuple[int, BoundKind]:
    """Exact roofline cycles: per-stage max(compute, memory), summed over
    stages, plus fixed overhead.

    Single-stage ops reduce to max(ceil(MACs/lanes), ceil(bytes/bw)); the
    bound kind reports which side dominates in total.
    """
    _check_impl_knobs(op, q, pf)
    lanes = (1 << pf) * pack_factor(q)
    cycles = 0
    compute_total = 0
    memory_total = 0
    for stage in op_stages(op, shape):
        compute = ceil_div(stage.macs, lanes)
        memory = math.ceil(stage.moved_bytes(q) / platform.bw_bytes_per_cycle)
        cycles += max(compute, memory)
        compute_total += compute
        memory_total += memory
    bound = BoundKind.COMPUTE if compute_total >= memory_total else BoundKind.MEMORY
    return cycles + platform.overhead_cycles_per_op, bound


def op_cycles_smooth(op: OpCandidate, shape: Shape, q: int, pf, platform: PlatformModel):
    """Differentiable cycles: real-valued per-stage rooflines with soft maxima.

    ``pf`` may be a float or a tape Node; the result has the same type.
    Within stages * (1 + s*ln2) of the discrete count everywhere (one
    soft-max smoothing band per stage).
    """
    _check_impl_knobs(op, q, pf)
    pack = pack_factor(q)
    s = platform.smooth_sharpness
    inv_lanes = ad.exp(pf * -math.log(2.0)) * (1.0 / pack)
    total = None
    for stage in op_stages(op, shape):
        compute = stage.macs * inv_lanes
        memory = stage.moved_bytes(q) / platform.bw_bytes_per_cycle
        cost = ad.smooth_max(compute, memory, s)
        total = cost if total is None else total + cost
    if total is None:
        total = pf * 0.0 + s * math.log(2.0)  # zero-cost op; keeps node type
    return total + platform.overhead_cycles_per_op


def op_resources(op: OpCandidate, shape: Shape, q: int, pf, platform: PlatformModel):
    """(dsp, bram_kbit, lut) of one op instance; differentiable in pf.

    ``pf`` may be a float or a tape Node (dsp/lut scale with 2**pf, bram is
    pf-independent). Zero-cost kinds consume nothing.
    """
    _check_impl_knobs(op, q, pf)
    if op.kind in ZERO_COST_KINDS:
        zero = pf * 0.0 if isinstance(pf, ad.Node) else 0.0
        return (zero, 0.0, zero)
    lanes_scale = ad.exp(pf * math.log(2.0)) if isinstance(pf, ad.Node) else 2.0**pf
    dsp = lanes_scale * platform.dsp_cost(q)
    lut = lanes_scale * platform.lut_per_lane
    h, w, c_in, _ = shape
    k = op.kernel_size
    linebuffer_bits = (k - 1) * w * c_in * q if k > 1 else 0
    bram_kbit = (weight_count(op, shape) * q + linebuffer_bits) / 1024.0
    return (dsp, bram_kbit, lut)


def evaluate(point: DesignPoint, space: SearchSpace, platform: PlatformModel) -> PerfReport:
    """Aggregate per-op models into a whole-design report.

    Recursive mode folds all uses of an op kind onto one engine instance
    sized for its largest use; pipelined mode instantiates every slot.
    """
    verdict = validate(space, point)
    if not verdict:
        raise ValueError(f"invalid design point: {verdict.reason}")
    menu = space.menu(point.bundle_id)
    slot_shapes = shapes(space, point)

    per_op_cycles = []
    bound_kinds = []
    per_op_res = []
    kinds = []
    for i in range(point.n):
        op = menu[point.op_choice[i]]
        cycles, bound = op_cycles_discrete(
            op, slot_shapes[i], point.quant_bits[i], point.pf[i], platform
        )
        per_op_cycles.append(cycles)
        bound_kinds.append(bound)
        per_op_res.append(
            op_resources(op, slot_shapes[i], point.quant_bits[i], point.pf[i], platform)
        )
        kinds.append(op.kind)

    total_cycles = sum(per_op_cycles)
    latency_ms = total_cycles / (platform.clock_mhz * 1e3)
    if platform.accel_mode is AccelMode.RECURSIVE:
        throughput_fps = 1000.0 / latency_ms if latency_ms > 0 else math.inf
        by_kind: dict[OpKind, list[float]] = {}
        for kind, res in zip(kinds, per_op_res):
            cur = by_kind.get(kind)
            if cur is None:
                by_kind[kind] = list(res)
            else:
                for r in range(3):
                    cur[r] = max(cur[r], res[r])
        totals = [0.0, 0.0, 0.0]
        for res in by_kind.values():
            for r in range(3):
                totals[r] += res[r]
    else:
        slowest = max(per_op_cycles) if per_op_cycles else 0
        throughput_fps = platform.clock_mhz * 1e6 / slowest if slowest > 0 else math.inf
        totals = [0.0, 0.0, 0.0]
        for res in per_op_res:
            for r in range(3):
                totals[r] += res[r]

    return PerfReport(
        per_op_cycles=tuple(per_op_cycles),
        bound_kinds=tuple(bound_kinds),
        total_cycles=total_cycles,
        latency_ms=latency_ms,
        throughput_fps=throughput_fps,
        dsp=totals[0],
        bram_kbit=totals[1],
        lut=totals[2],
    )
