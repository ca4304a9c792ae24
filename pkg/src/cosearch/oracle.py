"""Tile-level discrete simulator for the template accelerator.

Executes the loop nest one output tile at a time: per tile the compute and
IO phases overlap (double buffering), so the tile costs the max of the two.
Data is staged so each off-chip element crosses the boundary exactly once:
an input slab is fetched on a spatial tile's first channel tile, weights on
a channel slab's first spatial tile. This is the ground truth the analytical
model is checked against.

Composite ops run stage by stage (expand / depthwise / project for the
mobile bottleneck); inter-stage feature maps stay on chip.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from . import perf
from .perf import PlatformModel, Shape, ceil_div, pack_factor
from .space import DesignPoint, OpCandidate, SearchSpace, shapes, validate


@dataclass(frozen=True)
class TileSchedule:
    tile_h: int
    tile_w: int
    tile_c: int
    lanes: int

    def __post_init__(self) -> None:
        if min(self.tile_h, self.tile_w, self.tile_c) < 1:
            raise ValueError("tile dimensions must be >= 1")
        if self.lanes < 1:
            raise ValueError("lanes must be >= 1")


def simulate_op(
    op: OpCandidate,
    shape: Shape,
    q: int,
    schedule: TileSchedule,
    platform: PlatformModel,
    trace: list | None = None,
) -> tuple[int, int, float]:
    """Run the tiled loop nest; returns (cycles, macs_executed, bytes_moved).

    Tiles larger than a stage are clipped, never an error. ``trace``, when
    given, collects one event tuple per tile for CSV dumping.
    """
    elem_bytes = q / 8.0
    bw = platform.bw_bytes_per_cycle
    cycles = 0
    macs_total = 0
    bytes_total = 0.0
    for si, stage in enumerate(perf.op_stages(op, shape)):
        th = min(schedule.tile_h, stage.h)
        tw = min(schedule.tile_w, stage.w)
        tc = min(schedule.tile_c, stage.oc)
        for h0 in range(0, stage.h, th):
            eh = min(th, stage.h - h0)
            for w0 in range(0, stage.w, tw):
                ew = min(tw, stage.w - w0)
                for c0 in range(0, stage.oc, tc):
                    ec = min(tc, stage.oc - c0)
                    tmacs = eh * ew * ec * stage.macs_per_unit
                    tbytes = 0.0
                    if c0 == 0:
                        tbytes += eh * ew * stage.in_per_pixel * elem_bytes
                    if h0 == 0 and w0 == 0:
                        tbytes += ec * stage.weight_per_ochan * elem_bytes
                    if stage.out_counted:
                        tbytes += eh * ew * ec * elem_bytes
                    compute_cycles = ceil_div(tmacs, schedule.lanes) if tmacs else 0
                    io_cycles = math.ceil(tbytes / bw)
                    cost = max(compute_cycles, io_cycles)
                    cycles += cost
                    macs_total += tmacs
                    bytes_total += tbytes
                    if trace is not None:
                        trace.append(
                            (si, h0, w0, c0, eh, ew, ec, tmacs, tbytes, compute_cycles, io_cycles, cost)
                        )
    return cycles + platform.overhead_cycles_per_op, macs_total, bytes_total


def default_schedule(
    op: OpCandidate, shape: Shape, q: int, pf: int, platform: PlatformModel
) -> TileSchedule:
    """Largest tile whose working set fits the on-chip buffer bound.

    Deterministic shrink order: halve H, then W, then output channels, and
    repeat. A 1x1x1 tile is used even if it still exceeds the bound.
    """
    lanes = (1 << pf) * pack_factor(q)
    stages = perf.op_stages(op, shape)
    if not stages:
        return TileSchedule(1, 1, 1, lanes)
    h = max(s.h for s in stages)
    w = max(s.w for s in stages)
    c = max(s.oc for s in stages)
    bound_bytes = platform.sim_buffer_kbit * 1024.0 / 8.0
    elem_bytes = q / 8.0

    def footprint(th: int, tw: int, tc: int) -> float:
        worst = 0.0
        for s in stages:
            eh, ew, ec = min(th, s.h), min(tw, s.w), min(tc, s.oc)
            elems = eh * ew * s.in_per_pixel + eh * ew * ec + ec * s.weight_per_ochan
            worst = max(worst, elems * elem_bytes)
        return worst

    dims = [h, w, c]
    turn = 0
    while footprint(*dims) > bound_bytes and max(dims) > 1:
        for _ in range(3):
            if dims[turn % 3] > 1:
                dims[turn % 3] = ceil_div(dims[turn % 3], 2)
                turn += 1
                break
            turn += 1
    return TileSchedule(dims[0], dims[1], dims[2], lanes)


@dataclass(frozen=True)
class OpCrosscheck:
    slot: int
    analytical: int
    simulated: int
    rel_error: float
    within_tol: bool

    def to_json_dict(self) -> dict:
        return {
            "slot": self.slot,
            "analytical": self.analytical,
            "simulated": self.simulated,
            "rel_error": self.rel_error,
            "within_tol": self.within_tol,
        }


def crosscheck(
    point: DesignPoint,
    space: SearchSpace,
    platform: PlatformModel,
    tolerance: float = 0.05,
) -> list[OpCrosscheck]:
    """Analytical vs simulated cycles per op, flagging |rel_error| > tolerance."""
    verdict = validate(space, point)
    if not verdict:
        raise ValueError(f"invalid design point: {verdict.reason}")
    menu = space.menu(point.bundle_id)
    slot_shapes = shapes(space, point)
    out = []
    for i in range(point.n):
        op = menu[point.op_choice[i]]
        q, pf = point.quant_bits[i], point.pf[i]
        analytical, _ = perf.op_cycles_discrete(op, slot_shapes[i], q, pf, platform)
        schedule = default_schedule(op, slot_shapes[i], q, pf, platform)
        simulated, _, _ = simulate_op(op, slot_shapes[i], q, schedule, platform)
        if simulated > 0:
            rel = (analytical - simulated) / simulated
        else:
            rel = 0.0 if analytical == 0 else math.inf
        out.append(OpCrosscheck(i, analytical, simulated, rel, abs(rel) <= tolerance))
    return out
