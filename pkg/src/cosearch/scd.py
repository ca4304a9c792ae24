"""Stochastic coordinate descent over the discrete co-design knobs.

Each iteration perturbs one randomly chosen coordinate by one step in its
ordered choice list and keeps the proposal only if it stays within the
hard resource/latency constraints and strictly improves the accuracy-loss
objective. Restarts run from independent seeded initial points.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

from . import perf
from .rng import child_seed, make_rng
from .space import DesignPoint, SearchSpace, sample_uniform, validate

KNOWN_COORDS = ("replications", "pools", "channels", "quant", "pf", "ops")


class InfeasibleError(RuntimeError):
    """No feasible initial point found within the attempt budget."""


@dataclass(frozen=True)
class ScdConfig:
    max_iters: int
    latency_target_ms: float
    seed: int
    coords: tuple[str, ...] = ("replications", "pools", "channels", "quant", "pf")
    proposal_radius: dict = field(default_factory=dict)  # per-coord step, default 1
    restarts: int = 1
    patience: int | None = None
    init_attempts: int = 1000

    def __post_init__(self) -> None:
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.coords:
            raise ValueError("coords must be nonempty")
        unknown = set(self.coords) - set(KNOWN_COORDS)
        if unknown:
            raise ValueError(f"unknown coords {sorted(unknown)}; known: {KNOWN_COORDS}")
        if self.latency_target_ms <= 0:
            raise ValueError("latency_target_ms must be > 0")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.patience is not None and self.patience < 1:
            raise ValueError("patience must be >= 1 when set")

    def radius(self, coord: str) -> int:
        return int(self.proposal_radius.get(coord, 1))


@dataclass(frozen=True)
class ScdResult:
    best_point: DesignPoint
    best_objective: float
    records: list[dict]


def is_feasible(
    point: DesignPoint, space: SearchSpace, platform: perf.PlatformModel, latency_target_ms: float
) -> tuple[bool, perf.PerfReport | None]:
    if not validate(space, point):
        return False, None
    report = perf.evaluate(point, space, platform)
    ok = (
        report.dsp <= platform.dsp_budget
        and report.bram_kbit <= platform.bram_budget_kbit
        and report.lut <= platform.lut_budget
        and report.latency_ms <= latency_target_ms
    )
    return ok, report


def _step_index(rng, current: int, size: int, radius: int) -> int:
    delta = radius if rng.random() < 0.5 else -radius
    stepped = min(max(current + delta, 0), size - 1)
    if stepped == current:  # clamped at the boundary: reflect, don't waste the move
        stepped = min(max(current - delta, 0), size - 1)
    return stepped


def _resize_point(point: DesignPoint, space: SearchSpace, new_n: int) -> DesignPoint:
    """Grow by replicating the last slot (clamped to each slot's domains)."""
    menu = space.menu(point.bundle_id)
    op_choice = list(point.op_choice)
    channels = list(point.channels)
    quant = list(point.quant_bits)
    pf = list(point.pf)
    while len(op_choice) > new_n:
        op_choice.pop(), channels.pop(), quant.pop(), pf.pop()
    while len(op_choice) < new_n:
        i = len(op_choice)
        m = op_choice[-1]
        op = menu[m]
        prev_idx = space.channel_choices[i - 1].index(channels[-1])
        ch = space.channel_choices[i][min(prev_idx, len(space.channel_choices[i]) - 1)]
        op_choice.append(m)
        channels.append(ch)
        quant.append(min(quant[-1], op.allowed_quant_bits[-1]) if quant[-1] in op.allowed_quant_bits else op.allowed_quant_bits[-1])
        pf.append(min(max(pf[-1], op.pf_range[0]), op.pf_range[1]))
    pools = frozenset(p for p in point.pools if p < new_n)
    return DesignPoint(
        bundle_id=point.bundle_id,
        n=new_n,
        op_choice=tuple(op_choice),
        channels=tuple(channels),
        pools=pools,
        quant_bits=tuple(quant),
        pf=tuple(pf),
    )


def propose(point: DesignPoint, space: SearchSpace, coord: str, radius: int, rng) -> DesignPoint:
    """One-coordinate neighbor; always structurally valid except for possible
    shape collapse from a pool toggle (caught by the feasibility check)."""
    menu = space.menu(point.bundle_id)
    bundle = space.bundle(point.bundle_id)
    if coord == "replications":
        delta = radius if rng.random() < 0.5 else -radius
        new_n = min(max(point.n + delta, 1), space.n_slots)
        return _resize_point(point, space, new_n)
    if coord == "pools":
        avail = [p for p in sorted(space.pool_positions) if p < point.n]
        if not avail or not bundle.downsample_capable:
            return point
        p = avail[int(rng.integers(0, len(avail)))]
        pools = set(point.pools)
        pools.symmetric_difference_update({p})
        return DesignPoint(
            bundle_id=point.bundle_id,
            n=point.n,
            op_choice=point.op_choice,
            channels=point.channels,
            pools=frozenset(pools),
            quant_bits=point.quant_bits,
            pf=point.pf,
        )
    slot = int(rng.integers(0, point.n))
    if coord == "channels":
        choices = space.channel_choices[slot]
        idx = choices.index(point.channels[slot])
        new = choices[_step_index(rng, idx, len(choices), radius)]
        channels = point.channels[:slot] + (new,) + point.channels[slot + 1 :]
        return DesignPoint(
            bundle_id=point.bundle_id,
            n=point.n,
            op_choice=point.op_choice,
            channels=channels,
            pools=point.pools,
            quant_bits=point.quant_bits,
            pf=point.pf,
        )
    if coord == "quant":
        op = menu[point.op_choice[slot]]
        bits = op.allowed_quant_bits
        idx = bits.index(point.quant_bits[slot])
        new = bits[_step_index(rng, idx, len(bits), radius)]
        quant = point.quant_bits[:slot] + (new,) + point.quant_bits[slot + 1 :]
        return DesignPoint(
            bundle_id=point.bundle_id,
            n=point.n,
            op_choice=point.op_choice,
            channels=point.channels,
            pools=point.pools,
            quant_bits=quant,
            pf=point.pf,
        )
    if coord == "pf":
        op = menu[point.op_choice[slot]]
        lo, hi = op.pf_range
        delta = radius if rng.random() < 0.5 else -radius
        new = min(max(point.pf[slot] + delta, lo), hi)
        pf = point.pf[:slot] + (new,) + point.pf[slot + 1 :]
        return DesignPoint(
            bundle_id=point.bundle_id,
            n=point.n,
            op_choice=point.op_choice,
            channels=point.channels,
            pools=point.pools,
            quant_bits=point.quant_bits,
            pf=pf,
        )
    # ops: step the candidate index; re-map quant by position, clamp pf
    new_m = _step_index(rng, point.op_choice[slot], len(menu), radius)
    old_op = menu[point.op_choice[slot]]
    new_op = menu[new_m]
    q_idx = old_op.allowed_quant_bits.index(point.quant_bits[slot])
    new_q = new_op.allowed_quant_bits[min(q_idx, len(new_op.allowed_quant_bits) - 1)]
    lo, hi = new_op.pf_range
    new_pf = min(max(point.pf[slot], lo), hi)
    return DesignPoint(
        bundle_id=point.bundle_id,
        n=point.n,
        op_choice=point.op_choice[:slot] + (new_m,) + point.op_choice[slot + 1 :],
        channels=point.channels,
        pools=point.pools,
        quant_bits=point.quant_bits[:slot] + (new_q,) + point.quant_bits[slot + 1 :],
        pf=point.pf[:slot] + (new_pf,) + point.pf[slot + 1 :],
    )


def _run_restart(
    space: SearchSpace,
    platform: perf.PlatformModel,
    evaluator,
    cfg: ScdConfig,
    restart: int,
) -> tuple[DesignPoint, float, list[dict]]:
    eval_seed = child_seed(cfg.seed, "scd-eval")
    rng = make_rng(cfg.seed, "scd-loop", restart)

    current = None
    for attempt in range(cfg.init_attempts):
        candidate = sample_uniform(space, child_seed(cfg.seed, f"scd-init-{restart}", attempt))
        ok, _ = is_feasible(candidate, space, platform, cfg.latency_target_ms)
        if ok:
            current = candidate
            break
    if current is None:
        raise InfeasibleError(
            f"no feasible initial point in {cfg.init_attempts} attempts "
            f"(restart {restart}); relax budgets or the latency target"
        )
    current_obj = evaluator.acc_loss(current, seed=eval_seed)
    records = [
        {
            "restart": restart,
            "iter": 0,
            "coord": "init",
            "proposal": current.to_json_dict(),
            "feasible": True,
            "objective": current_obj,
            "accepted": True,
        }
    ]
    rejections = 0
    for it in range(1, cfg.max_iters + 1):
        coord = cfg.coords[int(rng.integers(0, len(cfg.coords)))]
        proposal = propose(current, space, coord, cfg.radius(coord), rng)
        feasible, _ = is_feasible(proposal, space, platform, cfg.latency_target_ms)
        objective = evaluator.acc_loss(proposal, seed=eval_seed) if feasible else math.inf
        accepted = feasible and objective < current_obj
        records.append(
            {
                "restart": restart,
                "iter": it,
                "coord": coord,
                "proposal": proposal.to_json_dict(),
                "feasible": feasible,
                "objective": objective if feasible else None,
                "accepted": accepted,
            }
        )
        if accepted:
            current, current_obj = proposal, objective
            rejections = 0
        else:
            rejections += 1
            if cfg.patience is not None and rejections >= cfg.patience:
                break
    return current, current_obj, records


def scd_search(
    space: SearchSpace,
    platform: perf.PlatformModel,
    evaluator,
    cfg: ScdConfig,
    threads: int = 1,
) -> ScdResult:
    """Run all restarts; the reduction order is fixed by restart index, so
    the result is independent of thread count."""
    if threads > 1 and cfg.restarts > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(
                pool.map(
                    lambda r: _run_restart(space, platform, evaluator, cfg, r),
                    range(cfg.restarts),
                )
            )
    else:
        outcomes = [
            _run_restart(space, platform, evaluator, cfg, r) for r in range(cfg.restarts)
        ]
    best_point, best_obj = None, math.inf
    records: list[dict] = []
    for point, obj, recs in outcomes:
        records.extend(recs)
        if obj < best_obj:
            best_point, best_obj = point, obj
    return ScdResult(best_point=best_point, best_objective=best_obj, records=records)
