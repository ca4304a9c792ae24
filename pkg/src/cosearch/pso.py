"""Particle-swarm co-search with bundle-type groups.

Particles hold continuous positions over (channel index, pooling indicator,
quantization index, parallel factor) at full depth; decoding clamps and
rounds to the nearest valid choice. Particles sharing a bundle form a group
whose best position adds a third attraction term to the velocity update.
Infeasible designs stay in the swarm but pay hinge penalties in fitness.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import perf
from .rng import child_seed, make_rng
from .space import DesignPoint, SearchSpace, round_half_up, sample_uniform, validate


@dataclass(frozen=True)
class PsoConfig:
    latency_target_ms: float
    seed: int
    swarm_size: int = 16
    iters: int = 50
    inertia: float = 0.7
    cognitive: float = 1.4
    social: float = 1.4
    group_social: float = 0.7
    fitness_lambda: float = 1.0
    res_ub: tuple[float, float, float] | None = None  # defaults to platform budgets

    def __post_init__(self) -> None:
        if self.swarm_size < 1:
            raise ValueError("swarm_size must be >= 1")
        if self.iters < 0:
            raise ValueError("iters must be >= 0")
        for name in ("inertia", "cognitive", "social", "group_social", "fitness_lambda"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.latency_target_ms <= 0:
            raise ValueError("latency_target_ms must be > 0")


@dataclass(frozen=True)
class PsoResult:
    best_point: DesignPoint
    best_fitness: float
    records: list[dict]


def fitness(
    accuracy: float,
    report: perf.PerfReport,
    res_ub: tuple[float, float, float],
    cfg: PsoConfig,
) -> float:
    """accuracy minus hinge penalties for latency and resource overshoot."""
    lam = cfg.fitness_lambda
    over_latency = max(0.0, (report.latency_ms - cfg.latency_target_ms) / cfg.latency_target_ms)
    over_res = sum(
        max(0.0, (used - ub) / ub) for used, ub in zip(report.resources(), res_ub)
    )
    return accuracy - lam * over_latency - lam * over_res


class _Codec:
    """Position vector <-> DesignPoint for one bundle at full depth."""

    def __init__(self, space: SearchSpace, bundle_id: str):
        self.space = space
        self.bundle_id = bundle_id
        self.bundle = space.bundle(bundle_id)
        self.menu = space.menu(bundle_id)
        self.n = space.n_slots
        self.template_ops = tuple(i % len(self.bundle.ops) for i in range(self.n))
        self.pool_slots = tuple(sorted(space.pool_positions))
        lo, hi = [], []
        for i in range(self.n):
            lo.append(0.0)
            hi.append(len(space.channel_choices[i]) - 1.0)
        for _ in self.pool_slots:
            lo.append(0.0)
            hi.append(1.0)
        for m in self.template_ops:
            lo.append(0.0)
            hi.append(len(self.menu[m].allowed_quant_bits) - 1.0)
        for m in self.template_ops:
            lo.append(float(self.menu[m].pf_range[0]))
            hi.append(float(self.menu[m].pf_range[1]))
        self.lo = np.array(lo)
        self.hi = np.array(hi)

    @property
    def dims(self) -> int:
        return len(self.lo)

    def encode(self, point: DesignPoint) -> np.ndarray:
        x = []
        for i in range(self.n):
            x.append(float(self.space.channel_choices[i].index(point.channels[i])))
        for p in self.pool_slots:
            x.append(1.0 if p in point.pools else 0.0)
        for i, m in enumerate(self.template_ops):
            x.append(float(self.menu[m].allowed_quant_bits.index(point.quant_bits[i])))
        for i in range(self.n):
            x.append(float(point.pf[i]))
        return np.array(x)

    def decode(self, x: np.ndarray) -> DesignPoint:
        x = np.minimum(np.maximum(x, self.lo), self.hi)
        n = self.n
        channels = tuple(
            self.space.channel_choices[i][round_half_up(x[i])] for i in range(n)
        )
        offset = n
        wanted = [
            p
            for j, p in enumerate(self.pool_slots)
            if round_half_up(x[offset + j]) >= 1
        ]
        pools = frozenset()
        if self.bundle.downsample_capable:
            h, w, _ = self.space.input_shape
            kept = set()
            for p in sorted(wanted):
                if p < n and h // 2 >= 1 and w // 2 >= 1:
                    kept.add(p)
                    h, w = h // 2, w // 2
            pools = frozenset(kept)
        offset += len(self.pool_slots)
        quant = tuple(
            self.menu[m].allowed_quant_bits[round_half_up(x[offset + i])]
            for i, m in enumerate(self.template_ops)
        )
        offset += n
        pf = []
        for i, m in enumerate(self.template_ops):
            lo, hi = self.menu[m].pf_range
            pf.append(min(max(round_half_up(x[offset + i]), lo), hi))
        point = DesignPoint(
            bundle_id=self.bundle_id,
            n=n,
            op_choice=self.template_ops,
            channels=channels,
            pools=pools,
            quant_bits=quant,
            pf=tuple(pf),
        )
        assert validate(self.space, point), "decoded point must be valid"
        return point


def pso_search(
    space: SearchSpace,
    platform: perf.PlatformModel,
    evaluator,
    cfg: PsoConfig,
) -> PsoResult:
    res_ub = cfg.res_ub if cfg.res_ub is not None else platform.budgets()
    eval_seed = child_seed(cfg.seed, "pso-eval")
    codecs = {b.id: _Codec(space, b.id) for b in space.bundles}
    groups = [space.bundles[i % len(space.bundles)].id for i in range(cfg.swarm_size)]

    def assess(point: DesignPoint) -> tuple[float, bool, perf.PerfReport]:
        report = perf.evaluate(point, space, platform)
        acc = evaluator.accuracy(point, seed=eval_seed)
        fit = fitness(acc, report, res_ub, cfg)
        feasible = (
            all(u <= b for u, b in zip(report.resources(), res_ub))
            and report.latency_ms <= cfg.latency_target_ms
        )
        return fit, feasible, report

    positions, velocities, points = [], [], []
    for i in range(cfg.swarm_size):
        codec = codecs[groups[i]]
        seed_pt = sample_uniform(
            space, child_seed(cfg.seed, "pso-init", i), bundle_id=groups[i], n=space.n_slots
        )
        x = codec.encode(seed_pt)
        positions.append(x)
        velocities.append(np.zeros_like(x))
        points.append(codec.decode(x))

    records: list[dict] = []
    pbest_x = [x.copy() for x in positions]
    pbest_fit = []
    gbest_fit = -math.inf
    gbest_point = None
    group_best: dict[str, tuple[float, np.ndarray]] = {}
    for i in range(cfg.swarm_size):
        fit, feasible, _ = assess(points[i])
        pbest_fit.append(fit)
        is_new_gbest = fit > gbest_fit
        if is_new_gbest:
            gbest_fit, gbest_point = fit, points[i]
            gbest_x = positions[i].copy()
        gb = group_best.get(groups[i])
        if gb is None or fit > gb[0]:
            group_best[groups[i]] = (fit, positions[i].copy())
        records.append(
            {"iter": 0, "particle": i, "fitness": fit, "feasible": feasible, "is_new_gbest": is_new_gbest}
        )

    for it in range(1, cfg.iters + 1):
        for i in range(cfg.swarm_size):
            codec = codecs[groups[i]]
            rng = make_rng(cfg.seed, "pso-vel", it * cfg.swarm_size + i)
            r1 = rng.random(codec.dims)
            r2 = rng.random(codec.dims)
            r3 = rng.random(codec.dims)
            grp_x = group_best[groups[i]][1]
            velocities[i] = (
                cfg.inertia * velocities[i]
                + cfg.cognitive * r1 * (pbest_x[i] - positions[i])
                + cfg.social * r2 * (gbest_x - positions[i])
                + cfg.group_social * r3 * (grp_x - positions[i])
            )
            positions[i] = np.minimum(
                np.maximum(positions[i] + velocities[i], codec.lo), codec.hi
            )
            points[i] = codec.decode(positions[i])
        for i in range(cfg.swarm_size):
            fit, feasible, _ = assess(points[i])
            if fit > pbest_fit[i]:
                pbest_fit[i] = fit
                pbest_x[i] = positions[i].copy()
            gb = group_best[groups[i]]
            if fit > gb[0]:
                group_best[groups[i]] = (fit, positions[i].copy())
            is_new_gbest = fit > gbest_fit
            if is_new_gbest:
                gbest_fit, gbest_point = fit, points[i]
                gbest_x = positions[i].copy()
            records.append(
                {"iter": it, "particle": i, "fitness": fit, "feasible": feasible, "is_new_gbest": is_new_gbest}
            )

    return PsoResult(best_point=gbest_point, best_fitness=gbest_fit, records=records)
