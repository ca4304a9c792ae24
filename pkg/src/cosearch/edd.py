"""Differentiable co-search over the relaxed joint objective.

Operation and quantization choices are relaxed with Gumbel-Softmax samples
over logit arrays (theta: slots x candidates, phi: slots x candidates x
bitwidths); parallel factors relax to continuous exponents. The loss

    acc_loss * perf_loss + beta * C ** overshoot(resources)

is built on the scalar tape from expectation-weighted smooth per-op models,
descended with per-family learning rates, and finally snapped back to a
discrete design point by argmax/rounding.

The overshoot exponent is clamped below at zero with a sharp softplus, so
designs under budget all pay ~beta instead of being rewarded for wasted
headroom; the macro skeleton (depth, channels, pools) stays fixed here and
is searched by the discrete strategies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import autodiff as ad
from . import perf
from .accuracy import SurrogateParams, surrogate_acc_loss
from .autodiff import GumbelConfig, Tape, grad, gumbel_softmax
from .rng import make_rng
from .space import DesignPoint, OpKind, SearchSpace, round_half_up, shapes, validate


class PerfMode(str, Enum):
    LATENCY_SUM = "latency_sum"      # folded engine: block latencies add up
    THROUGHPUT_MAX = "throughput_max"  # pipeline: slowest block dominates


@dataclass(frozen=True)
class EddConfig:
    epochs: int
    seed: int
    lr_theta: float = 0.2
    lr_phi: float = 0.2
    lr_pf: float = 0.05
    beta: float = 1.0
    penalty_base: float = math.e
    res_ub: tuple[float, float, float] | None = None  # defaults to platform budgets
    gumbel: GumbelConfig = field(default_factory=GumbelConfig)
    perf_mode: PerfMode = PerfMode.LATENCY_SUM
    bundle_id: str | None = None
    skeleton_n: int | None = None
    skeleton_channels: tuple[int, ...] | None = None
    skeleton_pools: frozenset[int] = frozenset()
    penalty_sharpness: float = 25.0
    grad_clip: float | None = 100.0

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.penalty_base <= 1:
            raise ValueError("penalty_base must be > 1")
        if self.res_ub is not None and any(r <= 0 for r in self.res_ub):
            raise ValueError("res_ub entries must be > 0")
        for name in ("lr_theta", "lr_phi", "lr_pf"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.penalty_sharpness <= 0:
            raise ValueError("penalty_sharpness must be > 0")


@dataclass(frozen=True)
class Skeleton:
    """The fixed macro shape a relaxed search runs inside."""

    bundle_id: str
    n: int
    channels: tuple[int, ...]
    pools: frozenset[int]


def resolve_skeleton(space: SearchSpace, cfg: EddConfig) -> Skeleton:
    bundle_id = cfg.bundle_id or space.bundles[0].id
    n = cfg.skeleton_n if cfg.skeleton_n is not None else space.n_slots
    channels = (
        cfg.skeleton_channels
        if cfg.skeleton_channels is not None
        else tuple(space.channel_choices[i][0] for i in range(n))
    )
    return Skeleton(bundle_id=bundle_id, n=n, channels=channels, pools=cfg.skeleton_pools)


@dataclass
class RelaxedState:
    """Continuous search state: sampling logits and real parallel factors."""

    theta: np.ndarray  # (n, M)
    phi: np.ndarray    # (n, M, Q)
    pf_cont: np.ndarray  # (n, M)

    def copy(self) -> "RelaxedState":
        return RelaxedState(self.theta.copy(), self.phi.copy(), self.pf_cont.copy())

    def to_json_dict(self) -> dict:
        return {
            "theta": self.theta.tolist(),
            "phi": self.phi.tolist(),
            "pf_cont": self.pf_cont.tolist(),
        }


def init_state(space: SearchSpace, skeleton: Skeleton) -> RelaxedState:
    menu = space.menu(skeleton.bundle_id)
    n, m, q = skeleton.n, len(menu), space.num_quant
    pf = np.zeros((n, m))
    for j, op in enumerate(menu):
        lo, hi = op.pf_range
        pf[:, j] = (lo + hi) / 2.0
    return RelaxedState(theta=np.zeros((n, m)), phi=np.zeros((n, m, q)), pf_cont=pf)


def _clamp_pf(state: RelaxedState, menu) -> None:
    for j, op in enumerate(menu):
        lo, hi = op.pf_range
        state.pf_cont[:, j] = np.clip(state.pf_cont[:, j], lo, hi)


@dataclass(frozen=True)
class LossParts:
    loss: ad.Node
    acc_loss: ad.Node
    perf_loss: ad.Node
    penalty: ad.Node


def build_relaxed_loss(
    state: RelaxedState,
    space: SearchSpace,
    platform: perf.PlatformModel,
    surrogate: SurrogateParams,
    cfg: EddConfig,
    tape: Tape,
    rng: np.random.Generator,
    tau: float,
) -> LossParts:
    """Assemble the full relaxed objective on the tape for one sample draw."""
    skeleton = resolve_skeleton(space, cfg)
    menu = space.menu(skeleton.bundle_id)
    n, m = skeleton.n, len(menu)
    backbone = DesignPoint(
        bundle_id=skeleton.bundle_id,
        n=n,
        op_choice=(0,) * n,
        channels=skeleton.channels,
        pools=skeleton.pools,
        quant_bits=tuple(menu[0].allowed_quant_bits[0] for _ in range(n)),
        pf=tuple(menu[0].pf_range[0] for _ in range(n)),
    )
    slot_shapes = shapes(space, backbone)
    res_ub = cfg.res_ub if cfg.res_ub is not None else platform.budgets()

    theta = [
        [tape.var(f"theta:{i}:{j}", state.theta[i, j]) for j in range(m)] for i in range(n)
    ]
    phi = [
        [
            [tape.var(f"phi:{i}:{j}:{k}", state.phi[i, j, k]) for k in range(space.num_quant)]
            for j in range(m)
        ]
        for i in range(n)
    ]
    pf = [
        [tape.var(f"pf:{i}:{j}", state.pf_cont[i, j]) for j in range(m)] for i in range(n)
    ]

    block_cycles = []
    res_terms: list[list] = [[], [], []]
    lpc_terms = []
    depth_terms = []
    qpen_terms = []
    for i in range(n):
        g = gumbel_softmax(theta[i], tau, rng)
        slot_cycles = None
        for j, op in enumerate(menu):
            qhat = gumbel_softmax(phi[i][j], tau, rng)
            op_cycles = None
            op_pen = None
            res_j = [None, None, None]
            for k, q in enumerate(op.allowed_quant_bits):
                cyc = perf.op_cycles_smooth(op, slot_shapes[i], q, pf[i][j], platform)
                term = qhat[k] * cyc
                op_cycles = term if op_cycles is None else op_cycles + term
                dsp, bram, lut = perf.op_resources(op, slot_shapes[i], q, pf[i][j], platform)
                for r, res in enumerate((dsp, bram, lut)):
                    weighted = qhat[k] * res
                    res_j[r] = weighted if res_j[r] is None else res_j[r] + weighted
                pen = qhat[k] * surrogate.penalty(q)
                op_pen = pen if op_pen is None else op_pen + pen
            weighted_cycles = g[j] * op_cycles
            slot_cycles = (
                weighted_cycles if slot_cycles is None else slot_cycles + weighted_cycles
            )
            for r in range(3):
                res_terms[r].append(g[j] * res_j[r])
            lpc_terms.append(g[j] * math.log1p(perf.weight_count(op, slot_shapes[i])))
            if op.kind is not OpKind.IDENTITY:
                depth_terms.append(g[j])
            qpen_terms.append(g[j] * op_pen)
        block_cycles.append(slot_cycles)

    def total(terms):
        acc = terms[0]
        for t in terms[1:]:
            acc = acc + t
        return acc

    if cfg.perf_mode is PerfMode.LATENCY_SUM:
        cycles = total(block_cycles)
    else:
        cycles = block_cycles[0]
        for b in block_cycles[1:]:
            cycles = ad.smooth_max(cycles, b, platform.smooth_sharpness)
    perf_loss = cycles * (1.0 / (platform.clock_mhz * 1e3))  # milliseconds

    lpc = total(lpc_terms)
    depth = total(depth_terms) if depth_terms else tape.const(0.0)
    qpen = total(qpen_terms) * (1.0 / n)
    acc_loss = surrogate_acc_loss(lpc, depth, qpen, surrogate)

    overshoot = None
    for r in range(3):
        used = total(res_terms[r])
        frac = (used - res_ub[r]) * (1.0 / res_ub[r])
        clamped = ad.softplus(frac, cfg.penalty_sharpness)
        overshoot = clamped if overshoot is None else overshoot + clamped
    penalty = ad.exp(overshoot * math.log(cfg.penalty_base)) * cfg.beta

    loss = acc_loss * perf_loss + penalty
    return LossParts(loss=loss, acc_loss=acc_loss, perf_loss=perf_loss, penalty=penalty)


def derive_discrete(state: RelaxedState, space: SearchSpace, skeleton: Skeleton) -> DesignPoint:
    """Snap the relaxed state to a discrete point: argmax choices, rounded
    (half-up) parallel factors clamped to the chosen op's range."""
    menu = space.menu(skeleton.bundle_id)
    op_choice = []
    quant = []
    pf = []
    for i in range(skeleton.n):
        j = int(np.argmax(state.theta[i]))
        op_choice.append(j)
        op = menu[j]
        k = int(np.argmax(state.phi[i, j]))
        quant.append(op.allowed_quant_bits[k])
        lo, hi = op.pf_range
        pf.append(min(max(round_half_up(float(state.pf_cont[i, j])), lo), hi))
    point = DesignPoint(
        bundle_id=skeleton.bundle_id,
        n=skeleton.n,
        op_choice=tuple(op_choice),
        channels=skeleton.channels,
        pools=skeleton.pools,
        quant_bits=tuple(quant),
        pf=tuple(pf),
    )
    verdict = validate(space, point)
    if not verdict:
        raise ValueError(f"derived point invalid: {verdict.reason}")
    return point


def discrete_objective(
    point: DesignPoint,
    space: SearchSpace,
    platform: perf.PlatformModel,
    evaluator,
    cfg: EddConfig,
    eval_seed: int = 0,
) -> dict:
    """Hard-constraint counterpart of the relaxed loss, for audits/comparison.

    Penalty uses the exact hinge (no smoothing): at resources equal to the
    bound it is exactly beta; with beta = 0 the objective is exactly
    acc_loss * perf_term.
    """
    report = perf.evaluate(point, space, platform)
    res_ub = cfg.res_ub if cfg.res_ub is not None else platform.budgets()
    if cfg.perf_mode is PerfMode.LATENCY_SUM:
        perf_term = report.latency_ms
    else:
        perf_term = max(report.per_op_cycles) / (platform.clock_mhz * 1e3)
    overshoot = sum(
        max(0.0, (used - ub) / ub) for used, ub in zip(report.resources(), res_ub)
    )
    acc = evaluator.acc_loss(point, seed=eval_seed)
    penalty = cfg.beta * cfg.penalty_base**overshoot
    feasible = all(used <= ub for used, ub in zip(report.resources(), res_ub))
    return {
        "total": acc * perf_term + penalty,
        "acc_loss": acc,
        "perf_term": perf_term,
        "penalty": penalty,
        "feasible_res": feasible,
    }


@dataclass(frozen=True)
class EddResult:
    best_point: DesignPoint
    state: RelaxedState
    records: list[dict]


def edd_search(
    space: SearchSpace,
    platform: perf.PlatformModel,
    surrogate: SurrogateParams,
    cfg: EddConfig,
) -> EddResult:
    """Descend the relaxed loss; one fresh Gumbel sample set per epoch."""
    skeleton = resolve_skeleton(space, cfg)
    menu = space.menu(skeleton.bundle_id)
    state = init_state(space, skeleton)
    records: list[dict] = []
    for epoch in range(cfg.epochs):
        tau = cfg.gumbel.temperature(epoch)
        tape = Tape()
        rng = make_rng(cfg.gumbel.seed, "edd-gumbel", epoch)
        parts = build_relaxed_loss(state, space, platform, surrogate, cfg, tape, rng, tau)
        if not math.isfinite(parts.loss.value):
            records.append({"epoch": epoch, "aborted": "non-finite loss"})
            break
        records.append(
            {
                "epoch": epoch,
                "loss": parts.loss.value,
                "acc_loss": parts.acc_loss.value,
                "perf_loss": parts.perf_loss.value,
                "penalty": parts.penalty.value,
                "tau": tau,
            }
        )
        names = list(tape._var_index)
        grads = grad(tape, parts.loss, names)
        n, m = skeleton.n, len(menu)
        for i in range(n):
            for j in range(m):
                state.theta[i, j] -= cfg.lr_theta * _clip(grads[f"theta:{i}:{j}"], cfg.grad_clip)
                state.pf_cont[i, j] -= cfg.lr_pf * _clip(grads[f"pf:{i}:{j}"], cfg.grad_clip)
                for k in range(space.num_quant):
                    state.phi[i, j, k] -= cfg.lr_phi * _clip(
                        grads[f"phi:{i}:{j}:{k}"], cfg.grad_clip
                    )
        _clamp_pf(state, menu)
    point = derive_discrete(state, space, skeleton)
    return EddResult(best_point=point, state=state, records=records)


def _clip(g: float, clip: float | None) -> float:
    if not math.isfinite(g):
        raise ValueError("non-finite gradient")
    if clip is None:
        return g
    return min(max(g, -clip), clip)
