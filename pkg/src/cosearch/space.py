"""Joint architecture/implementation design space.

A :class:`SearchSpace` couples a menu of candidate operations (grouped into
reusable bundles) with the implementation knobs of a template accelerator:
per-slot quantization bitwidths and parallel-factor exponents. A
:class:`DesignPoint` pins every knob.

Spatial downsampling lives exclusively on the ``pools`` knob (halvings
between slots); operation candidates never change spatial dimensions, so all
candidates at a slot are interchangeable without affecting shape propagation
(the single-path contract).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, Sequence

from .rng import make_rng


class OpKind(str, Enum):
    CONV1X1 = "conv1x1"
    DWCONV = "dwconv"
    MBCONV = "mbconv"
    POOL2X2 = "pool2x2"
    IDENTITY = "identity"


#: Kinds that perform no multiply-accumulates and occupy no compute lanes.
ZERO_COST_KINDS = frozenset({OpKind.POOL2X2, OpKind.IDENTITY})


class SpaceError(ValueError):
    """A space, candidate, or bundle definition violates an invariant."""


class ShapeCollapseError(ValueError):
    """Pooling drove a feature-map dimension to zero."""


def round_half_up(x: float) -> int:
    """Round to nearest integer, halves away from zero toward +inf.

    Used everywhere a continuous knob is discretized, so that 3.5 -> 4
    regardless of parity (Python's built-in round is banker's rounding).
    """
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class OpCandidate:
    """One candidate operation and its implementation domains.

    ``kernel_size`` is meaningful for depthwise/mobile-bottleneck kinds only;
    ``expansion_ratio`` is the bottleneck's internal channel expand factor.
    ``pf_range`` bounds the parallel-factor exponent: 2**pf multiplications
    run concurrently in the op's hardware engine.
    """

    kind: OpKind
    allowed_quant_bits: tuple[int, ...]
    pf_range: tuple[int, int]
    kernel_size: int = 1
    expansion_ratio: float = 1.0

    def __post_init__(self) -> None:
        if self.kind in (OpKind.DWCONV, OpKind.MBCONV):
            if self.kernel_size not in (1, 3, 5, 7):
                raise SpaceError(
                    f"kernel_size must be one of 1,3,5,7, got {self.kernel_size}"
                )
        if self.expansion_ratio <= 0:
            raise SpaceError(f"expansion_ratio must be > 0, got {self.expansion_ratio}")
        qb = tuple(self.allowed_quant_bits)
        if not qb or list(qb) != sorted(set(qb)):
            raise SpaceError("allowed_quant_bits must be nonempty and strictly increasing")
        if any(b <= 0 or 16 % b != 0 for b in qb):
            raise SpaceError(
                f"quant bitwidths must divide the 16-bit lane width, got {qb}"
            )
        lo, hi = self.pf_range
        if lo < 0 or hi < lo:
            raise SpaceError(f"pf_range must satisfy 0 <= pf_min <= pf_max, got {self.pf_range}")


def identity_like(template: OpCandidate) -> OpCandidate:
    """The identity candidate, inheriting the template's knob domains."""
    return OpCandidate(
        kind=OpKind.IDENTITY,
        allowed_quant_bits=template.allowed_quant_bits,
        pf_range=template.pf_range,
    )


@dataclass(frozen=True)
class Bundle:
    """A reusable sequence of layers plus its hardware-capability flags."""

    id: str
    ops: tuple[OpCandidate, ...]
    downsample_capable: bool = True

    def __post_init__(self) -> None:
        if not self.ops:
            raise SpaceError(f"bundle {self.id!r}: ops must be nonempty")
        n_pool = sum(1 for op in self.ops if op.kind is OpKind.POOL2X2)
        if n_pool > 1:
            raise SpaceError(f"bundle {self.id!r}: at most one downsampling op allowed")


@dataclass(frozen=True)
class SearchSpace:
    """The joint space: bundles, slot knobs, and the network's input contract.

    ``n_slots`` is the maximum replication depth; each slot hosts one of
    ``num_candidates`` operations (the bundle's ops, plus identity when
    ``add_identity`` is set, which doubles as the depth knob). Every
    candidate exposes exactly ``num_quant`` bitwidth choices so the knob
    domains are rectangular.
    """

    bundles: tuple[Bundle, ...]
    n_slots: int
    channel_choices: tuple[tuple[int, ...], ...]
    pool_positions: frozenset[int]
    input_shape: tuple[int, int, int]
    num_classes: int
    add_identity: bool = True
    num_candidates: int = field(init=False)
    num_quant: int = field(init=False)

    def __post_init__(self) -> None:
        if self.n_slots < 1:
            raise SpaceError("n_slots must be >= 1")
        if not self.bundles:
            raise SpaceError("at least one bundle required")
        if len({b.id for b in self.bundles}) != len(self.bundles):
            raise SpaceError("bundle ids must be unique")
        if len(self.channel_choices) != self.n_slots:
            raise SpaceError(
                f"channel_choices must list all {self.n_slots} slots, got {len(self.channel_choices)}"
            )
        for i, choices in enumerate(self.channel_choices):
            if not choices or any(c < 1 for c in choices):
                raise SpaceError(f"channel_choices[{i}] must be nonempty positive integers")
        bad = [p for p in self.pool_positions if not 0 <= p < self.n_slots]
        if bad:
            raise SpaceError(f"pool_positions outside 0..{self.n_slots - 1}: {sorted(bad)}")
        h, w, c = self.input_shape
        if min(h, w, c) < 1:
            raise SpaceError(f"input_shape dimensions must be >= 1, got {self.input_shape}")
        if self.num_classes < 1:
            raise SpaceError("num_classes must be >= 1")
        sizes = {len(b.ops) + (1 if self.add_identity else 0) for b in self.bundles}
        if len(sizes) != 1:
            raise SpaceError(f"all bundles must expose the same candidate count, got {sorted(sizes)}")
        object.__setattr__(self, "num_candidates", sizes.pop())
        quants = {len(op.allowed_quant_bits) for b in self.bundles for op in b.ops}
        if len(quants) != 1:
            raise SpaceError(f"all ops must expose the same quantization count, got {sorted(quants)}")
        object.__setattr__(self, "num_quant", quants.pop())

    def bundle(self, bundle_id: str) -> Bundle:
        for b in self.bundles:
            if b.id == bundle_id:
                return b
        raise SpaceError(f"unknown bundle id {bundle_id!r}")

    def menu(self, bundle_id: str) -> tuple[OpCandidate, ...]:
        """Per-slot candidate list for a bundle: its ops, plus identity."""
        b = self.bundle(bundle_id)
        if self.add_identity:
            return b.ops + (identity_like(b.ops[0]),)
        return b.ops


@dataclass(frozen=True)
class DesignPoint:
    """One concrete (architecture, implementation) pair.

    Per-slot arrays have length ``n`` (the active replication count);
    ``pools`` holds the slot indices after which the feature map is halved.
    """

    bundle_id: str
    n: int
    op_choice: tuple[int, ...]
    channels: tuple[int, ...]
    pools: frozenset[int]
    quant_bits: tuple[int, ...]
    pf: tuple[int, ...]

    def to_json_dict(self) -> dict:
        return {
            "bundle_id": self.bundle_id,
            "n": self.n,
            "op_choice": list(self.op_choice),
            "channels": list(self.channels),
            "pools": sorted(self.pools),
            "quant_bits": list(self.quant_bits),
            "pf": list(self.pf),
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "DesignPoint":
        return cls(
            bundle_id=d["bundle_id"],
            n=int(d["n"]),
            op_choice=tuple(int(x) for x in d["op_choice"]),
            channels=tuple(int(x) for x in d["channels"]),
            pools=frozenset(int(x) for x in d["pools"]),
            quant_bits=tuple(int(x) for x in d["quant_bits"]),
            pf=tuple(int(x) for x in d["pf"]),
        )


@dataclass(frozen=True)
class Verdict:
    ok: bool
    reason: str | None = None

    def __bool__(self) -> bool:
        return self.ok


VALID = Verdict(True)


def validate(space: SearchSpace, point: DesignPoint) -> Verdict:
    """Check every point invariant; report the first violation by name."""
    try:
        bundle = space.bundle(point.bundle_id)
    except SpaceError:
        return Verdict(False, f"bundle_id={point.bundle_id!r} not in space")
    if not 1 <= point.n <= space.n_slots:
        return Verdict(False, f"n={point.n} outside [1, {space.n_slots}]")
    for name, arr in (
        ("op_choice", point.op_choice),
        ("channels", point.channels),
        ("quant_bits", point.quant_bits),
        ("pf", point.pf),
    ):
        if len(arr) != point.n:
            return Verdict(False, f"{name} has length {len(arr)}, expected n={point.n}")
    menu = space.menu(point.bundle_id)
    for i, m in enumerate(point.op_choice):
        if not 0 <= m < space.num_candidates:
            return Verdict(False, f"op_choice[{i}]={m} outside [0, {space.num_candidates})")
    for i, c in enumerate(point.channels):
        if c not in space.channel_choices[i]:
            return Verdict(
                False,
                f"channels[{i}]={c} not in channel_choices[{i}]={list(space.channel_choices[i])}",
            )
    extra = point.pools - space.pool_positions
    if extra:
        return Verdict(False, f"pools {sorted(extra)} not in allowed pool_positions")
    late = {p for p in point.pools if p >= point.n}
    if late:
        return Verdict(False, f"pools {sorted(late)} at or beyond last slot {point.n - 1}")
    if point.pools and not bundle.downsample_capable:
        return Verdict(False, f"bundle {bundle.id!r} is not downsample capable but pools set")
    for i, q in enumerate(point.quant_bits):
        op = menu[point.op_choice[i]]
        if q not in op.allowed_quant_bits:
            return Verdict(
                False, f"quant_bits[{i}]={q} not in {list(op.allowed_quant_bits)}"
            )
    for i, pf in enumerate(point.pf):
        lo, hi = menu[point.op_choice[i]].pf_range
        if not lo <= pf <= hi:
            return Verdict(False, f"pf[{i}]={pf} outside [{lo}, {hi}]")
    try:
        shapes(space, point)
    except ShapeCollapseError as exc:
        return Verdict(False, str(exc))
    return VALID


def shapes(space: SearchSpace, point: DesignPoint) -> list[tuple[int, int, int, int]]:
    """Per-slot (H, W, C_in, C_out), propagating pools as floor halvings."""
    h, w, c = space.input_shape
    out = []
    for i in range(point.n):
        c_out = point.channels[i]
        out.append((h, w, c, c_out))
        c = c_out
        if i in point.pools:
            h, w = h // 2, w // 2
            if h < 1 or w < 1:
                raise ShapeCollapseError(
                    f"pool after slot {i} collapses the feature map to {h}x{w}"
                )
    return out


def _feasible_pools(space: SearchSpace, n: int, wanted: Sequence[int]) -> frozenset[int]:
    """Greedily keep wanted pool positions (ascending) while dims stay >= 1."""
    h, w, _ = space.input_shape
    kept = set()
    for p in sorted(wanted):
        if p >= n:
            continue
        if h // 2 >= 1 and w // 2 >= 1:
            kept.add(p)
            h, w = h // 2, w // 2
    return frozenset(kept)


def sample_uniform(
    space: SearchSpace,
    seed: int,
    *,
    bundle_id: str | None = None,
    n: int | None = None,
) -> DesignPoint:
    """Uniform independent choice per knob; identical seed, identical point.

    Pool positions are sampled independently with probability 1/2 and then
    repaired (ascending) so the result always passes :func:`validate`.
    """
    rng = make_rng(seed, "sample-uniform")
    if bundle_id is None:
        bundle_id = space.bundles[int(rng.integers(0, len(space.bundles)))].id
    bundle = space.bundle(bundle_id)
    menu = space.menu(bundle_id)
    if n is None:
        n = int(rng.integers(1, space.n_slots + 1))
    op_choice = tuple(int(rng.integers(0, len(menu))) for _ in range(n))
    channels = tuple(
        int(space.channel_choices[i][int(rng.integers(0, len(space.channel_choices[i])))])
        for i in range(n)
    )
    wanted = [p for p in sorted(space.pool_positions) if rng.random() < 0.5]
    pools = (
        _feasible_pools(space, n, wanted) if bundle.downsample_capable else frozenset()
    )
    quant_bits = []
    pf = []
    for i in range(n):
        op = menu[op_choice[i]]
        quant_bits.append(int(op.allowed_quant_bits[int(rng.integers(0, len(op.allowed_quant_bits)))]))
        lo, hi = op.pf_range
        pf.append(int(rng.integers(lo, hi + 1)))
    return DesignPoint(
        bundle_id=bundle_id,
        n=n,
        op_choice=op_choice,
        channels=channels,
        pools=pools,
        quant_bits=tuple(quant_bits),
        pf=tuple(pf),
    )


def template_point(
    space: SearchSpace,
    bundle_id: str,
    *,
    n: int | None = None,
    channels: tuple[int, ...] | None = None,
    pools: frozenset[int] = frozenset(),
) -> DesignPoint:
    """Canonical point for a bundle: its layer sequence tiled across slots,
    widest quantization, minimum parallel factor."""
    bundle = space.bundle(bundle_id)
    menu = space.menu(bundle_id)
    n = space.n_slots if n is None else n
    op_choice = tuple(i % len(bundle.ops) for i in range(n))
    if channels is None:
        channels = tuple(space.channel_choices[i][0] for i in range(n))
    quant_bits = tuple(menu[m].allowed_quant_bits[-1] for m in op_choice)
    pf = tuple(menu[m].pf_range[0] for m in op_choice)
    return DesignPoint(
        bundle_id=bundle_id,
        n=n,
        op_choice=op_choice,
        channels=channels,
        pools=pools,
        quant_bits=quant_bits,
        pf=pf,
    )


def enumerate_points(
    space: SearchSpace,
    *,
    bundle_id: str | None = None,
    fixed_n: int | None = None,
    fixed_channels: tuple[int, ...] | None = None,
    fixed_pools: frozenset[int] | None = None,
    limit: int = 1_000_000,
) -> Iterator[DesignPoint]:
    """Exhaustively enumerate valid points of a small space.

    Optional ``fixed_*`` arguments pin macro knobs (used when only the
    per-slot knobs vary). Raises if the enumeration would exceed ``limit``.
    """
    bundle_ids = [bundle_id] if bundle_id else [b.id for b in space.bundles]
    count = 0
    for bid in bundle_ids:
        bundle = space.bundle(bid)
        menu = space.menu(bid)
        ns = [fixed_n] if fixed_n is not None else list(range(1, space.n_slots + 1))
        for n in ns:
            if fixed_pools is not None:
                pool_sets = [fixed_pools]
            elif bundle.downsample_capable:
                avail = [p for p in sorted(space.pool_positions) if p < n]
                pool_sets = [
                    frozenset(c)
                    for r in range(len(avail) + 1)
                    for c in itertools.combinations(avail, r)
                ]
            else:
                pool_sets = [frozenset()]
            ch_lists = (
                [fixed_channels]
                if fixed_channels is not None
                else itertools.product(*(space.channel_choices[i] for i in range(n)))
            )
            for channels in ch_lists:
                for ops in itertools.product(range(len(menu)), repeat=n):
                    quant_domains = [menu[m].allowed_quant_bits for m in ops]
                    pf_domains = [range(menu[m].pf_range[0], menu[m].pf_range[1] + 1) for m in ops]
                    for quant in itertools.product(*quant_domains):
                        for pf in itertools.product(*pf_domains):
                            for pools in pool_sets:
                                point = DesignPoint(
                                    bundle_id=bid,
                                    n=n,
                                    op_choice=tuple(ops),
                                    channels=tuple(channels),
                                    pools=pools,
                                    quant_bits=tuple(quant),
                                    pf=tuple(pf),
                                )
                                if validate(space, point):
                                    count += 1
                                    if count > limit:
                                        raise SpaceError(
                                            f"enumeration exceeds limit={limit}"
                                        )
                                    yield point
