import pytest

from cosearch.perf import AccelMode, PlatformModel
from cosearch.space import Bundle, OpCandidate, OpKind, SearchSpace


def make_platform(**overrides) -> PlatformModel:
    kw = dict(
        clock_mhz=100.0,
        dsp_budget=256,
        bram_budget_kbit=4096,
        lut_budget=100_000,
        bw_bytes_per_cycle=64.0,
        dsp_per_lane={16: 1.0, 8: 0.5, 4: 0.25, 2: 0.125, 1: 0.0625},
        lut_per_lane=8.0,
        overhead_cycles_per_op=0,
        accel_mode=AccelMode.RECURSIVE,
    )
    kw.update(overrides)
    return PlatformModel(**kw)


def make_toy_space(**overrides) -> SearchSpace:
    """3-slot space small enough to enumerate: conv1x1 + identity per slot,
    two channel choices, one optional pool, two bitwidths, pf in {0, 1}."""
    conv = OpCandidate(kind=OpKind.CONV1X1, allowed_quant_bits=(4, 8), pf_range=(0, 1))
    kw = dict(
        bundles=(Bundle(id="b0", ops=(conv,)),),
        n_slots=3,
        channel_choices=((4, 8), (4, 8), (4, 8)),
        pool_positions=frozenset({1}),
        input_shape=(8, 8, 4),
        num_classes=3,
    )
    kw.update(overrides)
    return SearchSpace(**kw)


def rich_ops() -> dict[str, OpCandidate]:
    """One candidate of every kind, sharing quant/pf domains."""
    bits = (4, 8, 16)
    pf = (0, 6)
    return {
        "conv": OpCandidate(kind=OpKind.CONV1X1, allowed_quant_bits=bits, pf_range=pf),
        "dw": OpCandidate(kind=OpKind.DWCONV, allowed_quant_bits=bits, pf_range=pf, kernel_size=3),
        "mb": OpCandidate(
            kind=OpKind.MBCONV, allowed_quant_bits=bits, pf_range=pf, kernel_size=3, expansion_ratio=1.0
        ),
        "pool": OpCandidate(kind=OpKind.POOL2X2, allowed_quant_bits=bits, pf_range=pf),
        "identity": OpCandidate(kind=OpKind.IDENTITY, allowed_quant_bits=bits, pf_range=pf),
    }


def make_rich_space(**overrides) -> SearchSpace:
    """Space whose bundle exercises every op kind (conv, dw, mbconv, pool)."""
    ops = rich_ops()
    bundle = Bundle(id="rich", ops=(ops["conv"], ops["dw"], ops["mb"], ops["pool"]))
    kw = dict(
        bundles=(bundle,),
        n_slots=4,
        channel_choices=((8, 16), (8, 16), (8, 16), (8, 16)),
        pool_positions=frozenset({0, 2}),
        input_shape=(16, 16, 8),
        num_classes=3,
    )
    kw.update(overrides)
    return SearchSpace(**kw)


@pytest.fixture
def toy_space() -> SearchSpace:
    return make_toy_space()


@pytest.fixture
def rich_space() -> SearchSpace:
    return make_rich_space()


@pytest.fixture
def platform() -> PlatformModel:
    return make_platform()


def central_diff(f, x: float, h: float = 1e-5) -> float:
    return (f(x + h) - f(x - h)) / (2 * h)


def rel_err(a: float, b: float, floor: float = 1e-8) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def grad_close(a: float, b: float, rel: float = 1e-4, atol: float = 1e-6) -> bool:
    """Relative agreement, with an absolute floor for vanishing gradients
    (finite-difference noise dominates once the true gradient is ~0)."""
    return abs(a - b) <= atol or rel_err(a, b) <= rel
