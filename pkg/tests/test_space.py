import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cosearch.space import (
    Bundle,
    DesignPoint,
    OpCandidate,
    OpKind,
    SearchSpace,
    ShapeCollapseError,
    SpaceError,
    enumerate_points,
    round_half_up,
    sample_uniform,
    shapes,
    template_point,
    validate,
)

from conftest import make_rich_space, make_toy_space


def valid_point(space, **overrides):
    kw = dict(
        bundle_id="b0",
        n=3,
        op_choice=(0, 0, 0),
        channels=(4, 8, 4),
        pools=frozenset({1}),
        quant_bits=(8, 4, 8),
        pf=(0, 1, 0),
    )
    kw.update(overrides)
    return DesignPoint(**kw)


class TestCandidateInvariants:
    def test_kernel_size_domain(self):
        with pytest.raises(SpaceError):
            OpCandidate(kind=OpKind.DWCONV, allowed_quant_bits=(8,), pf_range=(0, 1), kernel_size=2)

    def test_quant_bits_must_increase(self):
        with pytest.raises(SpaceError):
            OpCandidate(kind=OpKind.CONV1X1, allowed_quant_bits=(8, 8), pf_range=(0, 1))
        with pytest.raises(SpaceError):
            OpCandidate(kind=OpKind.CONV1X1, allowed_quant_bits=(16, 8), pf_range=(0, 1))

    def test_quant_bits_divide_lane(self):
        with pytest.raises(SpaceError):
            OpCandidate(kind=OpKind.CONV1X1, allowed_quant_bits=(5,), pf_range=(0, 1))

    def test_pf_range(self):
        with pytest.raises(SpaceError):
            OpCandidate(kind=OpKind.CONV1X1, allowed_quant_bits=(8,), pf_range=(-1, 2))
        with pytest.raises(SpaceError):
            OpCandidate(kind=OpKind.CONV1X1, allowed_quant_bits=(8,), pf_range=(3, 2))

    def test_bundle_needs_ops(self):
        with pytest.raises(SpaceError):
            Bundle(id="empty", ops=())

    def test_bundle_one_pool_max(self):
        pool = OpCandidate(kind=OpKind.POOL2X2, allowed_quant_bits=(8,), pf_range=(0, 0))
        with pytest.raises(SpaceError):
            Bundle(id="pp", ops=(pool, pool))


class TestValidate:
    def test_channels_out_of_domain(self, toy_space):
        point = valid_point(toy_space, channels=(4, 8, 5))
        verdict = validate(toy_space, point)
        assert not verdict
        assert verdict.reason.startswith("channels[2]")

    def test_default_template_is_valid(self, toy_space):
        assert validate(toy_space, template_point(toy_space, "b0"))

    def test_quant_out_of_domain(self, toy_space):
        verdict = validate(toy_space, valid_point(toy_space, quant_bits=(8, 4, 16)))
        assert not verdict and "quant_bits[2]" in verdict.reason

    def test_pf_out_of_range(self, toy_space):
        verdict = validate(toy_space, valid_point(toy_space, pf=(0, 2, 0)))
        assert not verdict and "pf[1]" in verdict.reason

    def test_pool_beyond_depth(self, toy_space):
        verdict = validate(
            toy_space, valid_point(toy_space, n=1, op_choice=(0,), channels=(4,),
                                   quant_bits=(8,), pf=(0,), pools=frozenset({1}))
        )
        assert not verdict and "pools" in verdict.reason

    def test_pool_needs_capable_bundle(self):
        space = make_toy_space(
            bundles=(
                Bundle(
                    id="b0",
                    ops=(OpCandidate(kind=OpKind.CONV1X1, allowed_quant_bits=(4, 8), pf_range=(0, 1)),),
                    downsample_capable=False,
                ),
            )
        )
        verdict = validate(space, valid_point(space))
        assert not verdict and "downsample" in verdict.reason


class TestShapes:
    def test_no_pools_keeps_resolution(self):
        space = make_toy_space(input_shape=(32, 32, 3), channel_choices=((16,), (16,), (16,)))
        point = valid_point(space, channels=(16, 16, 16), pools=frozenset())
        assert shapes(space, point) == [(32, 32, 3, 16), (32, 32, 16, 16), (32, 32, 16, 16)]

    def test_two_halvings(self):
        space = make_toy_space(
            input_shape=(32, 32, 3),
            channel_choices=((16,), (16,), (16,)),
            pool_positions=frozenset({0, 1}),
        )
        point = valid_point(space, channels=(16, 16, 16), pools=frozenset({0, 1}))
        result = shapes(space, point)
        assert result[2][:2] == (8, 8)

    def test_floor_semantics(self):
        space = make_toy_space(
            input_shape=(5, 5, 3), channel_choices=((16,), (16,), (16,)), pool_positions=frozenset({0})
        )
        point = valid_point(space, n=2, op_choice=(0, 0), channels=(16, 16),
                            quant_bits=(8, 8), pf=(0, 0), pools=frozenset({0}))
        assert shapes(space, point)[1][:2] == (2, 2)

    def test_collapse_names_slot(self):
        space = make_toy_space(
            input_shape=(1, 1, 3), channel_choices=((16,), (16,), (16,)), pool_positions=frozenset({0})
        )
        point = valid_point(space, n=2, op_choice=(0, 0), channels=(16, 16),
                            quant_bits=(8, 8), pf=(0, 0), pools=frozenset({0}))
        with pytest.raises(ShapeCollapseError, match="slot 0"):
            shapes(space, point)

    def test_monotone_in_pools(self, toy_space):
        base = valid_point(toy_space, pools=frozenset())
        pooled = valid_point(toy_space, pools=frozenset({1}))
        for (h0, w0, *_), (h1, w1, *_) in zip(shapes(toy_space, base), shapes(toy_space, pooled)):
            assert h1 <= h0 and w1 <= w0

    def test_substitutability(self, toy_space):
        a = valid_point(toy_space, op_choice=(0, 0, 0))
        b = valid_point(toy_space, op_choice=(1, 1, 1))
        assert shapes(toy_space, a) == shapes(toy_space, b)


class TestSampleUniform:
    def test_deterministic(self, toy_space):
        assert sample_uniform(toy_space, 99) == sample_uniform(toy_space, 99)

    @settings(max_examples=200, deadline=None)
    @given(seed=st.integers(min_value=0, max_value=2**63 - 1))
    def test_round_trip_validates(self, seed):
        space = make_rich_space()
        assert validate(space, sample_uniform(space, seed))

    def test_seed_collision_rate(self, toy_space):
        pairs = [(2 * i, 2 * i + 1) for i in range(1000)]
        collisions = sum(
            sample_uniform(toy_space, a) == sample_uniform(toy_space, b) for a, b in pairs
        )
        assert collisions / len(pairs) < 0.01

    def test_degenerate_space_unique_point(self):
        conv = OpCandidate(kind=OpKind.CONV1X1, allowed_quant_bits=(8,), pf_range=(0, 0))
        space = SearchSpace(
            bundles=(Bundle(id="only", ops=(conv,)),),
            n_slots=1,
            channel_choices=((4,),),
            pool_positions=frozenset(),
            input_shape=(8, 8, 4),
            num_classes=2,
            add_identity=False,
        )
        points = {sample_uniform(space, s) for s in range(50)}
        assert len(points) == 1


class TestEnumeration:
    def test_toy_space_size(self, toy_space):
        # per slot: 2 ops * 2 channels * 2 bits * 2 pf = 16
        # n=1: 16; n=2: 16^2 * 2 pools; n=3: 16^3 * 2 pools
        points = list(enumerate_points(toy_space))
        assert len(points) == 16 + 512 + 8192
        assert len(set(points)) == len(points)

    def test_limit_enforced(self, toy_space):
        with pytest.raises(SpaceError, match="limit"):
            list(enumerate_points(toy_space, limit=10))

    def test_fixed_skeleton(self, toy_space):
        points = list(
            enumerate_points(toy_space, fixed_n=3, fixed_channels=(8, 8, 8), fixed_pools=frozenset())
        )
        assert len(points) == 8**3
        assert all(p.channels == (8, 8, 8) and not p.pools for p in points)


def test_round_half_up():
    assert round_half_up(3.5) == 4
    assert round_half_up(2.5) == 3
    assert round_half_up(2.49) == 2
    assert round_half_up(-0.5) == 0


def test_json_round_trip(toy_space):
    point = sample_uniform(toy_space, 5)
    assert DesignPoint.from_json_dict(point.to_json_dict()) == point
