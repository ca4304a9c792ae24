import json
import math

import numpy as np
import pytest

from cosearch import edd, perf
from cosearch.accuracy import SurrogateEvaluator, SurrogateParams
from cosearch.autodiff import GumbelConfig, Tape, grad
from cosearch.edd import (
    EddConfig,
    PerfMode,
    RelaxedState,
    build_relaxed_loss,
    derive_discrete,
    discrete_objective,
    edd_search,
    init_state,
    resolve_skeleton,
)
from cosearch.rng import child_seed, make_rng
from cosearch.space import (
    Bundle,
    DesignPoint,
    OpCandidate,
    OpKind,
    SearchSpace,
    enumerate_points,
    validate,
)

from conftest import grad_close, make_platform, make_toy_space

SKELETON_CHANNELS = (8, 8, 8)


def toy_cfg(**overrides):
    kw = dict(
        epochs=5,
        seed=0,
        skeleton_channels=SKELETON_CHANNELS,
        gumbel=GumbelConfig(seed=17),
    )
    kw.update(overrides)
    return EddConfig(**kw)


def build_parts(space, platform, cfg, state=None, tau=1.0, rng_seed=0):
    skeleton = resolve_skeleton(space, cfg)
    if state is None:
        state = init_state(space, skeleton)
    tape = Tape()
    rng = make_rng(rng_seed, "frozen-gumbel")
    parts = build_relaxed_loss(
        state, space, platform, SurrogateParams(), cfg, tape, rng, tau
    )
    return tape, state, parts


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            EddConfig(epochs=0, seed=0)
        with pytest.raises(ValueError):
            EddConfig(epochs=1, seed=0, beta=-1.0)
        with pytest.raises(ValueError):
            EddConfig(epochs=1, seed=0, penalty_base=1.0)
        with pytest.raises(ValueError):
            EddConfig(epochs=1, seed=0, res_ub=(1.0, 0.0, 1.0))


class TestBuildRelaxedLoss:
    def test_beta_zero_reduces_to_product(self, toy_space, platform):
        cfg = toy_cfg(beta=0.0)
        _, _, parts = build_parts(toy_space, platform, cfg)
        assert parts.penalty.value == 0.0
        assert parts.loss.value == parts.acc_loss.value * parts.perf_loss.value

    def test_single_choice_space_closed_form(self):
        # one bundle, one op, one bitwidth, fixed pf: no sampling freedom
        conv = OpCandidate(kind=OpKind.CONV1X1, allowed_quant_bits=(8,), pf_range=(2, 2))
        space = SearchSpace(
            bundles=(Bundle(id="only", ops=(conv,)),),
            n_slots=1,
            channel_choices=((8,),),
            pool_positions=frozenset(),
            input_shape=(8, 8, 4),
            num_classes=2,
            add_identity=False,
        )
        platform = make_platform()
        cfg = EddConfig(epochs=1, seed=0, skeleton_channels=(8,), beta=0.5, penalty_base=2.0)
        _, _, parts = build_parts(space, platform, cfg)

        params = SurrogateParams()
        shape = (8, 8, 4, 8)
        smooth = perf.op_cycles_smooth(conv, shape, 8, 2.0, platform)
        perf_ms = smooth / (platform.clock_mhz * 1e3)
        lpc = math.log1p(perf.weight_count(conv, shape))
        acc = params.floor + math.exp(
            -params.capacity_weight * lpc - params.depth_weight * 1.0 + params.penalty(8)
        )
        dsp, bram, lut = perf.op_resources(conv, shape, 8, 2.0, platform)
        k = cfg.penalty_sharpness
        overshoot = sum(
            math.log1p(math.exp(k * (used - ub) / ub)) / k
            for used, ub in zip((dsp, bram, lut), platform.budgets())
        )
        expected = acc * perf_ms + cfg.beta * cfg.penalty_base**overshoot
        assert parts.loss.value == pytest.approx(expected, rel=1e-12)

    def test_penalty_at_exact_bound(self, toy_space):
        # resources expected == res_ub: smooth penalty within the softplus band
        platform = make_platform()
        cfg0 = toy_cfg()
        tape, state, parts0 = build_parts(toy_space, platform, cfg0)
        # probe expected resources by re-running with huge res_ub and beta=0:
        # instead compute used resources via a fresh run where penalty is beta
        # at the bound by construction below
        point = derive_discrete(state, toy_space, resolve_skeleton(toy_space, cfg0))
        report = perf.evaluate(point, toy_space, platform)
        cfg = toy_cfg(res_ub=report.resources(), beta=2.0)
        parts = discrete_objective(point, toy_space, platform, SurrogateEvaluator(toy_space), cfg)
        assert parts["penalty"] == 2.0  # exactly beta at the bound

    def test_under_budget_plateau(self, toy_space):
        platform = make_platform()
        cfg = toy_cfg(beta=1.0)
        # budgets are huge vs the toy design: deep under budget
        _, _, parts = build_parts(toy_space, platform, cfg)
        assert cfg.beta <= parts.penalty.value <= cfg.beta * cfg.penalty_base**0.01

    def test_penalty_monotone_in_pf(self, toy_space):
        platform = make_platform()
        cfg = toy_cfg()
        skeleton = resolve_skeleton(toy_space, cfg)
        lo_state = init_state(toy_space, skeleton)
        lo_state.pf_cont[:, :] = 0.0
        hi_state = init_state(toy_space, skeleton)
        hi_state.pf_cont[:, :] = 1.0
        _, _, lo = build_parts(toy_space, platform, cfg, state=lo_state, rng_seed=5)
        _, _, hi = build_parts(toy_space, platform, cfg, state=hi_state, rng_seed=5)
        assert hi.penalty.value >= lo.penalty.value

    def test_gradients_match_finite_differences_frozen_noise(self, toy_space, platform):
        cfg = toy_cfg()
        skeleton = resolve_skeleton(toy_space, cfg)
        rng_entries = make_rng(99, "pick-entries")
        checked = 0
        for case in range(20):
            state = init_state(toy_space, skeleton)
            state.theta += rng_entries.normal(0, 0.5, state.theta.shape)
            state.phi += rng_entries.normal(0, 0.5, state.phi.shape)
            state.pf_cont = np.clip(
                state.pf_cont + rng_entries.normal(0, 0.3, state.pf_cont.shape), 0, 1
            )
            tape, _, parts = build_parts(toy_space, platform, cfg, state=state, rng_seed=case)
            names = list(tape._var_index)
            gs = grad(tape, parts.loss, names)
            for name in [names[int(rng_entries.integers(0, len(names)))] for _ in range(3)]:
                kind, idx = name.split(":", 1)
                indices = tuple(int(x) for x in idx.split(":"))

                def value_at(x):
                    probe = RelaxedState(state.theta.copy(), state.phi.copy(), state.pf_cont.copy())
                    getattr(probe, {"theta": "theta", "phi": "phi", "pf": "pf_cont"}[kind])[indices] = x
                    _, _, p = build_parts(toy_space, platform, cfg, state=probe, rng_seed=case)
                    return p.loss.value

                arr = getattr(state, {"theta": "theta", "phi": "phi", "pf": "pf_cont"}[kind])
                x0 = float(arr[indices])
                fd = (value_at(x0 + 1e-4) - value_at(x0 - 1e-4)) / 2e-4
                assert grad_close(gs[name], fd, rel=1e-3), (case, name, gs[name], fd)
                checked += 1
        assert checked == 60


class TestDeriveDiscrete:
    def test_one_hot_theta_selects_exactly(self, toy_space):
        cfg = toy_cfg()
        skeleton = resolve_skeleton(toy_space, cfg)
        state = init_state(toy_space, skeleton)
        state.theta[0, 1] = 5.0
        state.theta[1, 0] = 5.0
        state.theta[2, 1] = 5.0
        point = derive_discrete(state, toy_space, skeleton)
        assert point.op_choice == (1, 0, 1)

    def test_round_half_up_rule(self, toy_space):
        conv = OpCandidate(kind=OpKind.CONV1X1, allowed_quant_bits=(8,), pf_range=(0, 6))
        space = make_toy_space(
            bundles=(Bundle(id="b0", ops=(conv,)),), channel_choices=((8,), (8,), (8,)),
        )
        cfg = EddConfig(epochs=1, seed=0, skeleton_channels=(8, 8, 8))
        skeleton = resolve_skeleton(space, cfg)
        state = init_state(space, skeleton)
        state.pf_cont[:, :] = 3.5
        point = derive_discrete(state, space, skeleton)
        assert point.pf == (4, 4, 4)

    def test_argmax_invariance_to_row_shifts(self, toy_space):
        cfg = toy_cfg()
        skeleton = resolve_skeleton(toy_space, cfg)
        rng = make_rng(1, "shift")
        state = init_state(toy_space, skeleton)
        state.theta += rng.normal(0, 1, state.theta.shape)
        state.phi += rng.normal(0, 1, state.phi.shape)
        base = derive_discrete(state, toy_space, skeleton)
        shifted = RelaxedState(state.theta + 7.5, state.phi.copy(), state.pf_cont.copy())
        shifted.phi[1, 0, :] += -3.25
        assert derive_discrete(shifted, toy_space, skeleton) == base

    def test_random_states_always_validate(self, toy_space):
        cfg = toy_cfg()
        skeleton = resolve_skeleton(toy_space, cfg)
        for seed in range(200):
            rng = make_rng(seed, "state")
            state = init_state(toy_space, skeleton)
            state.theta += rng.normal(0, 2, state.theta.shape)
            state.phi += rng.normal(0, 2, state.phi.shape)
            state.pf_cont += rng.normal(0, 2, state.pf_cont.shape)
            point = derive_discrete(state, toy_space, skeleton)
            assert validate(toy_space, point)


class TestSearch:
    def test_zero_learning_rates_keep_state(self, toy_space, platform):
        cfg = toy_cfg(epochs=10, lr_theta=0.0, lr_phi=0.0, lr_pf=0.0)
        skeleton = resolve_skeleton(toy_space, cfg)
        initial = init_state(toy_space, skeleton)
        result = edd_search(toy_space, platform, SurrogateParams(), cfg)
        np.testing.assert_array_equal(result.state.theta, initial.theta)
        np.testing.assert_array_equal(result.state.phi, initial.phi)
        np.testing.assert_array_equal(result.state.pf_cont, initial.pf_cont)

    def test_identical_seed_identical_trace(self, toy_space, platform):
        cfg = toy_cfg(epochs=20, lr_theta=1.0, lr_phi=1.0, lr_pf=0.2)
        a = edd_search(toy_space, platform, SurrogateParams(), cfg)
        b = edd_search(toy_space, platform, SurrogateParams(), cfg)
        assert json.dumps(a.records) == json.dumps(b.records)
        assert a.best_point == b.best_point

    def test_trace_fields(self, toy_space, platform):
        cfg = toy_cfg(epochs=3)
        result = edd_search(toy_space, platform, SurrogateParams(), cfg)
        assert len(result.records) == 3
        for r in result.records:
            assert set(r) == {"epoch", "loss", "acc_loss", "perf_loss", "penalty", "tau"}

    def test_pf_stays_clamped(self, toy_space, platform):
        cfg = toy_cfg(epochs=30, lr_pf=5.0)
        result = edd_search(toy_space, platform, SurrogateParams(), cfg)
        assert (result.state.pf_cont >= 0).all() and (result.state.pf_cont <= 1).all()

    def test_throughput_mode_runs(self, toy_space, platform):
        cfg = toy_cfg(perf_mode=PerfMode.THROUGHPUT_MAX, epochs=5)
        result = edd_search(toy_space, platform, SurrogateParams(), cfg)
        assert validate(toy_space, result.best_point)
