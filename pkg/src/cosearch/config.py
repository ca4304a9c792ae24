"""Run configuration: schema, ingestion, and cross-validation.

A run is described by one TOML or JSON file (see configs/ for a commented
example) holding the search space, the platform, the objective, the
evaluator, and exactly one strategy section. The single ``seed`` is the only
entropy source; all streams derive from it (see rng.py).
"""

from __future__ import annotations

import dataclasses
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .accuracy import ProxyDataset, ProxyEvaluator, SurrogateEvaluator, SurrogateParams
from .autodiff import GumbelConfig
from .edd import EddConfig, PerfMode
from .perf import AccelMode, PlatformModel
from .pso import PsoConfig
from .rng import child_seed
from .scd import ScdConfig
from .space import Bundle, OpCandidate, OpKind, SearchSpace

SCHEMA_VERSION = 1
STRATEGIES = ("scd", "pso", "edd")


class ConfigError(ValueError):
    """Config file is malformed; the message names the offending field."""


def _get(table: dict, key: str, kind, path: str, default=...):
    if key not in table:
        if default is not ...:
            return default
        raise ConfigError(f"{path}.{key}: missing required key")
    value = table[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if kind is not None and not isinstance(value, kind):
        raise ConfigError(
            f"{path}.{key}: expected {getattr(kind, '__name__', kind)}, got {type(value).__name__}"
        )
    return value


def _int_keyed(table: dict, path: str) -> dict[int, float]:
    out = {}
    for key, value in table.items():
        try:
            out[int(key)] = float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{path}.{key}: keys must be bitwidths, values numbers") from None
    return out


def _parse_op(d: dict, path: str) -> OpCandidate:
    kind_name = _get(d, "kind", str, path)
    try:
        kind = OpKind(kind_name)
    except ValueError:
        raise ConfigError(
            f"{path}.kind: unknown kind {kind_name!r}; one of {[k.value for k in OpKind]}"
        ) from None
    return OpCandidate(
        kind=kind,
        allowed_quant_bits=tuple(_get(d, "allowed_quant_bits", list, path)),
        pf_range=tuple(_get(d, "pf_range", list, path)),
        kernel_size=_get(d, "kernel_size", int, path, default=1),
        expansion_ratio=_get(d, "expansion_ratio", float, path, default=1.0),
    )


def parse_space(d: dict, path: str = "space") -> SearchSpace:
    bundles = []
    for bi, bd in enumerate(_get(d, "bundles", list, path)):
        bpath = f"{path}.bundles[{bi}]"
        ops = tuple(
            _parse_op(od, f"{bpath}.ops[{oi}]") for oi, od in enumerate(_get(bd, "ops", list, bpath))
        )
        bundles.append(
            Bundle(
                id=_get(bd, "id", str, bpath),
                ops=ops,
                downsample_capable=_get(bd, "downsample_capable", bool, bpath, default=True),
            )
        )
    return SearchSpace(
        bundles=tuple(bundles),
        n_slots=_get(d, "n_slots", int, path),
        channel_choices=tuple(tuple(c) for c in _get(d, "channel_choices", list, path)),
        pool_positions=frozenset(_get(d, "pool_positions", list, path, default=[])),
        input_shape=tuple(_get(d, "input_shape", list, path)),
        num_classes=_get(d, "num_classes", int, path),
        add_identity=_get(d, "add_identity", bool, path, default=True),
    )


def parse_platform(d: dict, path: str = "platform") -> PlatformModel:
    mode_name = _get(d, "accel_mode", str, path, default="recursive")
    try:
        mode = AccelMode(mode_name)
    except ValueError:
        raise ConfigError(f"{path}.accel_mode: unknown mode {mode_name!r}") from None
    return PlatformModel(
        clock_mhz=_get(d, "clock_mhz", float, path),
        dsp_budget=_get(d, "dsp_budget", int, path),
        bram_budget_kbit=_get(d, "bram_budget_kbit", int, path),
        lut_budget=_get(d, "lut_budget", int, path),
        bw_bytes_per_cycle=_get(d, "bw_bytes_per_cycle", float, path),
        dsp_per_lane=_int_keyed(_get(d, "dsp_per_lane", dict, path), f"{path}.dsp_per_lane"),
        lut_per_lane=_get(d, "lut_per_lane", float, path, default=8.0),
        overhead_cycles_per_op=_get(d, "overhead_cycles_per_op", int, path, default=0),
        accel_mode=mode,
        smooth_sharpness=_get(d, "smooth_sharpness", float, path, default=2.0),
        sim_buffer_kbit=_get(d, "sim_buffer_kbit", float, path, default=2048.0),
    )


@dataclass(frozen=True)
class ObjectiveConfig:
    beta: float
    penalty_base: float
    latency_target_ms: float
    perf_mode: PerfMode
    res_ub: tuple[float, float, float] | None  # None: platform budgets

    def resolved_res_ub(self, platform: PlatformModel) -> tuple[float, float, float]:
        return self.res_ub if self.res_ub is not None else platform.budgets()


def parse_objective(d: dict, path: str = "objective") -> ObjectiveConfig:
    mode_name = _get(d, "perf_mode", str, path, default="latency_sum")
    try:
        mode = PerfMode(mode_name)
    except ValueError:
        raise ConfigError(f"{path}.perf_mode: unknown mode {mode_name!r}") from None
    res_ub = None
    if "res_ub" in d:
        rd = _get(d, "res_ub", dict, path)
        res_ub = (
            _get(rd, "dsp", float, f"{path}.res_ub"),
            _get(rd, "bram_kbit", float, f"{path}.res_ub"),
            _get(rd, "lut", float, f"{path}.res_ub"),
        )
    return ObjectiveConfig(
        beta=_get(d, "beta", float, path, default=1.0),
        penalty_base=_get(d, "penalty_base", float, path, default=math.e),
        latency_target_ms=_get(d, "latency_target_ms", float, path),
        perf_mode=mode,
        res_ub=res_ub,
    )


@dataclass(frozen=True)
class EvaluatorConfig:
    type: str
    surrogate: SurrogateParams
    proxy_dataset: str | None = None
    proxy_epochs: int = 20
    proxy_width_scale: float = 1.0
    proxy_lr: float = 0.5
    proxy_val_fraction: float = 0.25


def parse_evaluator(d: dict, path: str = "evaluator") -> EvaluatorConfig:
    etype = _get(d, "type", str, path, default="surrogate")
    if etype not in ("surrogate", "proxy"):
        raise ConfigError(f"{path}.type: must be 'surrogate' or 'proxy', got {etype!r}")
    sp = d.get("surrogate", {})
    spath = f"{path}.surrogate"
    penalty = _int_keyed(sp.get("quant_penalty", {"16": 0.0, "8": 0.05, "4": 0.25}), f"{spath}.quant_penalty")
    surrogate = SurrogateParams(
        capacity_weight=_get(sp, "capacity_weight", float, spath, default=0.15),
        depth_weight=_get(sp, "depth_weight", float, spath, default=0.05),
        quant_penalty=penalty,
        floor=_get(sp, "floor", float, spath, default=0.05),
    )
    kwargs = {}
    if etype == "proxy":
        pd = _get(d, "proxy", dict, path)
        ppath = f"{path}.proxy"
        kwargs = dict(
            proxy_dataset=_get(pd, "dataset", str, ppath),
            proxy_epochs=_get(pd, "epochs", int, ppath, default=20),
            proxy_width_scale=_get(pd, "width_scale", float, ppath, default=1.0),
            proxy_lr=_get(pd, "lr", float, ppath, default=0.5),
            proxy_val_fraction=_get(pd, "val_fraction", float, ppath, default=0.25),
        )
    return EvaluatorConfig(type=etype, surrogate=surrogate, **kwargs)


@dataclass(frozen=True)
class RunConfig:
    path: Path
    raw_bytes: bytes
    schema_version: int
    seed: int
    out_dir: Path
    space: SearchSpace
    platform: PlatformModel
    objective: ObjectiveConfig
    evaluator: EvaluatorConfig
    strategy: str
    strategy_table: dict

    def scd_config(self) -> ScdConfig:
        d = self.strategy_table
        path = "strategy.scd"
        radius = {k: int(v) for k, v in d.get("proposal_radius", {}).items()}
        patience = _get(d, "patience", int, path, default=None)
        return ScdConfig(
            max_iters=_get(d, "max_iters", int, path),
            latency_target_ms=self.objective.latency_target_ms,
            seed=self.seed,
            coords=tuple(_get(d, "coords", list, path, default=list(ScdConfig.__dataclass_fields__["coords"].default))),
            proposal_radius=radius,
            restarts=_get(d, "restarts", int, path, default=1),
            patience=patience,
            init_attempts=_get(d, "init_attempts", int, path, default=1000),
        )

    def pso_config(self) -> PsoConfig:
        d = self.strategy_table
        path = "strategy.pso"
        return PsoConfig(
            latency_target_ms=self.objective.latency_target_ms,
            seed=self.seed,
            swarm_size=_get(d, "swarm_size", int, path, default=16),
            iters=_get(d, "iters", int, path, default=50),
            inertia=_get(d, "inertia", float, path, default=0.7),
            cognitive=_get(d, "cognitive", float, path, default=1.4),
            social=_get(d, "social", float, path, default=1.4),
            group_social=_get(d, "group_social", float, path, default=0.7),
            fitness_lambda=_get(d, "fitness_lambda", float, path, default=1.0),
            res_ub=self.objective.res_ub,
        )

    def edd_config(self) -> EddConfig:
        d = self.strategy_table
        path = "strategy.edd"
        gd = d.get("gumbel", {})
        gumbel = GumbelConfig(
            tau_start=_get(gd, "tau_start", float, f"{path}.gumbel", default=5.0),
            tau_end=_get(gd, "tau_end", float, f"{path}.gumbel", default=0.1),
            decay=_get(gd, "decay", float, f"{path}.gumbel", default=0.95),
            seed=child_seed(self.seed, "gumbel"),
        )
        channels = d.get("skeleton_channels")
        return EddConfig(
            epochs=_get(d, "epochs", int, path),
            seed=self.seed,
            lr_theta=_get(d, "lr_theta", float, path, default=0.2),
            lr_phi=_get(d, "lr_phi", float, path, default=0.2),
            lr_pf=_get(d, "lr_pf", float, path, default=0.05),
            beta=self.objective.beta,
            penalty_base=self.objective.penalty_base,
            res_ub=self.objective.res_ub,
            gumbel=gumbel,
            perf_mode=self.objective.perf_mode,
            bundle_id=_get(d, "bundle_id", str, path, default=None),
            skeleton_n=_get(d, "skeleton_n", int, path, default=None),
            skeleton_channels=tuple(channels) if channels is not None else None,
            skeleton_pools=frozenset(_get(d, "skeleton_pools", list, path, default=[])),
            penalty_sharpness=_get(d, "penalty_sharpness", float, path, default=25.0),
            grad_clip=_get(d, "grad_clip", float, path, default=100.0),
        )

    def build_evaluator(self):
        ev = self.evaluator
        if ev.type == "surrogate":
            return SurrogateEvaluator(self.space, ev.surrogate)
        dataset = ProxyDataset.from_csv(
            ev.proxy_dataset, seed=self.seed, val_fraction=ev.proxy_val_fraction
        )
        return ProxyEvaluator(
            self.space,
            dataset,
            epochs=ev.proxy_epochs,
            width_scale=ev.proxy_width_scale,
            lr=ev.proxy_lr,
        )


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    raw = path.read_bytes()
    try:
        if path.suffix == ".json":
            data = json.loads(raw)
        else:
            data = tomllib.loads(raw.decode())
    except (json.JSONDecodeError, tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"{path}: parse error: {exc}") from None

    version = _get(data, "schema_version", int, "config")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"config.schema_version: expected {SCHEMA_VERSION}, got {version}")
    if "seed" not in data:
        raise ConfigError("config.seed: missing required key (no implicit entropy)")
    seed = _get(data, "seed", int, "config")

    try:
        space = parse_space(_get(data, "space", dict, "config"))
        platform = parse_platform(_get(data, "platform", dict, "config"))
        objective = parse_objective(_get(data, "objective", dict, "config"))
        evaluator = parse_evaluator(_get(data, "evaluator", dict, "config", default={}))
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None

    strategy_section = _get(data, "strategy", dict, "config")
    present = [s for s in STRATEGIES if s in strategy_section]
    if len(present) != 1:
        raise ConfigError(
            f"config.strategy: exactly one of {STRATEGIES} required, found {present or 'none'}"
        )
    strategy = present[0]

    # cross checks
    for b in space.bundles:
        for op in b.ops:
            for q in op.allowed_quant_bits:
                if q not in platform.dsp_per_lane:
                    raise ConfigError(
                        f"platform.dsp_per_lane: missing entry for {q}-bit used by bundle {b.id!r}"
                    )
    if evaluator.type == "proxy":
        ds = Path(evaluator.proxy_dataset)
        if not ds.is_absolute():
            ds = path.parent / ds
        if not ds.exists():
            raise ConfigError(f"evaluator.proxy.dataset: file not found: {ds}")
        evaluator = dataclasses.replace(evaluator, proxy_dataset=str(ds))

    out_dir = Path(_get(data, "out_dir", str, "config", default="runs/out"))
    if not out_dir.is_absolute():
        out_dir = path.parent / out_dir

    cfg = RunConfig(
        path=path,
        raw_bytes=raw,
        schema_version=version,
        seed=seed,
        out_dir=out_dir,
        space=space,
        platform=platform,
        objective=objective,
        evaluator=evaluator,
        strategy=strategy,
        strategy_table=strategy_section[strategy],
    )
    # validate the strategy table eagerly so `validate` catches bad values
    try:
        getattr(cfg, f"{strategy}_config")()
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"strategy.{strategy}: {exc}") from None
    return cfg
