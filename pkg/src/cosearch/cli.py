"""Command-line surface.

Subcommands: validate, estimate, simulate, select-bundles, search, report,
gen-dataset. Exit codes: 0 success, 1 validation failure, 2 runtime error.
All file output lands under the configured output directory (or --out);
input files are never modified.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
from pathlib import Path

from . import edd as edd_mod
from . import oracle, pareto, perf, pso as pso_mod, scd as scd_mod, trace as trace_mod
from .accuracy import make_blob_dataset, write_dataset_csv
from .config import ConfigError, RunConfig, load_config
from .space import DesignPoint, validate as validate_point


def _load(args) -> RunConfig:
    cfg = load_config(args.config)
    if getattr(args, "seed_override", None) is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed_override)
    if getattr(args, "out", None):
        cfg = dataclasses.replace(cfg, out_dir=Path(args.out))
    return cfg


def _out_dir(cfg: RunConfig) -> Path:
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    return cfg.out_dir


def _read_point(path: str, cfg: RunConfig) -> DesignPoint:
    with open(path) as fh:
        point = DesignPoint.from_json_dict(json.load(fh))
    verdict = validate_point(cfg.space, point)
    if not verdict:
        raise ConfigError(f"{path}: invalid point: {verdict.reason}")
    return point


def cmd_validate(args) -> int:
    cfg = _load(args)
    print(f"ok: {cfg.path} (strategy={cfg.strategy}, seed={cfg.seed})")
    return 0


def cmd_estimate(args) -> int:
    cfg = _load(args)
    point = _read_point(args.point, cfg)
    report = perf.evaluate(point, cfg.space, cfg.platform)
    out = _out_dir(cfg) / "perf_report.json"
    with open(out, "w") as fh:
        json.dump(report.to_json_dict(), fh, indent=2)
        fh.write("\n")
    print(f"wrote {out}")
    return 0


def cmd_simulate(args) -> int:
    cfg = _load(args)
    point = _read_point(args.point, cfg)
    checks = oracle.crosscheck(point, cfg.space, cfg.platform, tolerance=args.tolerance)
    out_dir = _out_dir(cfg)
    with open(out_dir / "crosscheck.json", "w") as fh:
        json.dump([c.to_json_dict() for c in checks], fh, indent=2)
        fh.write("\n")

    menu = cfg.space.menu(point.bundle_id)
    from .space import shapes

    slot_shapes = shapes(cfg.space, point)
    with open(out_dir / "tile_trace.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["slot", "stage", "h0", "w0", "c0", "tile_h", "tile_w", "tile_c",
             "macs", "bytes", "compute_cycles", "io_cycles", "cost_cycles"]
        )
        for i in range(point.n):
            op = menu[point.op_choice[i]]
            q, pf = point.quant_bits[i], point.pf[i]
            schedule = oracle.default_schedule(op, slot_shapes[i], q, pf, cfg.platform)
            events: list = []
            oracle.simulate_op(op, slot_shapes[i], q, schedule, cfg.platform, trace=events)
            for ev in events:
                writer.writerow([i, *ev])
    flagged = [c for c in checks if not c.within_tol]
    print(f"wrote {out_dir / 'crosscheck.json'} and {out_dir / 'tile_trace.csv'}")
    if flagged:
        print(f"warning: {len(flagged)} op(s) above tolerance {args.tolerance}")
    return 0


def cmd_select_bundles(args) -> int:
    cfg = _load(args)
    evaluator = cfg.build_evaluator()
    scores, front = pareto.score_bundles(
        cfg.space, cfg.platform, evaluator, args.trials, cfg.seed
    )
    out = _out_dir(cfg) / "bundle_scores.csv"
    pareto.write_bundle_scores_csv(out, scores, front)
    print(f"wrote {out} ({len(front)}/{len(scores)} bundles on the front)")
    return 0


def cmd_search(args) -> int:
    cfg = _load(args)
    evaluator = cfg.build_evaluator()
    threads = args.threads if args.threads else (os.cpu_count() or 1)

    if cfg.strategy == "scd":
        result = scd_mod.scd_search(cfg.space, cfg.platform, evaluator, cfg.scd_config(), threads=threads)
        best, records = result.best_point, result.records
        objective = {"total": result.best_objective, "kind": "acc_loss"}
    elif cfg.strategy == "pso":
        result = pso_mod.pso_search(cfg.space, cfg.platform, evaluator, cfg.pso_config())
        best, records = result.best_point, result.records
        objective = {"total": result.best_fitness, "kind": "fitness"}
    else:
        ecfg = cfg.edd_config()
        result = edd_mod.edd_search(cfg.space, cfg.platform, cfg.evaluator.surrogate, ecfg)
        best, records = result.best_point, result.records
        parts = edd_mod.discrete_objective(best, cfg.space, cfg.platform, evaluator, ecfg)
        objective = {"total": parts["total"], "kind": "discrete_objective", **{
            k: v for k, v in parts.items() if k != "total"
        }}

    report = perf.evaluate(best, cfg.space, cfg.platform)
    out_dir = _out_dir(cfg)
    header = trace_mod.make_header(cfg.raw_bytes, cfg.seed, cfg.strategy)
    trace_mod.write_trace(out_dir / "trace.jsonl", header, records)
    summary = {
        "schema_version": cfg.schema_version,
        "config_hash": header["config_hash"],
        "seed": cfg.seed,
        "tool_version": trace_mod.TOOL_VERSION,
        "strategy": cfg.strategy,
        "best_point": best.to_json_dict(),
        "objective": objective,
        "perf": report.to_json_dict(),
    }
    if cfg.strategy == "edd":
        summary["relaxed_state"] = result.state.to_json_dict()
    trace_mod.write_summary(out_dir / "summary.json", summary)
    print(f"wrote {out_dir / 'trace.jsonl'} and {out_dir / 'summary.json'}")
    print(f"best objective ({objective['kind']}): {objective['total']}")
    return 0


def _curve_rows(strategy: str, records: list[dict]) -> list[tuple]:
    rows = []
    if strategy == "scd":
        best = None
        for r in records:
            if r.get("accepted") and r.get("objective") is not None:
                if best is None or r["objective"] < best:
                    best = r["objective"]
            if best is not None:
                rows.append((r["iter"], best))
    elif strategy == "pso":
        best = None
        by_iter: dict[int, float] = {}
        for r in records:
            best = r["fitness"] if best is None else max(best, r["fitness"])
            by_iter[r["iter"]] = best
        rows = sorted(by_iter.items())
    else:
        rows = [(r["epoch"], r["loss"]) for r in records if "loss" in r]
    return rows


def cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    produced = []
    trace_path = run_dir / "trace.jsonl"
    if trace_path.exists():
        header, records = trace_mod.read_trace(trace_path)
        rows = _curve_rows(header["strategy"], records)
        curve = run_dir / "curve.csv"
        with open(curve, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "best_objective"])
            for it, val in rows:
                writer.writerow([it, repr(val)])
        produced.append(curve)
    scores_path = run_dir / "bundle_scores.csv"
    if scores_path.exists():
        rows = pareto.read_bundle_scores_csv(scores_path)
        front_rows = sorted(
            (r for r in rows if r["on_front"]), key=lambda r: r["resource_scalar"]
        )
        out = run_dir / "pareto.csv"
        with open(out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["bundle_id", "resource_scalar", "accuracy"])
            for r in front_rows:
                writer.writerow([r["bundle_id"], repr(r["resource_scalar"]), repr(r["accuracy"])])
        produced.append(out)
    if not produced:
        raise ConfigError(f"{run_dir}: nothing to report (no trace.jsonl or bundle_scores.csv)")
    print("wrote " + ", ".join(str(p) for p in produced))
    return 0


def cmd_gen_dataset(args) -> int:
    dataset = make_blob_dataset(
        args.seed, rows=args.rows, dims=args.dims, classes=args.classes, spread=args.spread
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"blobs_seed{args.seed}.csv"
    write_dataset_csv(dataset, path)
    print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cosearch",
        description="joint architecture/accelerator-implementation search",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("config", help="TOML or JSON run config")
        p.add_argument("--out", help="override output directory")
        p.add_argument("--seed-override", type=int, default=None)
        p.add_argument("--threads", type=int, default=0, help="0 = all cores")

    p = sub.add_parser("validate", help="schema and invariant check")
    add_common(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("estimate", help="analytical performance report for a point")
    add_common(p)
    p.add_argument("point", help="DesignPoint JSON file")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("simulate", help="cycle-oracle run and crosscheck for a point")
    add_common(p)
    p.add_argument("point", help="DesignPoint JSON file")
    p.add_argument("--tolerance", type=float, default=0.05)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("select-bundles", help="score bundles and select the Pareto front")
    add_common(p)
    p.add_argument("--trials", type=int, default=5)
    p.set_defaults(func=cmd_select_bundles)

    p = sub.add_parser("search", help="run the configured search strategy")
    add_common(p)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("report", help="derive plot-ready CSVs from a run directory")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("gen-dataset", help="emit the synthetic blob dataset")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--rows", type=int, default=96)
    p.add_argument("--dims", type=int, default=4)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--spread", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_dataset)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
