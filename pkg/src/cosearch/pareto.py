"""Bundle scoring and Pareto selection.

Each bundle is evaluated on (resource usage, attainable accuracy) using a
handful of sampled template points; the bundles on the resource/accuracy
Pareto front are the ones worth searching further.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import perf
from .rng import child_seed, make_rng
from .space import SearchSpace, template_point


def pareto_front(points: Sequence[tuple[float, float]]) -> list[int]:
    """Indices of the non-dominated points, sorted by cost ascending.

    p dominates q iff cost_p <= cost_q and value_p >= value_q with at least
    one strict; exact ties on both axes keep only the first by input order.
    """
    order = sorted(range(len(points)), key=lambda i: (points[i][0], -points[i][1], i))
    front = []
    best_value = -float("inf")
    for i in order:
        if points[i][1] > best_value:
            front.append(i)
            best_value = points[i][1]
    return front


def resource_scalar(
    resources: tuple[float, float, float],
    budgets: tuple[float, float, float],
    weights: tuple[float, float, float] = (0.5, 0.3, 0.2),
) -> float:
    """Weighted normalized usage collapsing (dsp, bram, lut) to one axis."""
    return sum(w * r / b for w, r, b in zip(weights, resources, budgets))


@dataclass(frozen=True)
class BundleScore:
    bundle_id: str
    resource_scalar: float
    accuracy: float
    points_evaluated: int


def score_bundles(
    space: SearchSpace,
    platform: perf.PlatformModel,
    evaluator,
    trials_per_bundle: int,
    seed: int,
    *,
    weights: tuple[float, float, float] = (0.5, 0.3, 0.2),
) -> tuple[list[BundleScore], list[int]]:
    """Median-aggregate sampled template points per bundle, then select.

    Each trial keeps the bundle's template macro shape (full depth, default
    channels) and resamples the implementation knobs; accuracy evaluation
    gets its own derived seed per trial.
    """
    if trials_per_bundle < 1:
        raise ValueError("trials_per_bundle must be >= 1")
    scores = []
    budgets = platform.budgets()
    for bi, bundle in enumerate(space.bundles):
        accs = []
        ress = []
        for t in range(trials_per_bundle):
            rng = make_rng(seed, "bundle-trial", bi * trials_per_bundle + t)
            base = template_point(space, bundle.id)
            menu = space.menu(bundle.id)
            quant = []
            pf = []
            for m in base.op_choice:
                op = menu[m]
                quant.append(int(op.allowed_quant_bits[int(rng.integers(0, len(op.allowed_quant_bits)))]))
                lo, hi = op.pf_range
                pf.append(int(rng.integers(lo, hi + 1)))
            point = type(base)(
                bundle_id=base.bundle_id,
                n=base.n,
                op_choice=base.op_choice,
                channels=base.channels,
                pools=base.pools,
                quant_bits=tuple(quant),
                pf=tuple(pf),
            )
            report = perf.evaluate(point, space, platform)
            ress.append(resource_scalar(report.resources(), budgets, weights))
            accs.append(evaluator.accuracy(point, seed=child_seed(seed, "bundle-acc", bi * trials_per_bundle + t)))
        scores.append(
            BundleScore(
                bundle_id=bundle.id,
                resource_scalar=float(np.median(ress)),
                accuracy=float(np.median(accs)),
                points_evaluated=trials_per_bundle,
            )
        )
    front = pareto_front([(s.resource_scalar, s.accuracy) for s in scores])
    return scores, front


def write_bundle_scores_csv(
    path: str | Path, scores: Sequence[BundleScore], front: Sequence[int]
) -> None:
    on_front = set(front)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bundle_id", "resource_scalar", "accuracy", "on_front"])
        for i, s in enumerate(scores):
            writer.writerow([s.bundle_id, repr(s.resource_scalar), repr(s.accuracy), int(i in on_front)])


def read_bundle_scores_csv(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return [
            {
                "bundle_id": row["bundle_id"],
                "resource_scalar": float(row["resource_scalar"]),
                "accuracy": float(row["accuracy"]),
                "on_front": bool(int(row["on_front"])),
            }
            for row in csv.DictReader(fh)
        ]
