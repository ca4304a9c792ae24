"""Pluggable accuracy evaluators.

Two interchangeable backends produce the strictly positive accuracy-loss
term of the search objective:

  * a deterministic differentiable surrogate over architecture descriptors
    (log parameter count, effective depth, quantization penalty) — the
    constants are synthetic, tuned for plausible orderings, not measured;
  * a tiny proxy trainer: a multilayer perceptron on tabular data whose
    hidden widths come from the design point's channel counts and whose
    depth is its replication count, trained with the internal autodiff
    engine for a handful of epochs.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import perf
from .autodiff import Tape, grad, sgd_step
from .rng import child_seed, make_rng
from .space import DesignPoint, OpKind, SearchSpace, round_half_up, shapes


@dataclass(frozen=True)
class SurrogateParams:
    """Constants of the synthetic accuracy-loss surface (see default config)."""

    capacity_weight: float = 0.15
    depth_weight: float = 0.05
    quant_penalty: dict = field(default_factory=lambda: {16: 0.0, 8: 0.05, 4: 0.25})
    floor: float = 0.05

    def __post_init__(self) -> None:
        if self.capacity_weight < 0 or self.depth_weight < 0:
            raise ValueError("capacity_weight and depth_weight must be >= 0")
        if self.floor <= 0:
            raise ValueError("floor must be > 0")
        bits = sorted(self.quant_penalty)
        pens = [self.quant_penalty[b] for b in bits]
        if any(p < 0 for p in pens):
            raise ValueError("quant penalties must be >= 0")
        for wider, narrower in zip(pens[1:], pens[:-1]):
            if wider > narrower:
                raise ValueError("quant_penalty must be non-increasing in bitwidth")

    def penalty(self, q: int) -> float:
        try:
            return float(self.quant_penalty[q])
        except KeyError:
            raise ValueError(f"quant_penalty has no entry for {q}-bit") from None


def surrogate_acc_loss(
    log_param_count, effective_depth, expected_quant_penalty, params: SurrogateParams
):
    """floor + exp(-a*log_params - b*depth + quant_penalty).

    Smooth in all three descriptors; accepts floats or tape nodes (the
    relaxed search feeds expectation-weighted descriptors through here).
    """
    return params.floor + ad.exp(
        log_param_count * -params.capacity_weight
        + effective_depth * -params.depth_weight
        + expected_quant_penalty
    )


def point_descriptors(
    point: DesignPoint, space: SearchSpace, params: SurrogateParams
) -> tuple[float, float, float]:
    """(log_param_count, effective_depth, mean quant penalty) of a point.

    log_param_count sums log(1 + weights) per slot; identity slots add no
    depth. The same weighting is reproduced in expectation by the relaxed
    search.
    """
    menu = space.menu(point.bundle_id)
    slot_shapes = shapes(space, point)
    lpc = 0.0
    depth = 0.0
    qpen = 0.0
    for i in range(point.n):
        op = menu[point.op_choice[i]]
        lpc += math.log1p(perf.weight_count(op, slot_shapes[i]))
        if op.kind is not OpKind.IDENTITY:
            depth += 1.0
        qpen += params.penalty(point.quant_bits[i])
    return lpc, depth, qpen / point.n


class SurrogateEvaluator:
    """Deterministic differentiable evaluator; seed is accepted and ignored."""

    differentiable = True

    def __init__(self, space: SearchSpace, params: SurrogateParams | None = None):
        self.space = space
        self.params = params or SurrogateParams()

    def acc_loss(self, point: DesignPoint, seed: int = 0) -> float:
        return surrogate_acc_loss(*point_descriptors(point, self.space, self.params), self.params)

    def accuracy(self, point: DesignPoint, seed: int = 0) -> float:
        return 1.0 / (1.0 + self.acc_loss(point, seed))


@dataclass(frozen=True)
class ProxyDataset:
    """Tabular rows with a fixed train/validation split."""

    features: np.ndarray
    labels: np.ndarray
    train_idx: np.ndarray
    val_idx: np.ndarray
    seed: int

    def __post_init__(self) -> None:
        n = len(self.labels)
        both = np.concatenate([self.train_idx, self.val_idx])
        if len(both) != n or len(np.unique(both)) != n:
            raise ValueError("train/val split must be disjoint and covering")
        if len(self.train_idx) == 0 or len(self.val_idx) == 0:
            raise ValueError("both splits must be nonempty")
        if len(np.unique(self.labels)) < 2:
            raise ValueError("dataset must contain at least 2 classes")

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1

    @classmethod
    def split(cls, features, labels, seed: int, val_fraction: float = 0.25) -> "ProxyDataset":
        features = np.asarray(features, dtype=float)
        labels = np.asarray(labels, dtype=int)
        order = make_rng(seed, "proxy-split").permutation(len(labels))
        n_val = max(1, int(round(len(labels) * val_fraction)))
        return cls(
            features=features,
            labels=labels,
            train_idx=np.sort(order[n_val:]),
            val_idx=np.sort(order[:n_val]),
            seed=seed,
        )

    @classmethod
    def from_csv(cls, path: str | Path, seed: int, val_fraction: float = 0.25) -> "ProxyDataset":
        """Header row; last column is the integer label."""
        rows = []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            next(reader)  # header
            for row in reader:
                rows.append([float(x) for x in row])
        data = np.array(rows)
        return cls.split(data[:, :-1], data[:, -1].astype(int), seed, val_fraction)


def make_blob_dataset(
    seed: int, rows: int = 96, dims: int = 4, classes: int = 3, spread: float = 1.0
) -> ProxyDataset:
    """Gaussian blobs, one cluster per class, centers on coordinate axes."""
    rng = make_rng(seed, "blobs")
    centers = np.zeros((classes, dims))
    for c in range(classes):
        centers[c, c % dims] = 2.0 * (1 + c // dims)
    labels = np.arange(rows) % classes
    features = centers[labels] + spread * rng.standard_normal((rows, dims))
    return ProxyDataset.split(features, labels, seed)


def write_dataset_csv(dataset: ProxyDataset, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        dims = dataset.features.shape[1]
        writer.writerow([f"x{i}" for i in range(dims)] + ["label"])
        for x, y in zip(dataset.features, dataset.labels):
            writer.writerow([repr(float(v)) for v in x] + [int(y)])


def _hidden_widths(point: DesignPoint, width_scale: float) -> list[int]:
    return [max(1, round_half_up(c * width_scale)) for c in point.channels]


def proxy_train_curve(
    point: DesignPoint,
    dataset: ProxyDataset,
    epochs: int,
    seed: int,
    *,
    width_scale: float = 1.0,
    lr: float = 0.5,
) -> tuple[float, list[float]]:
    """Train the proxy MLP; returns (validation accuracy, per-epoch loss).

    Fully deterministic per seed: seeded init, full-batch gradient descent
    with fixed lr, softplus hidden activations, softmax cross-entropy.
    """
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    classes = dataset.num_classes
    widths = _hidden_widths(point, width_scale)
    x_train = dataset.features[dataset.train_idx]
    y_train = dataset.labels[dataset.train_idx]
    mean = x_train.mean(axis=0)
    std = np.maximum(x_train.std(axis=0), 1e-6)
    x_train = (x_train - mean) / std

    rng = make_rng(seed, "proxy-init")
    layer_dims = [x_train.shape[1]] + widths + [classes]
    params: dict[str, float] = {}
    for li in range(len(layer_dims) - 1):
        fan_in, fan_out = layer_dims[li], layer_dims[li + 1]
        scale = 1.0 / math.sqrt(fan_in)
        w = rng.standard_normal((fan_out, fan_in)) * scale
        for r in range(fan_out):
            for c in range(fan_in):
                params[f"w{li}_{r}_{c}"] = float(w[r, c])
            params[f"b{li}_{r}"] = 0.0

    tape = Tape()
    pvars = {name: tape.var(name, v) for name, v in params.items()}

    def forward(sample: np.ndarray) -> list:
        acts = [tape.const(float(v)) for v in sample]
        for li in range(len(layer_dims) - 1):
            nxt = []
            for r in range(layer_dims[li + 1]):
                z = pvars[f"b{li}_{r}"]
                for c, a in enumerate(acts):
                    z = z + pvars[f"w{li}_{r}_{c}"] * a
                if li < len(layer_dims) - 2:
                    z = ad.softplus(z, 1.0)
                nxt.append(z)
            acts = nxt
        return acts

    per_sample = []
    for sample, label in zip(x_train, y_train):
        logits = forward(sample)
        lse = logits[0]
        for node in logits[1:]:
            lse = ad.logaddexp(lse, node)
        per_sample.append(lse - logits[int(label)])
    total = per_sample[0]
    for node in per_sample[1:]:
        total = total + node
    loss = total * (1.0 / len(per_sample))

    names = list(params)
    losses = []
    for _ in range(epochs):
        losses.append(loss.value)
        grads = grad(tape, loss, names)
        params = sgd_step(params, grads, lr)
        for name, v in params.items():
            tape.set_var(name, v)
        tape.recompute()

    weights = []
    for li in range(len(layer_dims) - 1):
        w = np.array(
            [
                [params[f"w{li}_{r}_{c}"] for c in range(layer_dims[li])]
                for r in range(layer_dims[li + 1])
            ]
        )
        b = np.array([params[f"b{li}_{r}"] for r in range(layer_dims[li + 1])])
        weights.append((w, b))

    x_val = (dataset.features[dataset.val_idx] - mean) / std
    y_val = dataset.labels[dataset.val_idx]
    acts = x_val.T
    for li, (w, b) in enumerate(weights):
        z = w @ acts + b[:, None]
        acts = np.logaddexp(z, 0.0) if li < len(weights) - 1 else z
    pred = np.argmax(acts, axis=0)
    return float(np.mean(pred == y_val)), losses


def proxy_train_eval(
    point: DesignPoint,
    dataset: ProxyDataset,
    epochs: int,
    seed: int,
    *,
    width_scale: float = 1.0,
    lr: float = 0.5,
) -> float:
    accuracy, _ = proxy_train_curve(
        point, dataset, epochs, seed, width_scale=width_scale, lr=lr
    )
    return accuracy


class ProxyEvaluator:
    """Accuracy from a quick proxy training run; acc_loss = 1 - acc + floor."""

    differentiable = False

    def __init__(
        self,
        space: SearchSpace,
        dataset: ProxyDataset,
        epochs: int = 20,
        width_scale: float = 1.0,
        lr: float = 0.5,
        floor: float = 0.05,
    ):
        self.space = space
        self.dataset = dataset
        self.epochs = epochs
        self.width_scale = width_scale
        self.lr = lr
        self.floor = floor

    def accuracy(self, point: DesignPoint, seed: int = 0) -> float:
        return proxy_train_eval(
            point,
            self.dataset,
            self.epochs,
            child_seed(seed, "proxy-eval"),
            width_scale=self.width_scale,
            lr=self.lr,
        )

    def acc_loss(self, point: DesignPoint, seed: int = 0) -> float:
        return max(0.0, 1.0 - self.accuracy(point, seed)) + self.floor
