"""Reverse-mode automatic differentiation over a scalar expression tape,
plus the Gumbel-Softmax sampler used to relax categorical choices.

The tape is append-only, so inputs always precede outputs and the backward
sweep is a single reverse pass. Values are computed eagerly at construction;
``set_var`` + ``recompute`` re-evaluate a fixed topology cheaply, which is
what the proxy trainer and the relaxed-loss descent loop rely on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

CONST = "const"
VAR = "var"
ADD = "add"
MUL = "mul"
DIV = "div"
NEG = "neg"
EXP = "exp"
LOG = "log"
POW = "pow"
LSE = "logsumexp-pair"
SOFTMAX = "softmax-group"


class TapeDomainError(ValueError):
    """An op hit an invalid domain (log/div/pow); names the offending node."""


class Node:
    """Handle to one tape entry; supports arithmetic with nodes and floats."""

    __slots__ = ("tape", "id")

    def __init__(self, tape: "Tape", node_id: int):
        self.tape = tape
        self.id = node_id

    @property
    def value(self) -> float:
        return self.tape.values[self.id]

    def _coerce(self, other) -> "Node":
        if isinstance(other, Node):
            if other.tape is not self.tape:
                raise ValueError("cannot mix nodes from different tapes")
            return other
        return self.tape.const(float(other))

    def __add__(self, other):
        return self.tape._append(ADD, (self.id, self._coerce(other).id))

    __radd__ = __add__

    def __mul__(self, other):
        return self.tape._append(MUL, (self.id, self._coerce(other).id))

    __rmul__ = __mul__

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) + (-self)

    def __truediv__(self, other):
        return self.tape._append(DIV, (self.id, self._coerce(other).id))

    def __rtruediv__(self, other):
        return self.tape._append(DIV, (self._coerce(other).id, self.id))

    def __neg__(self):
        return self.tape._append(NEG, (self.id,))

    def __pow__(self, exponent: float):
        return self.tape._append(POW, (self.id,), aux=float(exponent))

    def __repr__(self) -> str:
        return f"Node({self.id}, {self.tape.opcodes[self.id]}, value={self.value!r})"


def _forward(opcode: str, args: tuple[float, ...], aux, node_id: int) -> float:
    """Single source of truth for op semantics (used at build and recompute)."""
    if opcode == ADD:
        return args[0] + args[1]
    if opcode == MUL:
        return args[0] * args[1]
    if opcode == DIV:
        if args[1] == 0.0:
            raise TapeDomainError(f"node {node_id}: division by zero")
        return args[0] / args[1]
    if opcode == NEG:
        return -args[0]
    if opcode == EXP:
        try:
            return math.exp(args[0])
        except OverflowError as exc:
            raise TapeDomainError(f"node {node_id}: exp overflow at {args[0]!r}") from exc
    if opcode == LOG:
        if args[0] <= 0.0:
            raise TapeDomainError(f"node {node_id}: log of nonpositive {args[0]!r}")
        return math.log(args[0])
    if opcode == POW:
        base, p = args[0], aux
        if base < 0.0 and p != int(p):
            raise TapeDomainError(f"node {node_id}: fractional power of negative base")
        if base == 0.0 and p < 0.0:
            raise TapeDomainError(f"node {node_id}: negative power of zero")
        return base**p
    if opcode == LSE:
        a, b = args
        hi, lo = (a, b) if a >= b else (b, a)
        return hi + math.log1p(math.exp(lo - hi))
    raise AssertionError(f"unhandled opcode {opcode}")


class Tape:
    """Append-only list of (opcode, input ids, value); acyclic by construction."""

    __slots__ = ("opcodes", "inputs", "values", "aux", "_var_index")

    def __init__(self) -> None:
        self.opcodes: list[str] = []
        self.inputs: list[tuple[int, ...]] = []
        self.values: list[float] = []
        self.aux: list = []
        self._var_index: dict[str, int] = {}

    def __len__(self) -> int:
        return len(self.opcodes)

    def _append(self, opcode: str, inputs: tuple[int, ...], aux=None, value=None) -> Node:
        node_id = len(self.opcodes)
        if value is None:
            args = tuple(self.values[i] for i in inputs)
            value = _forward(opcode, args, aux, node_id)
        self.opcodes.append(opcode)
        self.inputs.append(inputs)
        self.values.append(value)
        self.aux.append(aux)
        return Node(self, node_id)

    def const(self, x: float) -> Node:
        return self._append(CONST, (), value=float(x))

    def var(self, name: str, value: float) -> Node:
        if name in self._var_index:
            raise ValueError(f"variable {name!r} already registered")
        node = self._append(VAR, (), aux=name, value=float(value))
        self._var_index[name] = node.id
        return node

    def var_node(self, name: str) -> Node:
        return Node(self, self._var_index[name])

    def set_var(self, name: str, value: float) -> None:
        self.values[self._var_index[name]] = float(value)

    def exp(self, x: Node) -> Node:
        return self._append(EXP, (x.id,))

    def log(self, x: Node) -> Node:
        return self._append(LOG, (x.id,))

    def logsumexp(self, a: Node, b: Node) -> Node:
        return self._append(LSE, (a.id, b.id))

    def softmax(self, xs: Sequence[Node]) -> list[Node]:
        """Numerically stable softmax over a group; returns one node per entry."""
        ids = tuple(x.id for x in xs)
        vals = [self.values[i] for i in ids]
        hi = max(vals)
        exps = [math.exp(v - hi) for v in vals]
        total = sum(exps)
        first = len(self.opcodes)
        out = []
        for j, e in enumerate(exps):
            out.append(
                self._append(SOFTMAX, ids, aux=(j, first), value=e / total)
            )
        return out

    def recompute(self) -> None:
        """Re-evaluate every node in order (after set_var updates)."""
        values = self.values
        softmax_cache: dict[tuple, list[float]] = {}
        for nid, opcode in enumerate(self.opcodes):
            if opcode in (CONST, VAR):
                continue
            inputs = self.inputs[nid]
            if opcode == SOFTMAX:
                j, first = self.aux[nid]
                key = (inputs, first)
                cached = softmax_cache.get(key)
                if cached is None:
                    vals = [values[i] for i in inputs]
                    hi = max(vals)
                    exps = [math.exp(v - hi) for v in vals]
                    total = sum(exps)
                    cached = [e / total for e in exps]
                    softmax_cache[key] = cached
                values[nid] = cached[j]
            else:
                args = tuple(values[i] for i in inputs)
                values[nid] = _forward(opcode, args, self.aux[nid], nid)

    def dump(self) -> str:
        """Debug text form, one node per line (no stability guarantee)."""
        lines = []
        for nid, opcode in enumerate(self.opcodes):
            lines.append(
                f"{nid}\t{opcode}\t{self.inputs[nid]}\t{self.values[nid]!r}\t{self.aux[nid]!r}"
            )
        return "\n".join(lines)


def grad(tape: Tape, output: Node, wrt: Iterable[str]) -> dict[str, float]:
    """Exact reverse-mode gradients of ``output`` w.r.t. named variables.

    Variables not reachable from the output get 0.
    """
    adj = [0.0] * (output.id + 1)
    adj[output.id] = 1.0
    values = tape.values
    for nid in range(output.id, -1, -1):
        a = adj[nid]
        if a == 0.0:
            continue
        opcode = tape.opcodes[nid]
        inputs = tape.inputs[nid]
        if opcode in (CONST, VAR):
            continue
        if opcode == ADD:
            adj[inputs[0]] += a
            adj[inputs[1]] += a
        elif opcode == MUL:
            adj[inputs[0]] += a * values[inputs[1]]
            adj[inputs[1]] += a * values[inputs[0]]
        elif opcode == DIV:
            denom = values[inputs[1]]
            adj[inputs[0]] += a / denom
            adj[inputs[1]] -= a * values[inputs[0]] / (denom * denom)
        elif opcode == NEG:
            adj[inputs[0]] -= a
        elif opcode == EXP:
            adj[inputs[0]] += a * values[nid]
        elif opcode == LOG:
            adj[inputs[0]] += a / values[inputs[0]]
        elif opcode == POW:
            p = tape.aux[nid]
            base = values[inputs[0]]
            if p != 0.0:
                adj[inputs[0]] += a * p * base ** (p - 1.0)
        elif opcode == LSE:
            v = values[nid]
            adj[inputs[0]] += a * math.exp(values[inputs[0]] - v)
            adj[inputs[1]] += a * math.exp(values[inputs[1]] - v)
        elif opcode == SOFTMAX:
            j, first = tape.aux[nid]
            yj = values[nid]
            for i, input_id in enumerate(inputs):
                yi = values[first + i]
                adj[input_id] += a * yj * ((1.0 if i == j else 0.0) - yi)
        else:
            raise AssertionError(f"unhandled opcode {opcode}")
    out = {}
    for name in wrt:
        nid = tape._var_index[name]
        out[name] = adj[nid] if nid <= output.id else 0.0
    return out


# Duck-typed scalar helpers: accept floats or Nodes, so the analytical
# performance/accuracy formulas are written once and run in both worlds.


def exp(x):
    if isinstance(x, Node):
        return x.tape.exp(x)
    return math.exp(x)


def log(x):
    if isinstance(x, Node):
        return x.tape.log(x)
    if x <= 0.0:
        raise TapeDomainError(f"log of nonpositive {x!r}")
    return math.log(x)


def logaddexp(a, b):
    if isinstance(a, Node) or isinstance(b, Node):
        tape = a.tape if isinstance(a, Node) else b.tape
        a = a if isinstance(a, Node) else tape.const(a)
        b = b if isinstance(b, Node) else tape.const(b)
        return tape.logsumexp(a, b)
    hi, lo = (a, b) if a >= b else (b, a)
    return hi + math.log1p(math.exp(lo - hi))


def smooth_max(a, b, sharpness: float):
    """log-sum-exp soft maximum: max(a,b) <= smooth_max <= max(a,b) + s*ln2."""
    s = float(sharpness)
    return s * logaddexp(a / s, b / s)


def softplus(x, sharpness: float):
    """Smooth clamp-below-at-zero: (1/k) * log(1 + exp(k*x))."""
    k = float(sharpness)
    return logaddexp(x * k, 0.0) / k


@dataclass(frozen=True)
class GumbelConfig:
    """Temperature schedule and seed for Gumbel-Softmax sampling."""

    tau_start: float = 5.0
    tau_end: float = 0.1
    decay: float = 0.95
    seed: int = 0

    def __post_init__(self) -> None:
        if self.tau_start <= 0 or self.tau_end <= 0:
            raise ValueError("temperatures must be > 0")
        if self.tau_end > self.tau_start:
            raise ValueError("tau_end must be <= tau_start")
        if not 0 < self.decay <= 1:
            raise ValueError("decay must be in (0, 1]")

    def temperature(self, epoch: int) -> float:
        return max(self.tau_end, self.tau_start * self.decay**epoch)


def gumbel_softmax(logits: Sequence[Node], tau: float, rng: np.random.Generator) -> list[Node]:
    """Sample a relaxed one-hot vector over the logits.

    y = softmax((logits + g) / tau) with g = -log(-log(u)), u ~ U(0,1) drawn
    from the caller's seeded generator. Fully recorded on the tape, so
    gradients flow back to the logits; entries are in (0,1) and sum to 1.
    """
    if tau <= 0:
        raise ValueError("tau must be > 0")
    if not logits:
        raise ValueError("logits must be nonempty")
    tape = logits[0].tape
    inv_tau = 1.0 / float(tau)
    scaled = []
    for logit in logits:
        u = min(max(float(rng.random()), 1e-300), 1.0 - 1e-16)
        g = -math.log(-math.log(u))
        scaled.append((logit + g) * inv_tau)
    return tape.softmax(scaled)


def sgd_step(
    params: dict[str, float],
    grads: dict[str, float],
    lr: float,
    clip: float | None = None,
) -> dict[str, float]:
    """One gradient-descent step: p <- p - lr * clip(g). Deterministic."""
    if lr <= 0:
        raise ValueError("lr must be > 0")
    out = {}
    for name, p in params.items():
        g = grads.get(name, 0.0)
        if not math.isfinite(g):
            raise ValueError(f"non-finite gradient for variable {name!r}")
        if clip is not None:
            g = min(max(g, -clip), clip)
        out[name] = p - lr * g
    return out
