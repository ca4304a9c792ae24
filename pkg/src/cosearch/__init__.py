"""Joint DNN-architecture / accelerator-implementation co-search.

Discrete design points over a bundle-based space are evaluated with
analytical latency/resource models (validated by a cycle-level oracle) and
pluggable accuracy evaluators, then optimized by stochastic coordinate
descent, particle swarm, or differentiable relaxation.
"""

__version__ = "0.1.0"

from .perf import AccelMode, PerfReport, PlatformModel
from .space import Bundle, DesignPoint, OpCandidate, OpKind, SearchSpace

__all__ = [
    "AccelMode",
    "Bundle",
    "DesignPoint",
    "OpCandidate",
    "OpKind",
    "PerfReport",
    "PlatformModel",
    "__version__",
]
