"""causard: a causal profiler with a deterministic simulator as its oracle.

Instead of reporting where time is spent, causard measures what optimizing a
given source line would do to whole-program throughput or latency. It runs
randomized virtual-speedup experiments: pausing every other thread whenever
the chosen line runs has the same relative effect as making the line faster,
so the impact of a hypothetical optimization can be measured without
performing it.

The package has two interchangeable backends: a live one for real
instrumented multithreaded programs, and a discrete-event simulator whose
actual-speedup mode provides ground truth for validating predictions.
"""

from .model import (
    Scope,
    SourceLocation,
    TimeNs,
    in_scope,
    parse_duration,
    parse_location,
)
from .engine import EngineConfig, ExperimentRecord, RunTotals
from .runtime import SamplingConfig
from .workload import Workload, WorkloadError, load_workload

__version__ = "0.1.0"

__all__ = [
    "EngineConfig",
    "ExperimentRecord",
    "RunTotals",
    "SamplingConfig",
    "Scope",
    "SourceLocation",
    "TimeNs",
    "Workload",
    "WorkloadError",
    "in_scope",
    "load_workload",
    "parse_duration",
    "parse_location",
    "__version__",
]
