"""The profiler's experiment loop: pick a line and a speedup, measure, repeat.

The engine is host-agnostic. A host supplies a clock, a way to wait, the
shared delay state, progress counters, and the line-claim cell; the live
backend implements these with real threads and real time, the simulator with
virtual time. The engine logic is identical in both, which is what lets the
simulator act as a ground-truth oracle for the real thing.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Protocol

from .model import (
    MS,
    NONZERO_SPEEDUPS,
    Scope,
    SourceLocation,
    TimeNs,
    in_scope,
    validate_speedup_pct,
)
from .runtime import (
    GlobalDelayState,
    LatencySnapshot,
    LineClaim,
    ProgressCounters,
    SampleStats,
    SamplingConfig,
    compute_delay,
)


@dataclass(frozen=True)
class EngineConfig:
    """Knobs for the experiment loop; defaults favor short desk-scale runs."""

    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    min_visits: int = 5
    initial_experiment_ns: TimeNs = 500 * MS
    cooloff_ns: Optional[TimeNs] = None  # default: one batch interval
    fixed_line: Optional[SourceLocation] = None
    fixed_speedup: Optional[int] = None
    rng_seed: Optional[int] = None  # None: drawn from entropy, reported in totals
    scope: Scope = field(default_factory=Scope.everything)
    selection_window_factor: int = 10
    max_experiments: Optional[int] = None

    def __post_init__(self) -> None:
        if self.min_visits < 1:
            raise ValueError("min_visits must be >= 1")
        if self.initial_experiment_ns <= 0:
            raise ValueError("experiment duration must be positive")
        if self.cooloff_ns is not None and self.cooloff_ns < 0:
            raise ValueError("cooloff must be >= 0")
        if self.fixed_speedup is not None:
            validate_speedup_pct(self.fixed_speedup)
        if self.selection_window_factor < 1:
            raise ValueError("selection window factor must be >= 1")

    @property
    def effective_cooloff_ns(self) -> TimeNs:
        if self.cooloff_ns is not None:
            return self.cooloff_ns
        return self.sampling.period_ns * self.sampling.batch_size


@dataclass(frozen=True)
class LatencyDelta:
    begin: int
    end: int
    area_ns: int


@dataclass(frozen=True)
class ExperimentRecord:
    """One experiment: its independent variables and everything measured."""

    line: SourceLocation
    speedup_pct: int
    start_ns: TimeNs
    wall_ns: TimeNs
    inserted_delay_ns: TimeNs
    progress_deltas: dict[str, int]
    latency_deltas: dict[str, LatencyDelta]
    selected_line_samples: int

    def __post_init__(self) -> None:
        if self.effective_ns < 0:
            raise ValueError("inserted delay exceeds wall duration")

    @property
    def effective_ns(self) -> TimeNs:
        """Wall duration minus inserted delay: the duration a real optimization
        of the same size would have produced."""
        return self.wall_ns - self.inserted_delay_ns


@dataclass
class RunTotals:
    """Whole-run aggregates, accumulated inside and outside experiments."""

    effective_runtime_ns: TimeNs = 0
    line_samples: dict[str, int] = field(default_factory=dict)
    progress_totals: dict[str, int] = field(default_factory=dict)
    latency_totals: dict[str, LatencyDelta] = field(default_factory=dict)
    experiments: int = 0
    selection_timeouts: int = 0
    seed: int = 0


class EngineHost(Protocol):
    """What a backend must provide for the engine to run against it."""

    gstate: GlobalDelayState
    counters: ProgressCounters
    stats: SampleStats
    claim: LineClaim

    def now(self) -> TimeNs: ...

    def wait(self, duration_ns: TimeNs) -> None:
        """Wait for the duration; may return early if the program ends."""

    def wait_for_line(self, window_ns: TimeNs) -> Optional[SourceLocation]:
        """Wait for the open claim to be won, up to the window."""

    def running(self) -> bool: ...

    def begin_drain(self) -> None:
        """Ask threads to flush partial sample batches (cooloff)."""

    def end_drain(self) -> None: ...


def select_speedup(rng: random.Random) -> int:
    """Pick a speedup percent: 0 half the time, else uniform over 5..100.

    The baseline measurement is needed to normalize every other point, hence
    its extra weight.
    """
    if rng.random() < 0.5:
        return 0
    return rng.choice(NONZERO_SPEEDUPS)


def select_line(candidates: Iterable[SourceLocation], scope: Scope) -> Optional[SourceLocation]:
    """First in-scope location from a stream of attributed samples, or None."""
    for loc in candidates:
        if in_scope(loc, scope):
            return loc
    return None


def adapt_duration(visits_delta: int, current_ns: TimeNs, min_visits: int) -> TimeNs:
    """Double the experiment length when progress visits were too sparse."""
    if visits_delta < min_visits:
        return current_ns * 2
    return current_ns


def run_experiment(
    host: EngineHost,
    line: SourceLocation,
    speedup_pct: int,
    duration_ns: TimeNs,
    sampling: SamplingConfig,
) -> Optional[ExperimentRecord]:
    """Apply one (line, speedup) pair for the duration and measure the deltas.

    Returns None when the program shut down mid-experiment (the partial
    measurement is discarded). The selection is cleared at the end but the
    delay size is kept so threads still owing pauses settle during cooloff.
    """
    delay = compute_delay(speedup_pct, sampling)
    start = host.now()
    progress_before = host.counters.snapshot()
    latency_before = host.counters.latency_snapshot()
    count_before, samples_before = host.gstate.snapshot()

    host.gstate.set_experiment(line, delay)
    host.wait(duration_ns)
    host.gstate.clear_selection()

    end = host.now()
    if end - start < duration_ns and not host.running():
        return None

    progress_after = host.counters.snapshot()
    latency_after = host.counters.latency_snapshot()
    count_after, samples_after = host.gstate.snapshot()

    wall = end - start
    inserted = (count_after - count_before) * delay
    deltas = {
        point: progress_after[point] - progress_before.get(point, 0)
        for point in progress_after
    }
    latency_deltas = {
        pair: LatencyDelta(
            begin=after.begin_count - latency_before[pair].begin_count,
            end=after.end_count - latency_before[pair].end_count,
            area_ns=after.area_ns - latency_before[pair].area_ns,
        )
        for pair, after in latency_after.items()
        if pair in latency_before
    }
    return ExperimentRecord(
        line=line,
        speedup_pct=speedup_pct,
        start_ns=start,
        wall_ns=wall,
        inserted_delay_ns=inserted,
        progress_deltas=deltas,
        latency_deltas=latency_deltas,
        selected_line_samples=samples_after - samples_before,
    )


def engine_loop(
    config: EngineConfig,
    host: EngineHost,
    sink: Callable[[ExperimentRecord], None],
) -> RunTotals:
    """Run experiments until the program exits; return whole-run totals.

    Line and speedup choices depend only on the seeded RNG and the sample
    stream, never on earlier outcomes, so no line or speedup is systematically
    favored over the run.
    """
    seed = config.rng_seed if config.rng_seed is not None else random.SystemRandom().getrandbits(64)
    rng = random.Random(seed)
    duration = config.initial_experiment_ns
    cooloff = config.effective_cooloff_ns
    run_start = host.now()
    inserted_total = 0
    timeouts = 0
    experiments = 0

    while host.running():
        if config.max_experiments is not None and experiments >= config.max_experiments:
            break
        if config.fixed_line is not None:
            line: Optional[SourceLocation] = config.fixed_line
        else:
            host.claim.open_claim()
            line = host.wait_for_line(config.selection_window_factor * duration)
            host.claim.close()
        if line is None:
            if host.running():
                timeouts += 1
            continue
        pct = config.fixed_speedup if config.fixed_speedup is not None else select_speedup(rng)
        record = run_experiment(host, line, pct, duration, config.sampling)
        if record is None:
            break
        sink(record)
        experiments += 1
        inserted_total += record.inserted_delay_ns
        duration = adapt_duration(
            max(record.progress_deltas.values(), default=0), duration, config.min_visits
        )
        # Cooloff: leftover samples from the finished experiment get flushed
        # here; they count toward run totals but toward no experiment.
        host.begin_drain()
        host.wait(cooloff)
        host.end_drain()

    run_end = host.now()
    latency_totals = {
        pair: LatencyDelta(snap.begin_count, snap.end_count, snap.area_ns)
        for pair, snap in host.counters.latency_snapshot().items()
    }
    return RunTotals(
        effective_runtime_ns=(run_end - run_start) - inserted_total,
        line_samples={str(line): n for line, n in host.stats.counts().items()},
        progress_totals=host.counters.snapshot(),
        latency_totals=latency_totals,
        experiments=experiments,
        selection_timeouts=timeouts,
        seed=seed,
    )
