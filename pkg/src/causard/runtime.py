"""Per-thread sampling state and the counter machinery behind virtual speedups.

A virtual speedup of one source line is produced by pausing every *other*
thread whenever the selected line is sampled. Two counters coordinate this
without cross-thread signalling: a shared global count of pauses every thread
owes so far, and a per-thread count of pauses the thread has already paid.
A thread pays either by sleeping, by having executed the selected line itself
(its own sample increments only its local count), or by being credited when
another thread wakes it (the waker settled its own debt first, so the sleeper
was already delayed).

The same functions drive both backends: the live backend passes a real sleep
capability, the simulator a virtual one.
"""

from __future__ import annotations

import threading
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

from .model import (
    ProgressKind,
    ProgressPoint,
    Scope,
    SourceLocation,
    TimeNs,
    in_scope,
    validate_speedup_pct,
)

# sleep capability: request nanoseconds, report nanoseconds actually slept
# (never less than requested)
SleepFn = Callable[[int], int]

DEFAULT_PERIOD_NS = 1_000_000  # 1 ms
DEFAULT_BATCH_SIZE = 10


@dataclass(frozen=True)
class SamplingConfig:
    """Sampling period per thread and the batch size used when processing."""

    period_ns: TimeNs = DEFAULT_PERIOD_NS
    batch_size: int = DEFAULT_BATCH_SIZE

    def __post_init__(self) -> None:
        if self.period_ns <= 0:
            raise ValueError(f"sampling period must be positive, got {self.period_ns}")
        if self.batch_size < 1:
            raise ValueError(f"batch size must be >= 1, got {self.batch_size}")


@dataclass(frozen=True)
class Sample:
    """One stack snapshot from one thread, innermost frame first."""

    thread_id: object
    timestamp: TimeNs
    frames: tuple[SourceLocation, ...]

    def __post_init__(self) -> None:
        if not self.frames:
            raise ValueError("a sample needs at least one frame")


def compute_delay(speedup_pct: int, config: SamplingConfig) -> TimeNs:
    """Delay size producing the given speedup: the matching fraction of the period.

    Rounded to the nearest nanosecond, which is negligible against any usable
    sampling period.
    """
    validate_speedup_pct(speedup_pct)
    return (config.period_ns * speedup_pct + 50) // 100


def attribute_sample(sample: Sample, scope: Scope) -> Optional[SourceLocation]:
    """Map a sample to the innermost in-scope frame, walking outward.

    Out-of-scope execution (library calls and the like) is thereby charged to
    the last in-scope callsite. Returns None when no frame is in scope.
    """
    for frame in sample.frames:
        if in_scope(frame, scope):
            return frame
    return None


class GlobalDelayState:
    """Shared experiment state: the selected line, delay size, and global count.

    Mutated with lock-held read-modify-write; safe for any number of threads.
    The count never decreases while an experiment is active.
    """

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.selected_line: Optional[SourceLocation] = None
        self.delay_size_ns: TimeNs = 0
        self.delay_count: int = 0
        self.selected_line_samples: int = 0  # cumulative over the whole run

    def set_experiment(self, line: Optional[SourceLocation], delay_size_ns: TimeNs) -> None:
        with self._lock:
            self.selected_line = line
            self.delay_size_ns = delay_size_ns

    def clear_selection(self) -> None:
        """Stop attributing samples; keep the delay size so stragglers settle."""
        with self._lock:
            self.selected_line = None

    def snapshot(self) -> tuple[int, int]:
        """(delay count, cumulative selected-line samples) as a consistent pair."""
        with self._lock:
            return self.delay_count, self.selected_line_samples

    def _note_selected_samples(self, n: int) -> None:
        with self._lock:
            self.selected_line_samples += n


@dataclass
class ThreadDelayState:
    """Delay bookkeeping owned by exactly one thread; never shared.

    excess_sleep records oversleep from the host (a sleep can only be longer
    than requested) and is consumed by future obligations, keeping total pause
    time exact over the long run.
    """

    local_delay_count: int = 0
    excess_sleep_ns: TimeNs = 0
    samples_in_selected_line: int = 0
    pending: deque = field(default_factory=deque)

    # accounting used by conservation checks and reports
    birth_local_count: int = 0
    pauses_paid: int = 0  # in units of the delay size, via sleeping
    credits_received: int = 0  # units skipped because a waker already paid them
    obligation_total_ns: TimeNs = 0
    actual_sleep_total_ns: TimeNs = 0


def settle_obligation(tstate: ThreadDelayState, gstate: GlobalDelayState) -> TimeNs:
    """Reconcile the thread's count with the global one; return the pause owed.

    A lagging thread owes the difference; a leading thread (it ran the
    selected line more often than anyone paused) raises the bar for everyone.
    """
    with gstate._lock:
        missing = gstate.delay_count - tstate.local_delay_count
        if missing > 0:
            tstate.pauses_paid += missing
            tstate.local_delay_count = gstate.delay_count
            return missing * gstate.delay_size_ns
        if missing < 0:
            gstate.delay_count = tstate.local_delay_count
        return 0


def process_thread_samples(
    tstate: ThreadDelayState,
    gstate: GlobalDelayState,
    batch: Sequence[Sample],
    scope: Scope,
    *,
    stats: Optional["SampleStats"] = None,
    claim: Optional["LineClaim"] = None,
    counters: Optional["ProgressCounters"] = None,
) -> TimeNs:
    """Process one batch of the owning thread's samples; return the pause owed.

    Samples in the currently selected line increment only the local count (the
    thread pays by having run the line, so it never pauses for itself). After
    the batch the counters are settled, and the caller must execute the
    returned obligation before continuing.
    """
    selected = gstate.selected_line
    own_hits = 0
    for sample in batch:
        line = attribute_sample(sample, scope)
        if line is None:
            continue
        if stats is not None:
            stats.record(line)
        if counters is not None:
            counters.record_sampled_hit(line)
        if claim is not None:
            claim.propose(line)
        if selected is not None and line == selected:
            own_hits += 1
    if own_hits:
        tstate.samples_in_selected_line += own_hits
        tstate.local_delay_count += own_hits
        gstate._note_selected_samples(own_hits)
    return settle_obligation(tstate, gstate)


def execute_pause(tstate: ThreadDelayState, obligation_ns: TimeNs, sleep: SleepFn) -> None:
    """Sleep off an obligation, consuming and accumulating oversleep credit."""
    if obligation_ns <= 0:
        return
    tstate.obligation_total_ns += obligation_ns
    request = obligation_ns - tstate.excess_sleep_ns
    actual = sleep(request) if request > 0 else 0
    tstate.actual_sleep_total_ns += actual
    tstate.excess_sleep_ns += actual - obligation_ns


def on_thread_create(parent: ThreadDelayState) -> ThreadDelayState:
    """Child state at spawn: inherits the parent's local count, owes nothing new.

    Delays already inserted into the parent also delayed the creation of the
    child, so the child starts level with its parent.
    """
    return ThreadDelayState(
        local_delay_count=parent.local_delay_count,
        birth_local_count=parent.local_delay_count,
    )


def before_wake_op(tstate: ThreadDelayState, gstate: GlobalDelayState, sleep: SleepFn) -> None:
    """Pay all required delays before any operation that may wake another thread.

    Guarantees a woken thread is woken on time, which is what makes the credit
    in after_block_op sound.
    """
    execute_pause(tstate, settle_obligation(tstate, gstate), sleep)


def after_block_op(tstate: ThreadDelayState, gstate: GlobalDelayState) -> None:
    """Credit a thread returning from a possibly-blocking operation.

    The waker executed every required delay before waking us, so we were
    effectively already delayed; jump to the global count without sleeping.
    """
    with gstate._lock:
        missing = gstate.delay_count - tstate.local_delay_count
        if missing > 0:
            tstate.credits_received += missing
            tstate.local_delay_count = gstate.delay_count


class SampleStats:
    """Run-wide per-line attributed sample counts (inside and outside experiments)."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._counts: dict[SourceLocation, int] = {}

    def record(self, line: SourceLocation) -> None:
        with self._lock:
            self._counts[line] = self._counts.get(line, 0) + 1

    def counts(self) -> dict[SourceLocation, int]:
        with self._lock:
            return dict(self._counts)

    def total(self) -> int:
        with self._lock:
            return sum(self._counts.values())


class LineClaim:
    """Single-winner claim cell for selecting the next line to experiment on.

    While open, the first in-scope attributed sample wins; concurrent
    proposals resolve to exactly one winner.
    """

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._cond = threading.Condition(self._lock)
        self._open = False
        self._line: Optional[SourceLocation] = None

    def open_claim(self) -> None:
        with self._lock:
            self._open = True
            self._line = None

    def close(self) -> None:
        with self._lock:
            self._open = False

    def propose(self, line: SourceLocation) -> bool:
        with self._lock:
            if not self._open or self._line is not None:
                return False
            self._line = line
            self._cond.notify_all()
            return True

    def peek(self) -> Optional[SourceLocation]:
        with self._lock:
            return self._line

    def wait(self, timeout_s: Optional[float]) -> Optional[SourceLocation]:
        with self._lock:
            if self._line is None:
                self._cond.wait(timeout=timeout_s)
            return self._line


class UnknownProgressPoint(KeyError):
    pass


class _LatencyPair:
    __slots__ = ("begin_count", "end_count", "area_ns", "last_change_ns")

    def __init__(self, now: TimeNs) -> None:
        self.begin_count = 0
        self.end_count = 0
        self.area_ns = 0  # integral of (begin - end) over time
        self.last_change_ns = now

    def advance(self, now: TimeNs) -> None:
        self.area_ns += (now - self.last_change_ns) * (self.begin_count - self.end_count)
        self.last_change_ns = now


@dataclass(frozen=True)
class LatencySnapshot:
    begin_count: int
    end_count: int
    area_ns: int
    at_ns: TimeNs

    @property
    def in_flight(self) -> int:
        return self.begin_count - self.end_count


class ProgressCounters:
    """Registered progress points and their monotonic visit counters.

    Visits are atomic with respect to concurrent visitors and snapshot reads.
    Latency pairs additionally integrate the in-flight count over time so the
    analysis can apply Little's law without per-request timestamps. The clock
    is injected: wall time in the live backend, virtual time in the simulator.
    """

    def __init__(self, clock: Callable[[], TimeNs]) -> None:
        self._clock = clock
        self._lock = threading.Lock()
        self._counts: dict[str, int] = {}
        self._points: dict[str, ProgressPoint] = {}
        self._sampled_by_line: dict[SourceLocation, str] = {}
        self._pairs: dict[str, _LatencyPair] = {}

    def register(self, point: ProgressPoint) -> None:
        with self._lock:
            existing = self._points.get(point.id)
            if existing is not None and existing != point:
                raise ValueError(f"progress point {point.id!r} already registered differently")
            self._points[point.id] = point
            self._counts.setdefault(point.id, 0)
            if point.kind is ProgressKind.SAMPLED and point.location is not None:
                self._sampled_by_line[point.location] = point.id
            if point.pair_id is not None and point.pair_id not in self._pairs:
                self._pairs[point.pair_id] = _LatencyPair(self._clock())

    def registered(self) -> tuple[ProgressPoint, ...]:
        with self._lock:
            return tuple(self._points.values())

    def visit(self, point_id: str) -> None:
        with self._lock:
            if point_id not in self._points:
                raise UnknownProgressPoint(point_id)
            self._counts[point_id] += 1
            point = self._points[point_id]
            if point.pair_id is not None:
                pair = self._pairs[point.pair_id]
                pair.advance(self._clock())
                if point.kind is ProgressKind.LATENCY_BEGIN:
                    pair.begin_count += 1
                else:
                    pair.end_count += 1

    def record_sampled_hit(self, line: SourceLocation) -> None:
        with self._lock:
            point_id = self._sampled_by_line.get(line)
            if point_id is not None:
                self._counts[point_id] += 1

    def snapshot(self) -> dict[str, int]:
        with self._lock:
            return dict(self._counts)

    def latency_snapshot(self) -> dict[str, LatencySnapshot]:
        now = self._clock()
        with self._lock:
            out = {}
            for pair_id, pair in self._pairs.items():
                pair.advance(now)
                out[pair_id] = LatencySnapshot(
                    begin_count=pair.begin_count,
                    end_count=pair.end_count,
                    area_ns=pair.area_ns,
                    at_ns=now,
                )
            return out
