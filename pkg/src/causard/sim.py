"""Deterministic discrete-event simulator for multithreaded workloads.

Each simulated thread runs on its own virtual core: threads advance in
parallel virtual time and are never time-sliced against each other. Ties
(two threads runnable at the same instant) are broken by thread declaration
order, so a run is a pure function of (workload, mode, seed).

Three execution modes matter:

* baseline: segments run at their declared durations.
* actual speedup: every compute on one line runs faster by a fixed percent.
  This is the ground-truth oracle against which predictions are judged.
* virtual speedup: durations are unchanged; per-thread sampling plus the
  delay counters from the runtime module insert pauses into other threads,
  and the effective duration is recovered by subtracting the inserted delay.

A fourth mode, per-visit, pauses every other runnable thread immediately at
each completion of the chosen line. It exists to check the subtraction
identity exactly: wall(virtual) - visits * delay == wall(actual), with no
sampling noise in the way.

Sampling runs on each thread's execution clock (time actually spent running
compute segments), so a thread is never sampled while blocked or while
sleeping off a pause. Sample instants are strictly periodic per thread; an
optional seeded phase jitter staggers threads so that line selection during
profiling does not always favor the same thread.
"""

from __future__ import annotations

import heapq
import random
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Union

from .engine import EngineConfig, ExperimentRecord, RunTotals, engine_loop
from .model import ProgressKind, ProgressPoint, Scope, SourceLocation, TimeNs
from .runtime import (
    GlobalDelayState,
    LatencySnapshot,
    LineClaim,
    ProgressCounters,
    Sample,
    SampleStats,
    SamplingConfig,
    ThreadDelayState,
    after_block_op,
    compute_delay,
    execute_pause,
    on_thread_create,
    process_thread_samples,
    settle_obligation,
)
from .workload import (
    BarrierWait,
    Compute,
    CondBroadcast,
    CondSignal,
    CondWait,
    InsertedDelay,
    Join,
    LatencyBegin,
    LatencyEnd,
    Lock,
    Progress,
    Spawn,
    Unlock,
    Workload,
)


class DeadlockError(RuntimeError):
    """No runnable thread remains while some threads are still blocked."""

    def __init__(self, blocked: list[str]) -> None:
        self.blocked = blocked
        super().__init__("deadlock: blocked threads " + ", ".join(blocked))


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class Baseline:
    pass


@dataclass(frozen=True)
class ActualSpeedup:
    line: SourceLocation
    pct: int


@dataclass(frozen=True)
class VirtualSpeedup:
    line: SourceLocation
    pct: int
    sampling: SamplingConfig = field(default_factory=SamplingConfig)


@dataclass(frozen=True)
class PerVisitSpeedup:
    line: SourceLocation
    pct: int


Mode = Union[Baseline, ActualSpeedup, VirtualSpeedup, PerVisitSpeedup]


def _scaled_duration(duration: TimeNs, pct: int) -> TimeNs:
    return (duration * (100 - pct) + 50) // 100


@dataclass
class ThreadAccount:
    """Per-thread delay bookkeeping exposed for conservation checks."""

    name: str
    local_delay_count: int
    birth_local_count: int
    pauses_paid: int
    samples_in_selected_line: int
    credits_received: int
    excess_sleep_ns: TimeNs
    obligation_total_ns: TimeNs
    actual_sleep_total_ns: TimeNs


@dataclass
class SimResult:
    """Everything observable from one simulated run."""

    wall_ns: TimeNs
    progress: dict[str, int]
    latency: dict[str, LatencySnapshot]
    line_visits: dict[SourceLocation, int]
    line_exec_ns: dict[SourceLocation, TimeNs]
    line_samples: dict[SourceLocation, int]
    delay_trips: dict[SourceLocation, int]
    delay_exec_ns: dict[SourceLocation, TimeNs]
    inserted_delay_ns: TimeNs
    delay_count: int
    latency_begin_times: dict[str, list[TimeNs]]
    latency_end_times: dict[str, list[TimeNs]]
    thread_accounts: list[ThreadAccount]

    def mean_line_time(self, line: SourceLocation) -> float:
        """Mean executed time per visit of a line, excluding attached delays."""
        visits = self.line_visits.get(line, 0)
        if visits == 0:
            raise ValueError(f"line {line} never ran")
        return self.line_exec_ns.get(line, 0) / visits

    def effective_wall_ns(self) -> TimeNs:
        return self.wall_ns - self.inserted_delay_ns


_RUNNABLE = "runnable"
_BLOCKED = "blocked"
_DONE = "done"


class _Thread:
    __slots__ = (
        "template",
        "label",
        "index",
        "program",
        "pc",
        "state",
        "block_info",
        "exec_ns",
        "next_sample_exec",
        "pending",
        "tstate",
        "work_line",
        "work_remaining",
        "work_duration",
        "work_is_delay",
        "milestone",
        "advance",
        "event_time",
        "version",
        "joiners",
        "end_time",
    )

    def __init__(self, template: str, label: str, index: int, program, tstate: ThreadDelayState):
        self.template = template
        self.label = label
        self.index = index
        self.program = program
        self.pc = 0
        self.state = _RUNNABLE
        self.block_info = ""
        self.exec_ns = 0
        self.next_sample_exec = 0
        self.pending: list[SourceLocation] = []
        self.tstate = tstate
        self.work_line: Optional[SourceLocation] = None
        self.work_remaining = 0
        self.work_duration = 0
        self.work_is_delay = False
        self.milestone = "begin"
        self.advance = 0
        self.event_time = 0
        self.version = 0
        self.joiners: list[_Thread] = []
        self.end_time = 0


class _MutexState:
    __slots__ = ("owner", "queue")

    def __init__(self) -> None:
        self.owner: Optional[_Thread] = None
        self.queue: list[_Thread] = []


class _BarrierState:
    __slots__ = ("size", "arrived")

    def __init__(self, size: int) -> None:
        self.size = size
        self.arrived: list[_Thread] = []


class _CondState:
    """Condition variable with permit memory.

    A signal with no waiter is remembered as a permit and consumed by the
    next wait, so straight-line producer/consumer programs are insensitive
    to signal/wait ordering. A broadcast wakes only current waiters.
    """

    __slots__ = ("permits", "waiters")

    def __init__(self, permits: int) -> None:
        self.permits = permits
        self.waiters: list[tuple[_Thread, str]] = []


_EXACT_SLEEP = lambda ns: ns  # virtual sleeps are exact; no excess accumulates


class Simulator:
    """Event-driven executor for one workload under one mode."""

    def __init__(
        self,
        workload: Workload,
        *,
        sampling: Optional[SamplingConfig] = None,
        sampling_on: bool = False,
        actual: Optional[tuple[SourceLocation, int]] = None,
        pervisit: Optional[tuple[SourceLocation, int]] = None,
        seed: int = 0,
        jitter: bool = False,
        scope: Optional[Scope] = None,
        extra_points: Iterable[ProgressPoint] = (),
    ) -> None:
        self.workload = workload
        self.sampling = sampling or SamplingConfig()
        self.sampling_on = sampling_on
        self.actual = actual
        self.pervisit = pervisit
        self.jitter = jitter
        self._jitter_rng = random.Random(seed ^ 0x5EED5A3D17)
        self.scope = scope or Scope.everything()

        self.now: TimeNs = 0
        self.end_time: TimeNs = 0
        self.ended = False
        self.draining = False
        self._heap: list[tuple[TimeNs, int, int, _Thread]] = []

        self.gstate = GlobalDelayState()
        self.stats = SampleStats()
        self.claim = LineClaim()
        self.counters = ProgressCounters(lambda: self.now)
        for point_id in sorted(workload.progress_ids()):
            self.counters.register(ProgressPoint(point_id, ProgressKind.SOURCE))
        for pair in sorted(workload.latency_pairs()):
            self.counters.register(
                ProgressPoint(f"{pair}.begin", ProgressKind.LATENCY_BEGIN, pair_id=pair)
            )
            self.counters.register(
                ProgressPoint(f"{pair}.end", ProgressKind.LATENCY_END, pair_id=pair)
            )
        for point in extra_points:
            self.counters.register(point)

        self._templates = {t.name: t for t in workload.threads}
        self._index = {t.name: i for i, t in enumerate(workload.threads)}
        self._mutexes = {name: _MutexState() for name in workload.mutexes}
        self._barriers = {name: _BarrierState(n) for name, n in workload.barriers.items()}
        self._condvars = {name: _CondState(n) for name, n in workload.condvars.items()}

        self.live: dict[str, _Thread] = {}
        self.completed: list[_Thread] = []
        self._spawn_counts: dict[str, int] = {}

        self.line_visits: dict[SourceLocation, int] = {}
        self.line_exec_ns: dict[SourceLocation, TimeNs] = {}
        self.delay_trips: dict[SourceLocation, int] = {}
        self.delay_exec_ns: dict[SourceLocation, TimeNs] = {}
        self.latency_begin_times: dict[str, list[TimeNs]] = {}
        self.latency_end_times: dict[str, list[TimeNs]] = {}
        self.pervisit_delay_total: TimeNs = 0

        if pervisit is not None and actual is not None:
            raise ValueError("per-visit and actual speedup modes are exclusive")

        self._spawn(workload.entry, parent=None)

    # ------------------------------------------------------------------
    # scheduling primitives

    def _schedule(self, thread: _Thread, when: TimeNs, milestone: str, advance: TimeNs) -> None:
        thread.version += 1
        thread.milestone = milestone
        thread.advance = advance
        thread.event_time = when
        heapq.heappush(self._heap, (when, thread.index, thread.version, thread))

    def _peek(self) -> Optional[tuple[TimeNs, int, int, _Thread]]:
        while self._heap:
            entry = self._heap[0]
            if entry[3].version != entry[2]:
                heapq.heappop(self._heap)
                continue
            return entry
        return None

    def _pop_dispatch(self) -> None:
        when, _idx, _ver, thread = heapq.heappop(self._heap)
        self.now = when
        self._dispatch(thread, when)

    def _on_heap_empty(self) -> None:
        blocked = sorted(t.label for t in self.live.values() if t.state == _BLOCKED)
        if blocked:
            raise DeadlockError(blocked)
        if self.live:
            raise SimulationError(
                "runnable threads without scheduled events: "
                + ", ".join(sorted(t.label for t in self.live.values()))
            )
        self.ended = True
        self.now = max(self.now, self.end_time)

    def run_to_completion(self) -> None:
        while not self.ended:
            if self._peek() is None:
                self._on_heap_empty()
                break
            self._pop_dispatch()

    def run_until(self, target: TimeNs) -> None:
        """Advance virtual time to `target`, or to program end if sooner."""
        while not self.ended:
            entry = self._peek()
            if entry is None:
                self._on_heap_empty()
                return
            if entry[0] >= target:
                self.now = target
                return
            self._pop_dispatch()

    def run_until_claim(self, deadline: TimeNs) -> Optional[SourceLocation]:
        while not self.ended:
            line = self.claim.peek()
            if line is not None:
                return line
            entry = self._peek()
            if entry is None:
                self._on_heap_empty()
                return None
            if entry[0] >= deadline:
                self.now = deadline
                return None
            self._pop_dispatch()
        return self.claim.peek()

    # ------------------------------------------------------------------
    # thread lifecycle

    def _spawn(self, name: str, parent: Optional[_Thread]) -> None:
        if name in self.live:
            raise SimulationError(f"spawn of already-running thread {name!r}")
        template = self._templates[name]
        generation = self._spawn_counts.get(name, 0) + 1
        self._spawn_counts[name] = generation
        tstate = on_thread_create(parent.tstate) if parent else ThreadDelayState()
        thread = _Thread(
            template=name,
            label=name if generation == 1 else f"{name}#{generation}",
            index=self._index[name],
            program=template.segments,
            tstate=tstate,
        )
        thread.next_sample_exec = self._sample_gap()
        self.live[name] = thread
        self._schedule(thread, self.now, "begin", 0)

    def _sample_gap(self) -> TimeNs:
        """Interval to the next sample on a thread's execution clock.

        Exactly periodic by default. With jitter on, gaps are drawn uniformly
        around the period (mean exactly P), which breaks the lockstep between
        threads that would otherwise hand every line-selection race to the
        same thread.
        """
        period = self.sampling.period_ns
        if not self.jitter:
            return period
        half = period // 2
        return self._jitter_rng.randint(period - half, period + half)

    def _exit_thread(self, thread: _Thread, now: TimeNs) -> None:
        obligation = self._poll(thread, now, force=True)
        obligation += settle_obligation(thread.tstate, self.gstate)
        if obligation > 0:
            execute_pause(thread.tstate, obligation, _EXACT_SLEEP)
            self._schedule(thread, now + obligation, "exit", 0)
            return
        thread.state = _DONE
        thread.version += 1  # cancel any stale event
        thread.end_time = now
        self.end_time = max(self.end_time, now)
        del self.live[thread.template]
        self.completed.append(thread)
        for joiner in thread.joiners:
            joiner.state = _RUNNABLE
            self._schedule(joiner, now, "credit-begin", 0)
        thread.joiners.clear()

    # ------------------------------------------------------------------
    # sample processing

    def _poll(self, thread: _Thread, now: TimeNs, force: bool = False) -> TimeNs:
        """Process pending samples in batches; return the pause owed.

        Full batches are always processed; the leftover partial batch is
        flushed only while draining (cooloff) or when forced (thread exit).
        """
        pending = thread.pending
        batch_size = self.sampling.batch_size
        obligation = 0
        while pending and (len(pending) >= batch_size or self.draining or force):
            take = min(batch_size, len(pending))
            batch = [Sample(thread.label, now, (line,)) for line in pending[:take]]
            del pending[:take]
            obligation += process_thread_samples(
                thread.tstate,
                self.gstate,
                batch,
                self.scope,
                stats=self.stats,
                claim=self.claim,
                counters=self.counters,
            )
        return obligation

    def _pay_before_sync(self, thread: _Thread, now: TimeNs) -> bool:
        """Settle all required delays before a blocking or waking operation.

        Returns True if the thread was rescheduled to sleep first (the same
        segment re-runs after the pause).
        """
        obligation = self._poll(thread, now)
        obligation += settle_obligation(thread.tstate, self.gstate)
        if obligation > 0:
            execute_pause(thread.tstate, obligation, _EXACT_SLEEP)
            self._schedule(thread, now + obligation, "begin", 0)
            return True
        return False

    # ------------------------------------------------------------------
    # per-visit mode

    def _pervisit_hook(self, thread: _Thread, line: SourceLocation, duration: TimeNs, now: TimeNs) -> None:
        assert self.pervisit is not None
        target, pct = self.pervisit
        if line != target:
            return
        delay = duration - _scaled_duration(duration, pct)
        self.pervisit_delay_total += delay
        with self.gstate._lock:
            self.gstate.delay_count += 1
        thread.tstate.local_delay_count += 1
        thread.tstate.samples_in_selected_line += 1
        if delay == 0:
            return
        for other in self.live.values():
            if other is thread or other.state != _RUNNABLE:
                continue
            other.tstate.local_delay_count += 1
            other.tstate.pauses_paid += 1
            other.tstate.obligation_total_ns += delay
            other.tstate.actual_sleep_total_ns += delay
            self._schedule(other, other.event_time + delay, other.milestone, other.advance)

    # ------------------------------------------------------------------
    # segment execution

    def _complete_work(self, thread: _Thread, now: TimeNs) -> None:
        line = thread.work_line
        assert line is not None
        duration = thread.work_duration
        if thread.work_is_delay:
            self.delay_trips[line] = self.delay_trips.get(line, 0) + 1
            self.delay_exec_ns[line] = self.delay_exec_ns.get(line, 0) + duration
        else:
            self.line_visits[line] = self.line_visits.get(line, 0) + 1
            self.line_exec_ns[line] = self.line_exec_ns.get(line, 0) + duration
            if self.pervisit is not None:
                self._pervisit_hook(thread, line, duration, now)
        thread.work_line = None
        thread.pc += 1

    def _dispatch(self, thread: _Thread, now: TimeNs) -> None:
        act = thread.milestone
        advance = thread.advance
        while True:
            if act == "sample":
                thread.exec_ns += advance
                thread.work_remaining -= advance
                thread.next_sample_exec += self._sample_gap()
                assert thread.work_line is not None
                thread.pending.append(thread.work_line)
                obligation = self._poll(thread, now)
                if obligation > 0:
                    execute_pause(thread.tstate, obligation, _EXACT_SLEEP)
                    self._schedule(thread, now + obligation, "work", 0)
                    return
                act, advance = "work", 0

            elif act == "done":
                thread.exec_ns += advance
                thread.work_remaining = 0
                act, advance = "finish-work", 0

            elif act == "work":
                if thread.work_remaining > 0:
                    if self.sampling_on:
                        to_sample = thread.next_sample_exec - thread.exec_ns
                        if to_sample <= thread.work_remaining:
                            self._schedule(thread, now + to_sample, "sample", to_sample)
                            return
                    self._schedule(thread, now + thread.work_remaining, "done", thread.work_remaining)
                    return
                act = "finish-work"

            elif act == "finish-work":
                self._complete_work(thread, now)
                obligation = self._poll(thread, now)
                if obligation > 0:
                    execute_pause(thread.tstate, obligation, _EXACT_SLEEP)
                    self._schedule(thread, now + obligation, "begin", 0)
                    return
                act = "begin"

            elif act == "credit-begin":
                after_block_op(thread.tstate, self.gstate)
                thread.pc += 1
                act = "begin"

            elif act == "begin":
                if thread.pc >= len(thread.program):
                    act = "exit"
                    continue
                outcome = self._begin_segment(thread, now)
                if outcome == "continue":
                    thread.pc += 1
                    self._schedule(thread, now, "begin", 0)
                    return
                if outcome == "work":
                    act, advance = "work", 0
                    continue
                return  # blocked, or rescheduled inside

            elif act == "exit":
                self._exit_thread(thread, now)
                return

            else:  # pragma: no cover - defensive
                raise SimulationError(f"unknown milestone {act!r}")

    def _begin_segment(self, thread: _Thread, now: TimeNs) -> str:
        seg = thread.program[thread.pc]

        if isinstance(seg, (Compute, InsertedDelay)):
            duration = seg.duration
            is_delay = isinstance(seg, InsertedDelay)
            if not is_delay and self.actual is not None and seg.line == self.actual[0]:
                duration = _scaled_duration(duration, self.actual[1])
            thread.work_line = seg.line
            thread.work_duration = duration
            thread.work_remaining = duration
            thread.work_is_delay = is_delay
            if duration == 0:
                # instant visit: account for it without scheduling
                self._complete_work(thread, now)
                self._schedule(thread, now, "begin", 0)
                return "scheduled"
            return "work"

        if isinstance(seg, Progress):
            self.counters.visit(seg.point)
            return "continue"

        if isinstance(seg, LatencyBegin):
            self.counters.visit(f"{seg.pair}.begin")
            self.latency_begin_times.setdefault(seg.pair, []).append(now)
            return "continue"

        if isinstance(seg, LatencyEnd):
            self.counters.visit(f"{seg.pair}.end")
            self.latency_end_times.setdefault(seg.pair, []).append(now)
            return "continue"

        if isinstance(seg, Spawn):
            self._spawn(seg.thread, parent=thread)
            return "continue"

        # Everything below may block this thread or wake another one, so all
        # required delays are executed first; a thread woken by the operation
        # is then safely credited instead of sleeping its own backlog.
        if self._pay_before_sync(thread, now):
            return "scheduled"

        if isinstance(seg, Lock):
            mutex = self._mutexes[seg.mutex]
            if mutex.owner is None:
                mutex.owner = thread
                after_block_op(thread.tstate, self.gstate)
                return "continue"
            mutex.queue.append(thread)
            thread.state = _BLOCKED
            thread.block_info = f"lock {seg.mutex}"
            thread.version += 1
            return "blocked"

        if isinstance(seg, Unlock):
            self._unlock(seg.mutex, thread, now)
            return "continue"

        if isinstance(seg, BarrierWait):
            barrier = self._barriers[seg.barrier]
            barrier.arrived.append(thread)
            if len(barrier.arrived) == barrier.size:
                for waiter in barrier.arrived:
                    if waiter is thread:
                        continue
                    waiter.state = _RUNNABLE
                    self._schedule(waiter, now, "credit-begin", 0)
                barrier.arrived.clear()
                after_block_op(thread.tstate, self.gstate)
                return "continue"
            thread.state = _BLOCKED
            thread.block_info = f"barrier {seg.barrier}"
            thread.version += 1
            return "blocked"

        if isinstance(seg, CondWait):
            cond = self._condvars[seg.condvar]
            if cond.permits > 0:
                cond.permits -= 1
                after_block_op(thread.tstate, self.gstate)
                return "continue"
            self._unlock(seg.mutex, thread, now)
            cond.waiters.append((thread, seg.mutex))
            thread.state = _BLOCKED
            thread.block_info = f"wait {seg.condvar}"
            thread.version += 1
            return "blocked"

        if isinstance(seg, CondSignal):
            cond = self._condvars[seg.condvar]
            if cond.waiters:
                waiter, mutex_name = cond.waiters.pop(0)
                self._hand_mutex(mutex_name, waiter, now)
            else:
                cond.permits += 1
            return "continue"

        if isinstance(seg, CondBroadcast):
            cond = self._condvars[seg.condvar]
            waiters, cond.waiters = cond.waiters, []
            for waiter, mutex_name in waiters:
                self._hand_mutex(mutex_name, waiter, now)
            return "continue"

        if isinstance(seg, Join):
            target = self.live.get(seg.thread)
            if target is not None:
                target.joiners.append(thread)
                thread.state = _BLOCKED
                thread.block_info = f"join {seg.thread}"
                thread.version += 1
                return "blocked"
            if self._spawn_counts.get(seg.thread, 0) > 0:
                after_block_op(thread.tstate, self.gstate)
                return "continue"
            raise SimulationError(
                f"thread {thread.label!r} joins {seg.thread!r} before it was spawned"
            )

        raise SimulationError(f"unhandled segment {seg!r}")  # pragma: no cover

    def _unlock(self, mutex_name: str, thread: _Thread, now: TimeNs) -> None:
        mutex = self._mutexes[mutex_name]
        if mutex.owner is not thread:
            raise SimulationError(f"{thread.label!r} unlocks {mutex_name!r} it does not hold")
        if mutex.queue:
            waiter = mutex.queue.pop(0)
            mutex.owner = waiter
            waiter.state = _RUNNABLE
            self._schedule(waiter, now, "credit-begin", 0)
        else:
            mutex.owner = None

    def _hand_mutex(self, mutex_name: str, waiter: _Thread, now: TimeNs) -> None:
        """Move a woken condition waiter to the mutex it must reacquire."""
        mutex = self._mutexes[mutex_name]
        if mutex.owner is None and not mutex.queue:
            mutex.owner = waiter
            waiter.state = _RUNNABLE
            self._schedule(waiter, now, "credit-begin", 0)
        else:
            mutex.queue.append(waiter)

    # ------------------------------------------------------------------
    # results

    def thread_accounts(self) -> list[ThreadAccount]:
        out = []
        for thread in list(self.completed) + list(self.live.values()):
            t = thread.tstate
            out.append(
                ThreadAccount(
                    name=thread.label,
                    local_delay_count=t.local_delay_count,
                    birth_local_count=t.birth_local_count,
                    pauses_paid=t.pauses_paid,
                    samples_in_selected_line=t.samples_in_selected_line,
                    credits_received=t.credits_received,
                    excess_sleep_ns=t.excess_sleep_ns,
                    obligation_total_ns=t.obligation_total_ns,
                    actual_sleep_total_ns=t.actual_sleep_total_ns,
                )
            )
        return out

    def result(self) -> SimResult:
        if self.pervisit is not None:
            inserted = self.pervisit_delay_total
        else:
            inserted = self.gstate.delay_count * self.gstate.delay_size_ns
        return SimResult(
            wall_ns=self.end_time,
            progress=self.counters.snapshot(),
            latency=self.counters.latency_snapshot(),
            line_visits=dict(self.line_visits),
            line_exec_ns=dict(self.line_exec_ns),
            line_samples=self.stats.counts(),
            delay_trips=dict(self.delay_trips),
            delay_exec_ns=dict(self.delay_exec_ns),
            inserted_delay_ns=inserted,
            delay_count=self.gstate.delay_count,
            latency_begin_times={k: list(v) for k, v in self.latency_begin_times.items()},
            latency_end_times={k: list(v) for k, v in self.latency_end_times.items()},
            thread_accounts=self.thread_accounts(),
        )


def simulate(
    workload: Workload,
    mode: Mode = Baseline(),
    *,
    seed: int = 0,
    jitter: bool = False,
    monitor_sampling: Optional[SamplingConfig] = None,
) -> SimResult:
    """Run a workload to completion under one mode and report what happened.

    `monitor_sampling` turns on sampling without any experiment (every delay
    is zero), for sample-count checks and overhead-free monitoring.
    """
    kwargs: dict = {"seed": seed, "jitter": jitter}
    if isinstance(mode, Baseline):
        if monitor_sampling is not None:
            kwargs.update(sampling=monitor_sampling, sampling_on=True)
    elif isinstance(mode, ActualSpeedup):
        kwargs.update(actual=(mode.line, mode.pct))
        if monitor_sampling is not None:
            kwargs.update(sampling=monitor_sampling, sampling_on=True)
    elif isinstance(mode, VirtualSpeedup):
        kwargs.update(sampling=mode.sampling, sampling_on=True)
    elif isinstance(mode, PerVisitSpeedup):
        kwargs.update(pervisit=(mode.line, mode.pct))
    else:
        raise TypeError(f"unknown mode {mode!r}")

    sim = Simulator(workload, **kwargs)
    if isinstance(mode, VirtualSpeedup):
        sim.gstate.set_experiment(mode.line, compute_delay(mode.pct, mode.sampling))
    sim.run_to_completion()
    if isinstance(mode, VirtualSpeedup):
        sim.gstate.clear_selection()
    return sim.result()


def oracle_speedup(
    workload: Workload, line: SourceLocation, pct: int, progress_id: str
) -> float:
    """Ground truth: program speedup from actually running a line pct faster.

    Measured as the relative drop in the progress period (wall time per
    visit) between the baseline run and the actual-speedup run.
    """
    base = simulate(workload, Baseline())
    visits = base.progress.get(progress_id, 0)
    if visits == 0:
        raise ValueError(f"progress point {progress_id!r} never visited in baseline")
    sped = simulate(workload, ActualSpeedup(line, pct))
    sped_visits = sped.progress.get(progress_id, 0)
    if sped_visits == 0:
        raise ValueError(f"progress point {progress_id!r} never visited under speedup")
    p_base = base.wall_ns / visits
    p_sped = sped.wall_ns / sped_visits
    return 1.0 - p_sped / p_base


class SimHost:
    """Engine host backed by virtual time: waiting runs the event loop."""

    def __init__(self, sim: Simulator) -> None:
        self.sim = sim
        self.gstate = sim.gstate
        self.counters = sim.counters
        self.stats = sim.stats
        self.claim = sim.claim

    def now(self) -> TimeNs:
        return self.sim.now

    def wait(self, duration_ns: TimeNs) -> None:
        self.sim.run_until(self.sim.now + duration_ns)

    def wait_for_line(self, window_ns: TimeNs) -> Optional[SourceLocation]:
        return self.sim.run_until_claim(self.sim.now + window_ns)

    def running(self) -> bool:
        return not self.sim.ended

    def begin_drain(self) -> None:
        self.sim.draining = True

    def end_drain(self) -> None:
        self.sim.draining = False


def profile_simulated(
    workload: Workload,
    config: EngineConfig,
    *,
    jitter: bool = True,
) -> tuple[list[ExperimentRecord], RunTotals, Simulator]:
    """Profile a workload: the full engine and runtime against virtual time.

    Identical inputs give identical record streams. Jitter staggers the
    threads' sampling phases (seeded from the engine seed) so line selection
    is not locked to the earliest-declared thread; turn it off to get
    exactly periodic, phase-aligned sampling.
    """
    seed = config.rng_seed if config.rng_seed is not None else random.SystemRandom().getrandbits(64)
    if config.rng_seed is None:
        config = EngineConfig(
            sampling=config.sampling,
            min_visits=config.min_visits,
            initial_experiment_ns=config.initial_experiment_ns,
            cooloff_ns=config.cooloff_ns,
            fixed_line=config.fixed_line,
            fixed_speedup=config.fixed_speedup,
            rng_seed=seed,
            scope=config.scope,
            selection_window_factor=config.selection_window_factor,
            max_experiments=config.max_experiments,
        )
    sim = Simulator(
        workload,
        sampling=config.sampling,
        sampling_on=True,
        seed=seed,
        jitter=jitter,
        scope=config.scope,
    )
    host = SimHost(sim)
    records: list[ExperimentRecord] = []
    totals = engine_loop(config, host, records.append)
    return records, totals, sim
