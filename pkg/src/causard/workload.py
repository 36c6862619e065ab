"""Simulator workload model and its line-oriented text format.

A workload declares synchronization objects and a set of named threads, each
a straight-line sequence of timed compute segments and synchronization
operations. The first declared thread is the entry thread; all other threads
run only when spawned. The same thread name may be spawned again after it has
been joined, which is how iterated fork/join phases are written.

Format by example::

    mutex m
    barrier phase 4
    condvar items        # optional initial permit count after the name

    thread main:
      repeat 100:
        spawn worker
        compute main.c:12 250us
        join worker
        progress round
    thread worker:
      lock m
      compute worker.c:40 1ms
      unlock m

Durations take ns/us/ms/s suffixes. `#` starts a comment. `repeat N:` blocks
may nest and are expanded at load time.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional, Union

from .model import (
    DurationError,
    LocationError,
    SourceLocation,
    TimeNs,
    parse_duration,
    parse_location,
)


class WorkloadError(ValueError):
    """Malformed or inconsistent workload; message carries the source line."""


@dataclass(frozen=True)
class Compute:
    line: SourceLocation
    duration: TimeNs


@dataclass(frozen=True)
class InsertedDelay:
    """Extra time attached to a source line, with its own trip counter.

    Behaves exactly like compute on the same line, which is what makes
    insert-then-predict-removal accuracy checks possible.
    """

    line: SourceLocation
    duration: TimeNs


@dataclass(frozen=True)
class Lock:
    mutex: str


@dataclass(frozen=True)
class Unlock:
    mutex: str


@dataclass(frozen=True)
class BarrierWait:
    barrier: str


@dataclass(frozen=True)
class CondWait:
    condvar: str
    mutex: str


@dataclass(frozen=True)
class CondSignal:
    condvar: str


@dataclass(frozen=True)
class CondBroadcast:
    condvar: str


@dataclass(frozen=True)
class Spawn:
    thread: str


@dataclass(frozen=True)
class Join:
    thread: str


@dataclass(frozen=True)
class Progress:
    point: str


@dataclass(frozen=True)
class LatencyBegin:
    pair: str


@dataclass(frozen=True)
class LatencyEnd:
    pair: str


Segment = Union[
    Compute,
    InsertedDelay,
    Lock,
    Unlock,
    BarrierWait,
    CondWait,
    CondSignal,
    CondBroadcast,
    Spawn,
    Join,
    Progress,
    LatencyBegin,
    LatencyEnd,
]


@dataclass(frozen=True)
class ThreadProgram:
    name: str
    segments: tuple[Segment, ...]


@dataclass(frozen=True)
class Workload:
    threads: tuple[ThreadProgram, ...]
    mutexes: tuple[str, ...] = ()
    barriers: dict[str, int] = field(default_factory=dict)
    condvars: dict[str, int] = field(default_factory=dict)  # name -> initial permits

    @property
    def entry(self) -> str:
        return self.threads[0].name

    def thread(self, name: str) -> ThreadProgram:
        for t in self.threads:
            if t.name == name:
                return t
        raise KeyError(name)

    def lines(self) -> set[SourceLocation]:
        out: set[SourceLocation] = set()
        for t in self.threads:
            for seg in t.segments:
                if isinstance(seg, (Compute, InsertedDelay)):
                    out.add(seg.line)
        return out

    def progress_ids(self) -> set[str]:
        out: set[str] = set()
        for t in self.threads:
            for seg in t.segments:
                if isinstance(seg, Progress):
                    out.add(seg.point)
        return out

    def latency_pairs(self) -> set[str]:
        out: set[str] = set()
        for t in self.threads:
            for seg in t.segments:
                if isinstance(seg, (LatencyBegin, LatencyEnd)):
                    out.add(seg.pair)
        return out

    def with_delay_on_line(self, line: SourceLocation, delay: TimeNs) -> "Workload":
        """Append an inserted delay after every compute on the given line."""
        threads = []
        for t in self.threads:
            segs: list[Segment] = []
            for seg in t.segments:
                segs.append(seg)
                if isinstance(seg, Compute) and seg.line == line:
                    segs.append(InsertedDelay(line, delay))
            threads.append(ThreadProgram(t.name, tuple(segs)))
        return Workload(
            threads=tuple(threads),
            mutexes=self.mutexes,
            barriers=dict(self.barriers),
            condvars=dict(self.condvars),
        )


@dataclass
class _Line:
    number: int
    indent: int
    tokens: list[str]


def _tokenize(text: str) -> Iterator[_Line]:
    for number, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0].rstrip()
        if not body.strip():
            continue
        indent = len(body) - len(body.lstrip(" "))
        if "\t" in body[:indent]:
            raise WorkloadError(f"line {number}: indent with spaces, not tabs")
        yield _Line(number, indent, body.split())


def _err(line: _Line, message: str) -> WorkloadError:
    return WorkloadError(f"line {line.number}: {message}")


def _parse_block(lines: list[_Line], start: int, indent: int) -> tuple[list[Segment], int]:
    """Parse segment lines at exactly `indent`, expanding repeat blocks."""
    segments: list[Segment] = []
    i = start
    while i < len(lines):
        line = lines[i]
        if line.indent < indent:
            break
        if line.indent > indent:
            raise _err(line, "unexpected indent")
        head = line.tokens[0]
        if head == "repeat":
            if len(line.tokens) != 2 or not line.tokens[1].endswith(":"):
                raise _err(line, "expected: repeat <count>:")
            try:
                count = int(line.tokens[1][:-1])
            except ValueError:
                raise _err(line, f"bad repeat count {line.tokens[1][:-1]!r}") from None
            if count < 0:
                raise _err(line, "repeat count must be >= 0")
            if i + 1 >= len(lines) or lines[i + 1].indent <= indent:
                raise _err(line, "empty repeat block")
            body, i = _parse_block(lines, i + 1, lines[i + 1].indent)
            segments.extend(body * count)
        else:
            segments.append(_parse_segment(line))
            i += 1
    return segments, i


def _parse_segment(line: _Line) -> Segment:
    tokens = line.tokens
    head, args = tokens[0], tokens[1:]

    def need(n: int, usage: str) -> None:
        if len(args) != n:
            raise _err(line, f"expected: {usage}")

    try:
        if head == "compute":
            need(2, "compute <file:line> <duration>")
            return Compute(parse_location(args[0]), parse_duration(args[1]))
        if head == "delay":
            need(2, "delay <file:line> <duration>")
            return InsertedDelay(parse_location(args[0]), parse_duration(args[1]))
    except (LocationError, DurationError) as exc:
        raise _err(line, str(exc)) from None

    if head == "lock":
        need(1, "lock <mutex>")
        return Lock(args[0])
    if head == "unlock":
        need(1, "unlock <mutex>")
        return Unlock(args[0])
    if head == "barrier":
        need(1, "barrier <barrier>")
        return BarrierWait(args[0])
    if head == "wait":
        need(2, "wait <condvar> <mutex>")
        return CondWait(args[0], args[1])
    if head == "signal":
        need(1, "signal <condvar>")
        return CondSignal(args[0])
    if head == "broadcast":
        need(1, "broadcast <condvar>")
        return CondBroadcast(args[0])
    if head == "spawn":
        need(1, "spawn <thread>")
        return Spawn(args[0])
    if head == "join":
        need(1, "join <thread>")
        return Join(args[0])
    if head == "progress":
        need(1, "progress <id>")
        return Progress(args[0])
    if head == "latency_begin":
        need(1, "latency_begin <id>")
        return LatencyBegin(args[0])
    if head == "latency_end":
        need(1, "latency_end <id>")
        return LatencyEnd(args[0])
    raise _err(line, f"unknown segment {head!r}")


def load_workload(text: str) -> Workload:
    """Parse and validate workload text; raise WorkloadError with a location."""
    lines = list(_tokenize(text))
    mutexes: list[str] = []
    barriers: dict[str, int] = {}
    condvars: dict[str, int] = {}
    threads: list[ThreadProgram] = []
    seen_thread_names: set[str] = set()

    i = 0
    while i < len(lines):
        line = lines[i]
        if line.indent != 0:
            raise _err(line, "unexpected indent at top level")
        head = line.tokens[0]
        if head == "mutex":
            if len(line.tokens) != 2:
                raise _err(line, "expected: mutex <name>")
            mutexes.append(line.tokens[1])
            i += 1
        elif head == "barrier":
            if len(line.tokens) != 3:
                raise _err(line, "expected: barrier <name> <arrival count>")
            try:
                count = int(line.tokens[2])
            except ValueError:
                raise _err(line, f"bad arrival count {line.tokens[2]!r}") from None
            if count < 1:
                raise _err(line, "barrier arrival count must be >= 1")
            barriers[line.tokens[1]] = count
            i += 1
        elif head == "condvar":
            if len(line.tokens) not in (2, 3):
                raise _err(line, "expected: condvar <name> [initial permits]")
            permits = 0
            if len(line.tokens) == 3:
                try:
                    permits = int(line.tokens[2])
                except ValueError:
                    raise _err(line, f"bad permit count {line.tokens[2]!r}") from None
                if permits < 0:
                    raise _err(line, "initial permits must be >= 0")
            condvars[line.tokens[1]] = permits
            i += 1
        elif head == "thread":
            if len(line.tokens) != 2 or not line.tokens[1].endswith(":"):
                raise _err(line, "expected: thread <name>:")
            name = line.tokens[1][:-1]
            if not name:
                raise _err(line, "thread name must be non-empty")
            if name in seen_thread_names:
                raise _err(line, f"thread {name!r} declared twice")
            seen_thread_names.add(name)
            if i + 1 >= len(lines) or lines[i + 1].indent == 0:
                segments: list[Segment] = []
                i += 1
            else:
                segments, i = _parse_block(lines, i + 1, lines[i + 1].indent)
            threads.append(ThreadProgram(name, tuple(segments)))
        else:
            raise _err(line, f"unknown declaration {head!r}")

    if not threads:
        raise WorkloadError("workload declares no threads")

    workload = Workload(
        threads=tuple(threads),
        mutexes=tuple(mutexes),
        barriers=barriers,
        condvars=condvars,
    )
    _validate(workload)
    return workload


def _validate(workload: Workload) -> None:
    mutexes = set(workload.mutexes)
    spawned: set[str] = set()
    names = {t.name for t in workload.threads}

    for t in workload.threads:
        for seg in t.segments:
            if isinstance(seg, Spawn):
                spawned.add(seg.thread)

    for t in workload.threads:
        held: list[str] = []
        for seg in t.segments:
            if isinstance(seg, (Lock, Unlock)):
                if seg.mutex not in mutexes:
                    raise WorkloadError(
                        f"thread {t.name!r}: undeclared mutex {seg.mutex!r}"
                    )
            if isinstance(seg, Lock):
                held.append(seg.mutex)
            elif isinstance(seg, Unlock):
                if not held or held[-1] != seg.mutex:
                    raise WorkloadError(
                        f"thread {t.name!r}: unlock of {seg.mutex!r} without a matching lock"
                    )
                held.pop()
            elif isinstance(seg, BarrierWait):
                if seg.barrier not in workload.barriers:
                    raise WorkloadError(
                        f"thread {t.name!r}: undeclared barrier {seg.barrier!r}"
                    )
            elif isinstance(seg, CondWait):
                if seg.condvar not in workload.condvars:
                    raise WorkloadError(
                        f"thread {t.name!r}: undeclared condvar {seg.condvar!r}"
                    )
                if seg.mutex not in mutexes:
                    raise WorkloadError(
                        f"thread {t.name!r}: undeclared mutex {seg.mutex!r}"
                    )
                if not held or held[-1] != seg.mutex:
                    raise WorkloadError(
                        f"thread {t.name!r}: wait on {seg.condvar!r} without holding {seg.mutex!r}"
                    )
            elif isinstance(seg, (CondSignal, CondBroadcast)):
                if seg.condvar not in workload.condvars:
                    raise WorkloadError(
                        f"thread {t.name!r}: undeclared condvar {seg.condvar!r}"
                    )
            elif isinstance(seg, Spawn):
                if seg.thread not in names:
                    raise WorkloadError(
                        f"thread {t.name!r}: spawn of undeclared thread {seg.thread!r}"
                    )
                if seg.thread == workload.entry:
                    raise WorkloadError(
                        f"thread {t.name!r}: entry thread {seg.thread!r} cannot be spawned"
                    )
            elif isinstance(seg, Join):
                if seg.thread not in names:
                    raise WorkloadError(
                        f"thread {t.name!r}: join of undeclared thread {seg.thread!r}"
                    )
                if seg.thread not in spawned:
                    raise WorkloadError(
                        f"thread {t.name!r}: join of never-spawned thread {seg.thread!r}"
                    )
        if held:
            raise WorkloadError(
                f"thread {t.name!r}: ends while still holding {held[-1]!r}"
            )
