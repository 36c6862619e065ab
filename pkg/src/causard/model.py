"""Shared domain types: source locations, scope filters, time units, progress points.

Everything in this module is an immutable value, safe to share between
threads. Time is integer nanoseconds throughout the package; there is no
floating-point time anywhere in the bookkeeping.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum

TimeNs = int

MS = 1_000_000
US = 1_000
SECOND = 1_000_000_000

SPEEDUP_STEP = 5
SPEEDUP_CHOICES = tuple(range(0, 101, SPEEDUP_STEP))
NONZERO_SPEEDUPS = SPEEDUP_CHOICES[1:]


class LocationError(ValueError):
    """Raised for malformed "file:line" strings or invalid location fields."""


class DurationError(ValueError):
    """Raised for malformed duration strings."""


def validate_speedup_pct(value: int) -> int:
    """Check that a speedup percentage is a multiple of 5 in [0, 100]."""
    if not isinstance(value, int) or isinstance(value, bool):
        raise ValueError(f"speedup percent must be an integer, got {value!r}")
    if value < 0 or value > 100 or value % SPEEDUP_STEP != 0:
        raise ValueError(
            f"speedup percent must be a multiple of {SPEEDUP_STEP} in [0, 100], got {value}"
        )
    return value


@dataclass(frozen=True)
class SourceLocation:
    """A profilable source line, identified as an exact (file, line) pair.

    File identity is exact string comparison after trimming surrounding
    whitespace; there is no path normalization, so the profiler never
    guesses about aliasing. The canonical textual form is "file:line".
    """

    file: str
    line: int

    def __post_init__(self) -> None:
        trimmed = self.file.strip() if isinstance(self.file, str) else ""
        if not trimmed:
            raise LocationError(f"source location needs a non-empty file, got {self.file!r}")
        if trimmed != self.file:
            object.__setattr__(self, "file", trimmed)
        if not isinstance(self.line, int) or isinstance(self.line, bool) or self.line < 1:
            raise LocationError(f"line numbers start at 1, got {self.line!r}")

    def __str__(self) -> str:
        return f"{self.file}:{self.line}"


def parse_location(text: str) -> SourceLocation:
    """Parse the canonical "file:line" form used by flags, profiles, and reports."""
    file, sep, line_text = text.rpartition(":")
    if not sep or not file.strip():
        raise LocationError(f"expected <file>:<line>, got {text!r}")
    try:
        line = int(line_text)
    except ValueError:
        raise LocationError(f"bad line number in {text!r}") from None
    if line < 1:
        raise LocationError(f"line numbers start at 1, got {text!r}")
    return SourceLocation(file, line)


def _compile_glob(pattern: str) -> re.Pattern[str]:
    # '**' crosses path separators, '*' stays inside one segment;
    # everything else is literal.
    parts: list[str] = []
    i = 0
    while i < len(pattern):
        if pattern.startswith("**", i):
            parts.append(".*")
            i += 2
        elif pattern[i] == "*":
            parts.append("[^/]*")
            i += 1
        else:
            parts.append(re.escape(pattern[i]))
            i += 1
    return re.compile("".join(parts) + r"\Z")


@dataclass(frozen=True)
class Scope:
    """Glob patterns over file paths restricting which lines experiments target.

    An empty pattern list matches nothing. Matching is deterministic and
    purely textual.
    """

    patterns: tuple[str, ...] = ()
    _regexes: tuple[re.Pattern[str], ...] = field(
        init=False, repr=False, compare=False, default=()
    )
    _cache: dict = field(init=False, repr=False, compare=False, default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "patterns", tuple(self.patterns))
        object.__setattr__(self, "_regexes", tuple(_compile_glob(p) for p in self.patterns))

    @staticmethod
    def everything() -> "Scope":
        """The default scope: every marked region of the program itself."""
        return Scope(("**",))

    def matches(self, path: str) -> bool:
        # memoized: sampling asks about the same handful of paths constantly
        hit = self._cache.get(path)
        if hit is None:
            hit = any(rx.match(path) is not None for rx in self._regexes)
            self._cache[path] = hit
        return hit


def in_scope(loc: SourceLocation, scope: Scope) -> bool:
    """True iff the location's file matches at least one scope pattern."""
    return scope.matches(loc.file)


class ProgressKind(Enum):
    SOURCE = "source"
    SAMPLED = "sampled"
    LATENCY_BEGIN = "latency-begin"
    LATENCY_END = "latency-end"


@dataclass(frozen=True)
class ProgressPoint:
    """Declaration of a progress point.

    Source points count explicit visits; sampled points count attributed
    samples on a location instead. Latency begin/end points come in pairs
    sharing a pair_id, from which mean latency is derived by Little's law.
    """

    id: str
    kind: ProgressKind = ProgressKind.SOURCE
    pair_id: str | None = None
    location: SourceLocation | None = None

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("progress point id must be non-empty")
        latency = self.kind in (ProgressKind.LATENCY_BEGIN, ProgressKind.LATENCY_END)
        if latency and not self.pair_id:
            raise ValueError(f"latency progress point {self.id!r} needs a pair_id")
        if self.kind is ProgressKind.SAMPLED and self.location is None:
            raise ValueError(f"sampled progress point {self.id!r} needs a location")


_DURATION_RE = re.compile(r"\A\s*(\d+(?:\.\d+)?)\s*(ns|us|ms|s)\s*\Z")
_UNIT_NS = {"ns": 1, "us": US, "ms": MS, "s": SECOND}


def parse_duration(text: str) -> TimeNs:
    """Parse a duration with an ns/us/ms/s suffix into integer nanoseconds."""
    m = _DURATION_RE.match(text)
    if not m:
        raise DurationError(f"expected <number><ns|us|ms|s>, got {text!r}")
    value, unit = m.group(1), m.group(2)
    scale = _UNIT_NS[unit]
    if "." in value:
        whole, frac = value.split(".", 1)
        ns = int(whole) * scale
        rem = int(frac) * scale
        divisor = 10 ** len(frac)
        if rem % divisor != 0:
            raise DurationError(f"{text!r} is not a whole number of nanoseconds")
        ns += rem // divisor
    else:
        ns = int(value) * scale
    return ns


def format_duration(ns: TimeNs) -> str:
    """Render nanoseconds with the largest exact unit (inverse of parse_duration)."""
    for unit, scale in (("s", SECOND), ("ms", MS), ("us", US)):
        if ns != 0 and ns % scale == 0:
            return f"{ns // scale}{unit}"
    return f"{ns}ns"
