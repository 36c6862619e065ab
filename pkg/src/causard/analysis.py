"""Turning raw experiment records into a causal profile.

A causal profile answers, per source line: if this line ran x% faster, how
much faster would the whole program get? Each curve point comes from the
relative change in the progress-point period between experiments at some
speedup and the line's own baseline experiments. Lines whose activity is
confined to a phase of the run would be overstated by that ratio alone, so
every measured speedup is scaled by the phase-correction factor
(t_obs / s_obs) * (s / T): the line's sampling rate over the whole run
relative to its rate inside its own experiments.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .engine import ExperimentRecord, RunTotals
from .model import SourceLocation, TimeNs


class InstabilityError(RuntimeError):
    """Arrivals outrun completions: latency is growing without bound."""


@dataclass
class MergedCell:
    """All experiments with the same (line, speedup), combined additively."""

    visits: dict[str, int] = field(default_factory=dict)
    effective_ns: TimeNs = 0
    wall_ns: TimeNs = 0
    selected_samples: int = 0
    records: list[ExperimentRecord] = field(default_factory=list)

    def add(self, record: ExperimentRecord) -> None:
        for point, delta in record.progress_deltas.items():
            self.visits[point] = self.visits.get(point, 0) + delta
        self.effective_ns += record.effective_ns
        self.wall_ns += record.wall_ns
        self.selected_samples += record.selected_line_samples
        self.records.append(record)


def merge_records(
    records: Iterable[ExperimentRecord],
) -> dict[tuple[SourceLocation, int], MergedCell]:
    """Combine experiments sharing (line, speedup): order-independent sums.

    Records from separate runs merge exactly like records from one long run,
    which is how profiles from repeated runs are pooled.
    """
    merged: dict[tuple[SourceLocation, int], MergedCell] = {}
    for record in records:
        cell = merged.setdefault((record.line, record.speedup_pct), MergedCell())
        cell.add(record)
    return merged


def program_speedup(p0_ns: float, ps_ns: float) -> float:
    """Relative drop in the progress period; negative means a slowdown."""
    if p0_ns <= 0 or ps_ns <= 0:
        raise ValueError("progress periods must be positive")
    return 1.0 - ps_ns / p0_ns


def phase_correct(raw: float, s_obs: int, t_obs_ns: TimeNs, s: int, total_ns: TimeNs) -> float:
    """Scale a measured speedup down to its whole-run effect.

    The factor estimates the fraction of total runtime during which the line
    was actually running; for a line active the whole run the factor is 1.
    """
    if s_obs <= 0:
        raise ValueError("uncorrectable: no selected-line samples in the experiment")
    if total_ns <= 0:
        raise ValueError("total runtime must be positive")
    return raw * (t_obs_ns / s_obs) * (s / total_ns)


@dataclass(frozen=True)
class LatencyEstimate:
    mean_in_flight: float
    arrival_rate_per_s: float
    latency_ns: float


def estimate_latency(
    begin_visits: int,
    end_visits: int,
    mean_in_flight: float,
    window_ns: TimeNs,
    *,
    rel_tolerance: float = 0.05,
    min_backlog: int = 2,
) -> LatencyEstimate:
    """Little's law: latency = mean in-flight count / arrival rate.

    Valid only while the system keeps up; a window where completions fall
    behind arrivals beyond tolerance raises InstabilityError rather than
    reporting a meaningless number.
    """
    if window_ns <= 0:
        raise ValueError("window must be positive")
    if begin_visits <= 0:
        raise ValueError("no arrivals in window: latency undefined")
    backlog_growth = begin_visits - end_visits
    if backlog_growth > max(min_backlog, rel_tolerance * begin_visits):
        raise InstabilityError(
            f"unstable: {begin_visits} arrivals but only {end_visits} completions in window"
        )
    arrivals_per_ns = begin_visits / window_ns
    latency_ns = mean_in_flight / arrivals_per_ns if arrivals_per_ns > 0 else 0.0
    return LatencyEstimate(
        mean_in_flight=mean_in_flight,
        arrival_rate_per_s=arrivals_per_ns * 1e9,
        latency_ns=latency_ns,
    )


@dataclass
class CurvePoint:
    speedup_pct: int
    program_speedup: float  # fraction, phase-corrected, unclamped
    raw_speedup: float
    stderr: float
    visits: int
    experiments: int


@dataclass
class LineProfile:
    """One line's speedup curve against one progress point."""

    line: SourceLocation
    progress_point: str
    baseline_period_ns: float
    points: dict[int, tuple[int, TimeNs]]  # pct -> (visits, effective ns)
    curve: list[CurvePoint]
    uncorrectable_points: int = 0
    slope: float = 0.0
    classification: str = "flat"
    low_confidence: bool = False

    def max_program_speedup(self) -> float:
        return max((p.program_speedup for p in self.curve), default=0.0)

    def curve_value_at(self, fraction: float) -> float:
        """Linear interpolation of the corrected curve at a line-speedup fraction."""
        pts = sorted((p.speedup_pct / 100.0, p.program_speedup) for p in self.curve)
        if not pts:
            raise ValueError("empty curve")
        if fraction <= pts[0][0]:
            return pts[0][1]
        for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
            if fraction <= x1:
                if x1 == x0:
                    return y1
                return y0 + (y1 - y0) * (fraction - x0) / (x1 - x0)
        return pts[-1][1]


@dataclass(frozen=True)
class ProfileOptions:
    min_distinct_speedups: int = 5
    contention_slope: float = -0.05
    flat_band: float = 0.05
    bootstrap_resamples: int = 0  # 0: plain standard error across experiments
    bootstrap_seed: int = 0


def _stderr(estimates: Sequence[float], options: ProfileOptions) -> float:
    k = len(estimates)
    if k < 2:
        return 0.0
    if options.bootstrap_resamples > 0:
        rng = random.Random(options.bootstrap_seed)
        means = []
        for _ in range(options.bootstrap_resamples):
            draw = [estimates[rng.randrange(k)] for _ in range(k)]
            means.append(sum(draw) / k)
        grand = sum(means) / len(means)
        return math.sqrt(sum((m - grand) ** 2 for m in means) / (len(means) - 1))
    mean = sum(estimates) / k
    var = sum((e - mean) ** 2 for e in estimates) / (k - 1)
    return math.sqrt(var / k)


def build_profiles(
    merged: dict[tuple[SourceLocation, int], MergedCell],
    totals: RunTotals,
    options: ProfileOptions = ProfileOptions(),
) -> list[LineProfile]:
    """Group merged cells into per-(line, progress point) speedup curves.

    Lines without a usable 0% baseline are dropped outright: without the
    baseline there is nothing to normalize against. Lines measured at fewer
    distinct speedup amounts than the threshold are dropped as uninformative.
    Points whose experiments saw zero visits are omitted, never fabricated.
    """
    lines = sorted({line for line, _ in merged}, key=str)
    points_seen = sorted({p for cell in merged.values() for p in cell.visits})
    profiles: list[LineProfile] = []

    for line in lines:
        cells = {pct: cell for (l, pct), cell in merged.items() if l == line}
        if 0 not in cells:
            continue
        line_samples_total = totals.line_samples.get(str(line), 0)
        for point in points_seen:
            base = cells[0]
            base_visits = base.visits.get(point, 0)
            if base_visits <= 0:
                continue
            p0 = base.effective_ns / base_visits
            if p0 <= 0:
                continue

            profile_points: dict[int, tuple[int, TimeNs]] = {}
            curve: list[CurvePoint] = []
            uncorrectable = 0
            for pct in sorted(cells):
                cell = cells[pct]
                visits = cell.visits.get(point, 0)
                if visits <= 0:
                    continue
                profile_points[pct] = (visits, cell.effective_ns)
                if pct == 0:
                    # the curve is anchored at (0, 0) by construction
                    curve.append(CurvePoint(0, 0.0, 0.0, 0.0, visits, len(cell.records)))
                    continue
                ps = cell.effective_ns / visits
                raw = program_speedup(p0, ps)
                if cell.selected_samples <= 0:
                    uncorrectable += 1
                    continue
                # Both ratios use effective time: sampling follows execution,
                # so inserted delays must not stretch one side of the factor.
                factor = (cell.effective_ns / cell.selected_samples) * (
                    line_samples_total / totals.effective_runtime_ns
                )
                corrected = raw * factor
                per_record = []
                for record in cell.records:
                    v = record.progress_deltas.get(point, 0)
                    if v <= 0 or record.effective_ns <= 0:
                        continue
                    per_record.append(program_speedup(p0, record.effective_ns / v) * factor)
                curve.append(
                    CurvePoint(
                        speedup_pct=pct,
                        program_speedup=corrected,
                        raw_speedup=raw,
                        stderr=_stderr(per_record, options),
                        visits=visits,
                        experiments=len(cell.records),
                    )
                )

            if len(profile_points) < options.min_distinct_speedups:
                continue
            if len(curve) < 2:
                continue
            profiles.append(
                LineProfile(
                    line=line,
                    progress_point=point,
                    baseline_period_ns=p0,
                    points=profile_points,
                    curve=curve,
                    uncorrectable_points=uncorrectable,
                )
            )
    return profiles


def ols_slope(xs: Sequence[float], ys: Sequence[float]) -> float:
    n = len(xs)
    if n < 2:
        raise ValueError("need at least two points for a slope")
    mean_x = sum(xs) / n
    mean_y = sum(ys) / n
    sxx = sum((x - mean_x) ** 2 for x in xs)
    if sxx == 0:
        return 0.0
    sxy = sum((x - mean_x) * (y - mean_y) for x, y in zip(xs, ys))
    return sxy / sxx


def rank_lines(
    profiles: Iterable[LineProfile], options: ProfileOptions = ProfileOptions()
) -> list[LineProfile]:
    """Order profiles by regression slope, steepest payoff first.

    A clearly negative slope is the contention signature: making that line
    faster makes the program slower, because the line interferes with the
    critical path.
    """
    ranked = []
    for profile in profiles:
        xs = [p.speedup_pct / 100.0 for p in profile.curve]
        ys = [p.program_speedup for p in profile.curve]
        profile.slope = ols_slope(xs, ys)
        profile.low_confidence = len(profile.curve) <= 2
        if profile.slope <= options.contention_slope:
            profile.classification = "contention"
        elif abs(profile.slope) < options.flat_band:
            profile.classification = "flat"
        else:
            profile.classification = "speedup-opportunity"
        ranked.append(profile)
    ranked.sort(key=lambda p: (-p.slope, str(p.line), p.progress_point))
    return ranked
