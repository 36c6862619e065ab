"""Rendering causal profiles: ranked text tables, tidy CSV, JSON, and SVG plots.

Output is deterministic byte-for-byte given the same input: floats are
formatted with fixed precision and every mapping is emitted in sorted order.
Curve values are clamped to [-100%, +100%] for display only; CSV and JSON
carry the unclamped data.
"""

from __future__ import annotations

import io
import json
from typing import Iterable, Optional

from .analysis import LineProfile, estimate_latency, InstabilityError
from .engine import RunTotals

FORMATS = ("text", "json", "csv", "svg")


def render_report(
    profiles: list[LineProfile],
    fmt: str,
    totals: Optional[RunTotals] = None,
) -> bytes:
    if fmt == "text":
        return _render_text(profiles, totals).encode()
    if fmt == "csv":
        return _render_csv(profiles).encode()
    if fmt == "json":
        return _render_json(profiles, totals).encode()
    if fmt == "svg":
        return _render_svg(profiles).encode()
    raise ValueError(f"unknown report format {fmt!r} (choose from {', '.join(FORMATS)})")


def _clamp(fraction: float) -> float:
    return max(-1.0, min(1.0, fraction))


def _latency_lines(totals: RunTotals) -> list[str]:
    out = []
    for pair, delta in sorted(totals.latency_totals.items()):
        window = totals.effective_runtime_ns
        try:
            est = estimate_latency(
                delta.begin, delta.end, delta.area_ns / window if window else 0.0, window
            )
            out.append(
                f"latency {pair}: mean {est.latency_ns / 1e6:.3f} ms "
                f"(arrival rate {est.arrival_rate_per_s:.2f}/s, in flight {est.mean_in_flight:.3f})"
            )
        except (InstabilityError, ValueError) as exc:
            out.append(f"latency {pair}: {exc}")
    return out


def _render_text(profiles: list[LineProfile], totals: Optional[RunTotals]) -> str:
    if not profiles:
        lines = ["no experiments"]
        if totals is not None:
            lines.append(f"(run recorded {totals.experiments} experiments, seed {totals.seed})")
        return "\n".join(lines) + "\n"

    header = f"{'rank':>4}  {'line':<28} {'progress':<12} {'slope':>8} {'max':>8}  class"
    rows = [header, "-" * len(header)]
    for rank, profile in enumerate(profiles, start=1):
        max_speedup = _clamp(profile.max_program_speedup())
        flags = " (low confidence)" if profile.low_confidence else ""
        rows.append(
            f"{rank:>4}  {str(profile.line):<28} {profile.progress_point:<12} "
            f"{profile.slope:>8.3f} {100 * max_speedup:>7.2f}%  {profile.classification}{flags}"
        )
    if totals is not None:
        rows.append("")
        rows.append(
            f"experiments: {totals.experiments}, selection timeouts: "
            f"{totals.selection_timeouts}, seed: {totals.seed}"
        )
        rows.extend(_latency_lines(totals))
    return "\n".join(rows) + "\n"


def _render_csv(profiles: list[LineProfile]) -> str:
    out = io.StringIO()
    out.write("line,progress_point,speedup_pct,program_speedup,stderr,visits,experiments\n")
    for profile in profiles:
        for point in sorted(profile.curve, key=lambda p: p.speedup_pct):
            out.write(
                f"{profile.line},{profile.progress_point},{point.speedup_pct},"
                f"{point.program_speedup:.6f},{point.stderr:.6f},{point.visits},{point.experiments}\n"
            )
    return out.getvalue()


def _render_json(profiles: list[LineProfile], totals: Optional[RunTotals]) -> str:
    doc: dict = {
        "profiles": [
            {
                "line": str(p.line),
                "progress_point": p.progress_point,
                "baseline_period_ns": round(p.baseline_period_ns, 3),
                "slope": round(p.slope, 6),
                "classification": p.classification,
                "low_confidence": p.low_confidence,
                "uncorrectable_points": p.uncorrectable_points,
                "curve": [
                    {
                        "speedup_pct": c.speedup_pct,
                        "program_speedup": round(c.program_speedup, 6),
                        "raw_speedup": round(c.raw_speedup, 6),
                        "stderr": round(c.stderr, 6),
                        "visits": c.visits,
                        "experiments": c.experiments,
                    }
                    for c in sorted(p.curve, key=lambda c: c.speedup_pct)
                ],
            }
            for p in profiles
        ]
    }
    if totals is not None:
        doc["totals"] = {
            "effective_runtime_ns": totals.effective_runtime_ns,
            "experiments": totals.experiments,
            "selection_timeouts": totals.selection_timeouts,
            "seed": totals.seed,
        }
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


_PLOT_W, _PLOT_H = 420, 180
_MARGIN_L, _MARGIN_R, _MARGIN_T, _MARGIN_B = 56, 16, 28, 34


def _render_svg(profiles: list[LineProfile]) -> str:
    """One speedup-curve panel per profile, stacked vertically in one document."""
    panel_h = _MARGIN_T + _PLOT_H + _MARGIN_B
    width = _MARGIN_L + _PLOT_W + _MARGIN_R
    height = max(1, len(profiles)) * panel_h
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="monospace" font-size="11">'
    ]
    if not profiles:
        parts.append(f'<text x="{width / 2:.1f}" y="{height / 2:.1f}" '
                     'text-anchor="middle">no experiments</text>')
    for i, profile in enumerate(profiles):
        parts.append(_render_panel(profile, i * panel_h))
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _render_panel(profile: LineProfile, top: float) -> str:
    pts = sorted(profile.curve, key=lambda p: p.speedup_pct)
    ys = [_clamp(p.program_speedup) for p in pts]
    hi = max(0.05, max(ys + [_clamp(y + p.stderr) for y, p in zip(ys, pts)]))
    lo = min(-0.05, min(ys + [_clamp(y - p.stderr) for y, p in zip(ys, pts)]))

    def sx(pct: float) -> float:
        return _MARGIN_L + _PLOT_W * pct / 100.0

    def sy(v: float) -> float:
        return top + _MARGIN_T + _PLOT_H * (hi - v) / (hi - lo)

    out = [
        f'<g><text x="{_MARGIN_L}" y="{top + 16:.1f}">{profile.line} '
        f'[{profile.progress_point}] slope {profile.slope:.3f} ({profile.classification})</text>'
    ]
    # axes and the zero line
    out.append(
        f'<rect x="{_MARGIN_L}" y="{top + _MARGIN_T:.1f}" width="{_PLOT_W}" '
        f'height="{_PLOT_H}" fill="none" stroke="#999"/>'
    )
    zero_y = sy(0.0)
    out.append(
        f'<line x1="{_MARGIN_L}" y1="{zero_y:.1f}" x2="{_MARGIN_L + _PLOT_W}" '
        f'y2="{zero_y:.1f}" stroke="#ccc"/>'
    )
    for pct in (0, 25, 50, 75, 100):
        out.append(
            f'<text x="{sx(pct):.1f}" y="{top + _MARGIN_T + _PLOT_H + 14:.1f}" '
            f'text-anchor="middle">{pct}%</text>'
        )
    for v in (lo, 0.0, hi):
        out.append(
            f'<text x="{_MARGIN_L - 6}" y="{sy(v) + 4:.1f}" '
            f'text-anchor="end">{100 * v:.0f}%</text>'
        )
    # standard-error band
    if len(pts) >= 2:
        upper = [(sx(p.speedup_pct), sy(_clamp(_clamp(p.program_speedup) + p.stderr))) for p in pts]
        lower = [(sx(p.speedup_pct), sy(_clamp(_clamp(p.program_speedup) - p.stderr))) for p in pts]
        band = " ".join(f"{x:.1f},{y:.1f}" for x, y in upper + lower[::-1])
        out.append(f'<polygon points="{band}" fill="#bbb" fill-opacity="0.5" stroke="none"/>')
    # the curve itself
    path = " ".join(f"{sx(p.speedup_pct):.1f},{sy(_clamp(p.program_speedup)):.1f}" for p in pts)
    out.append(f'<polyline points="{path}" fill="none" stroke="#222" stroke-width="1.5"/>')
    for p in pts:
        out.append(
            f'<circle cx="{sx(p.speedup_pct):.1f}" cy="{sy(_clamp(p.program_speedup)):.1f}" '
            f'r="2.5" fill="#222"/>'
        )
    out.append("</g>")
    return "\n".join(out)
