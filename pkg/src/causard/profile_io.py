"""Profile file format: newline-delimited JSON, one experiment per line.

The file is the contract between the collection side (engine) and the
analysis side: any number of `experiment` objects followed by exactly one
trailing `totals` object carrying run-wide aggregates, the seed, and the
format version. Files from separate runs can be concatenated record-wise and
merged downstream.
"""

from __future__ import annotations

import io
import json
from typing import IO, Iterable, Union

from .engine import ExperimentRecord, LatencyDelta, RunTotals
from .model import LocationError, parse_location

FORMAT_VERSION = 1


class ProfileFormatError(ValueError):
    def __init__(self, message: str, line_number: int | None = None) -> None:
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


def record_to_dict(record: ExperimentRecord) -> dict:
    return {
        "type": "experiment",
        "line": str(record.line),
        "speedup_pct": record.speedup_pct,
        "start_ns": record.start_ns,
        "wall_ns": record.wall_ns,
        "inserted_delay_ns": record.inserted_delay_ns,
        "effective_ns": record.effective_ns,
        "progress": dict(sorted(record.progress_deltas.items())),
        "latency": {
            pair: {"begin": d.begin, "end": d.end, "area_ns": d.area_ns}
            for pair, d in sorted(record.latency_deltas.items())
        },
        "selected_line_samples": record.selected_line_samples,
    }


def record_from_dict(obj: dict, line_number: int | None = None) -> ExperimentRecord:
    try:
        latency = {
            pair: LatencyDelta(d["begin"], d["end"], d["area_ns"])
            for pair, d in obj.get("latency", {}).items()
        }
        return ExperimentRecord(
            line=parse_location(obj["line"]),
            speedup_pct=obj["speedup_pct"],
            start_ns=obj.get("start_ns", 0),
            wall_ns=obj["wall_ns"],
            inserted_delay_ns=obj["inserted_delay_ns"],
            progress_deltas=dict(obj.get("progress", {})),
            latency_deltas=latency,
            selected_line_samples=obj.get("selected_line_samples", 0),
        )
    except (KeyError, TypeError, ValueError, LocationError) as exc:
        raise ProfileFormatError(f"bad experiment record: {exc}", line_number) from None


def totals_to_dict(totals: RunTotals) -> dict:
    return {
        "type": "totals",
        "format_version": FORMAT_VERSION,
        "effective_runtime_ns": totals.effective_runtime_ns,
        "line_samples": dict(sorted(totals.line_samples.items())),
        "progress_totals": dict(sorted(totals.progress_totals.items())),
        "latency_totals": {
            pair: {"begin": d.begin, "end": d.end, "area_ns": d.area_ns}
            for pair, d in sorted(totals.latency_totals.items())
        },
        "experiments": totals.experiments,
        "selection_timeouts": totals.selection_timeouts,
        "seed": totals.seed,
    }


def totals_from_dict(obj: dict, line_number: int | None = None) -> RunTotals:
    version = obj.get("format_version")
    if version != FORMAT_VERSION:
        raise ProfileFormatError(
            f"profile format version {version!r} not supported (this reader handles {FORMAT_VERSION})",
            line_number,
        )
    try:
        return RunTotals(
            effective_runtime_ns=obj["effective_runtime_ns"],
            line_samples=dict(obj.get("line_samples", {})),
            progress_totals=dict(obj.get("progress_totals", {})),
            latency_totals={
                pair: LatencyDelta(d["begin"], d["end"], d["area_ns"])
                for pair, d in obj.get("latency_totals", {}).items()
            },
            experiments=obj.get("experiments", 0),
            selection_timeouts=obj.get("selection_timeouts", 0),
            seed=obj.get("seed", 0),
        )
    except (KeyError, TypeError) as exc:
        raise ProfileFormatError(f"bad totals record: {exc}", line_number) from None


def write_profile(
    target: Union[str, IO[str]],
    records: Iterable[ExperimentRecord],
    totals: RunTotals,
) -> None:
    def _write(fp: IO[str]) -> None:
        for record in records:
            fp.write(json.dumps(record_to_dict(record), sort_keys=True))
            fp.write("\n")
        fp.write(json.dumps(totals_to_dict(totals), sort_keys=True))
        fp.write("\n")

    if isinstance(target, str):
        with open(target, "w", encoding="utf-8") as fp:
            _write(fp)
    else:
        _write(target)


def read_profile(source: Union[str, IO[str]]) -> tuple[list[ExperimentRecord], RunTotals]:
    if isinstance(source, str):
        with open(source, "r", encoding="utf-8") as fp:
            text = fp.read()
    else:
        text = source.read()

    records: list[ExperimentRecord] = []
    totals: RunTotals | None = None
    for number, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        if totals is not None:
            raise ProfileFormatError("data after the totals record", number)
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ProfileFormatError(f"invalid JSON: {exc.msg}", number) from None
        if not isinstance(obj, dict):
            raise ProfileFormatError("expected a JSON object", number)
        kind = obj.get("type")
        if kind == "experiment":
            records.append(record_from_dict(obj, number))
        elif kind == "totals":
            totals = totals_from_dict(obj, number)
        else:
            raise ProfileFormatError(f"unknown record type {kind!r}", number)
    if totals is None:
        raise ProfileFormatError("profile has no totals record (truncated file?)")
    return records, totals
