"""
Key-value schedule files.

A schedule file is a plain `KEY=value` file (comments with `#`), read with python-dotenv:

    STREAM=drifting_gaussian
    DIM=2
    SEGMENTS=2
    SEGMENT_0_DURATION=100
    SEGMENT_0_MEANS=0,0;3,3
    SEGMENT_0_PRIORS=0.7,0.3
    SEGMENT_1_DURATION=100
    SEGMENT_1_BLEND=20
    SEGMENT_1_MEANS=3,0;0,3

Lists are comma separated, matrix rows are separated by `;`.
"""

from pathlib import Path
from typing import Any

from dotenv import dotenv_values
from pydantic import ValidationError

from ocl.errors import ConfigurationError
from ocl.streams import Segment, SegmentSchedule, StreamKind

_SEGMENT_KEYS: dict[str, str] = {
    "DURATION": "duration",
    "BLEND": "blend",
    "SIGNS": "signs",
    "RADIUS": "radius",
    "GAP": "gap",
    "SAMPLING": "sampling",
    "MEANS": "means",
    "COV": "cov",
    "STD": "std",
    "PRIORS": "priors",
    "IDENTITIES": "identities",
}
_LIST_FIELDS = {"signs", "priors", "identities"}
_MATRIX_FIELDS = {"means", "cov"}

_SCHEDULE_KEYS: dict[str, str] = {
    "DIM": "dim",
    "BATCH_SIZE": "batch_size",
    "IDENTITIES": "num_identities",
    "CLUSTER_STD": "cluster_std",
    "CLUSTER_SPREAD": "cluster_spread",
    "TRACK_LENGTH": "track_length",
}


def _parse_list(raw: str) -> list[float]:
    return [float(v) for v in raw.split(",") if v.strip()]


def _parse_matrix(raw: str) -> list[list[float]]:
    return [_parse_list(row) for row in raw.split(";") if row.strip()]


def parse_schedule(values: dict[str, str | None]) -> SegmentSchedule:
    """Build a schedule from already-parsed key-value pairs."""
    clean = {key.upper(): value for key, value in values.items() if value is not None}
    try:
        kind = StreamKind(clean["STREAM"])
        count = int(clean["SEGMENTS"])
    except KeyError as e:
        raise ConfigurationError(f"schedule is missing required key {e.args[0]}") from e
    except ValueError as e:
        raise ConfigurationError(f"invalid schedule header: {e}. Stream kinds: {[k.value for k in StreamKind]}") from e

    known = {"STREAM", "SEGMENTS", *_SCHEDULE_KEYS}
    known |= {f"SEGMENT_{i}_{key}" for i in range(count) for key in _SEGMENT_KEYS}
    unknown = sorted(set(clean) - known)
    if unknown:
        raise ConfigurationError(f"unknown schedule keys: {unknown}")

    try:
        segments: list[Segment] = []
        for i in range(count):
            fields: dict[str, Any] = {}
            for key, field in _SEGMENT_KEYS.items():
                raw = clean.get(f"SEGMENT_{i}_{key}")
                if raw is None:
                    continue
                if field in _LIST_FIELDS:
                    parsed = _parse_list(raw)
                    fields[field] = [int(v) for v in parsed] if field == "identities" else parsed
                elif field in _MATRIX_FIELDS:
                    fields[field] = _parse_matrix(raw)
                else:
                    fields[field] = raw
            segments.append(Segment(**fields))
        header: dict[str, Any] = {field: clean[key] for key, field in _SCHEDULE_KEYS.items() if key in clean}
        return SegmentSchedule(kind=kind, segments=segments, **header)
    except (ValidationError, ValueError) as e:
        raise ConfigurationError(f"invalid schedule: {e}") from e


def load_schedule(path: Path) -> SegmentSchedule:
    if not path.exists():
        raise ConfigurationError(f"Schedule file not found: {path}")
    return parse_schedule(dict(dotenv_values(path)))


def dump_schedule(schedule: SegmentSchedule) -> str:
    """Inverse of parse_schedule, for writing a built-in schedule to disk as a starting point."""

    def fmt_list(values: list[float] | tuple[float, ...] | list[int]) -> str:
        return ",".join(f"{v:g}" for v in values)

    lines = [f"STREAM={schedule.kind.value}", f"SEGMENTS={len(schedule.segments)}"]
    for key, field in _SCHEDULE_KEYS.items():
        lines.append(f"{key}={getattr(schedule, field)}")
    for i, segment in enumerate(schedule.segments):
        for key, field in _SEGMENT_KEYS.items():
            value = getattr(segment, field)
            if value is None:
                continue
            if field in _MATRIX_FIELDS:
                value = ";".join(fmt_list(row) for row in value)
            elif field in _LIST_FIELDS:
                value = fmt_list(value)
            lines.append(f"SEGMENT_{i}_{key}={value}")
    return "\n".join(lines) + "\n"
