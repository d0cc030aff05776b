"""Raw GPS record parsing, cleaning, and journey splitting.

Input files are delimiter-separated text with one record per line.
Cleaning applies three rules: an area constraint (polygon or box),
a maximum-speed cut at 120 km/h, and a minimum coordinate precision
of six decimal digits. Speeds are converted from km/h on the wire to
m/s internally so the stop-duration formulas work in meters/seconds.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone

from .geo import haversine, point_in_polygon, segments_intersect

KMH_TO_MS = 1.0 / 3.6

RECORD_COLUMNS = ("coach_id", "t", "lng", "lat", "v", "of")


class ConfigurationError(ValueError):
    """Invalid format descriptor or cleaning configuration."""


@dataclass(frozen=True)
class FormatDescriptor:
    """Column order and delimiter of a raw GPS file."""

    columns: tuple[str, ...] = RECORD_COLUMNS
    delimiter: str = ","
    has_header: bool = True

    def __post_init__(self):
        unknown = set(self.columns) - set(RECORD_COLUMNS)
        if unknown:
            raise ConfigurationError(f"unknown column name(s): {sorted(unknown)}")
        if set(self.columns) != set(RECORD_COLUMNS):
            missing = set(RECORD_COLUMNS) - set(self.columns)
            raise ConfigurationError(f"missing column name(s): {sorted(missing)}")


@dataclass(frozen=True)
class RawRecord:
    """One parsed line: speed still in km/h, coordinate text retained.

    The source text of lng/lat is kept because the precision rule counts
    decimal digits as written; the parsed float loses trailing zeros.
    """

    coach_id: str
    t: float
    lng: float
    lat: float
    v: float
    of: str
    lng_text: str = ""
    lat_text: str = ""


@dataclass(frozen=True)
class ParseError:
    line: int
    reason: str


@dataclass(frozen=True)
class GpsPoint:
    """A cleaned point: speed in m/s, coordinates in degrees."""

    coach_id: str
    t: float
    lng: float
    lat: float
    v: float
    of: str


@dataclass(frozen=True)
class Journey:
    """A maximal run of points with every gap in (0, max_gap]."""

    coach_id: str
    day: str  # ISO date of the first point
    points: tuple[GpsPoint, ...]


@dataclass
class CleaningConfig:
    polygon: list[tuple[float, float]] | None = None
    bbox: tuple[float, float, float, float] | None = None  # lng_min, lat_min, lng_max, lat_max
    max_speed_kmh: float = 120.0
    min_coord_decimals: int = 6
    max_gap_s: float = 120.0

    def __post_init__(self):
        if self.max_speed_kmh <= 0:
            raise ConfigurationError("max_speed_kmh must be > 0")
        if self.polygon is not None:
            poly = [tuple(p) for p in self.polygon]
            if len(poly) >= 2 and poly[0] == poly[-1]:
                poly = poly[:-1]
            if len(poly) < 3:
                raise ConfigurationError("polygon needs at least 3 distinct vertices")
            n = len(poly)
            for i in range(n):
                for j in range(i + 1, n):
                    if segments_intersect(
                        poly[i], poly[(i + 1) % n], poly[j], poly[(j + 1) % n]
                    ):
                        raise ConfigurationError("polygon is self-intersecting")
            self.polygon = poly


@dataclass
class CleaningReport:
    parsed: int = 0
    rejected_area: int = 0
    rejected_speed: int = 0
    rejected_precision: int = 0
    rejected_duplicate: int = 0

    def to_json(self) -> str:
        return json.dumps(
            {
                "parsed": self.parsed,
                "rejected_area": self.rejected_area,
                "rejected_speed": self.rejected_speed,
                "rejected_precision": self.rejected_precision,
                "rejected_duplicate": self.rejected_duplicate,
            },
            sort_keys=True,
        )


def _parse_timestamp(text: str) -> float:
    """Epoch seconds from either a numeric value or ISO-8601."""
    try:
        return float(text)
    except ValueError:
        pass
    iso = text.strip()
    if iso.endswith("Z"):
        iso = iso[:-1] + "+00:00"
    dt = datetime.fromisoformat(iso)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def parse_records(
    stream, descriptor: FormatDescriptor = FormatDescriptor()
) -> tuple[list[RawRecord], list[ParseError]]:
    """Parse a text stream into records, collecting per-line errors.

    Well-formed lines become RawRecords in input order; malformed lines
    produce a ParseError with the 1-based line number and a reason.
    """
    records: list[RawRecord] = []
    errors: list[ParseError] = []
    idx = {name: i for i, name in enumerate(descriptor.columns)}
    for line_no, line in enumerate(stream, start=1):
        if descriptor.has_header and line_no == 1:
            continue
        line = line.rstrip("\r\n")
        if not line.strip():
            continue
        parts = line.split(descriptor.delimiter)
        if len(parts) != len(descriptor.columns):
            errors.append(
                ParseError(line_no, f"expected {len(descriptor.columns)} fields, got {len(parts)}")
            )
            continue
        coach_id = parts[idx["coach_id"]].strip()
        lng_text = parts[idx["lng"]].strip()
        lat_text = parts[idx["lat"]].strip()
        try:
            t = _parse_timestamp(parts[idx["t"]])
        except ValueError:
            errors.append(ParseError(line_no, f"bad timestamp {parts[idx['t']]!r}"))
            continue
        try:
            lng = float(lng_text)
            lat = float(lat_text)
            v = float(parts[idx["v"]])
        except ValueError:
            errors.append(ParseError(line_no, "non-numeric coordinate or speed"))
            continue
        if not (-180.0 <= lng <= 180.0 and -90.0 <= lat <= 90.0):
            errors.append(ParseError(line_no, f"coordinates out of range ({lng}, {lat})"))
            continue
        if t != t or t in (float("inf"), float("-inf")):
            errors.append(ParseError(line_no, "non-finite timestamp"))
            continue
        records.append(
            RawRecord(
                coach_id=coach_id,
                t=t,
                lng=lng,
                lat=lat,
                v=v,
                of=parts[idx["of"]].strip(),
                lng_text=lng_text,
                lat_text=lat_text,
            )
        )
    return records, errors


def decimal_digits(text: str) -> int:
    """Number of digits after the decimal point in the source text."""
    if "." not in text:
        return 0
    frac = text.split(".", 1)[1]
    return sum(c.isdigit() for c in frac)


def _in_area(record: RawRecord, config: CleaningConfig) -> bool:
    if config.polygon is not None:
        return point_in_polygon((record.lng, record.lat), config.polygon)
    if config.bbox is not None:
        lng_min, lat_min, lng_max, lat_max = config.bbox
        return lng_min <= record.lng <= lng_max and lat_min <= record.lat <= lat_max
    return True


def clean(
    records: list[RawRecord], config: CleaningConfig
) -> tuple[list[GpsPoint], CleaningReport]:
    """Apply the three cleaning rules plus duplicate-timestamp collapse.

    Never fails: offending records are dropped and counted. A record
    failing several rules is counted once, in rule order (area, speed,
    precision, duplicate). Duplicates keep the first record seen.
    """
    report = CleaningReport(parsed=len(records))
    seen: set[tuple[str, float]] = set()
    points: list[GpsPoint] = []
    for rec in records:
        if not _in_area(rec, config):
            report.rejected_area += 1
            continue
        if rec.v > config.max_speed_kmh:
            report.rejected_speed += 1
            continue
        if (
            decimal_digits(rec.lng_text) < config.min_coord_decimals
            or decimal_digits(rec.lat_text) < config.min_coord_decimals
        ):
            report.rejected_precision += 1
            continue
        key = (rec.coach_id, rec.t)
        if key in seen:
            report.rejected_duplicate += 1
            continue
        seen.add(key)
        points.append(
            GpsPoint(
                coach_id=rec.coach_id,
                t=rec.t,
                lng=rec.lng,
                lat=rec.lat,
                v=rec.v * KMH_TO_MS,
                of=rec.of,
            )
        )
    return points, report


def split_journeys(
    points: list[GpsPoint],
    max_gap_s: float = 120.0,
    tz_offset_hours: float = 0.0,
) -> list[Journey]:
    """Split one coach's time-sorted points into maximal journeys.

    A journey breaks wherever a gap exceeds max_gap_s; runs of fewer
    than two points are discarded. The journey day is the date of the
    first point, shifted by tz_offset_hours.
    """
    if not points:
        return []
    journeys: list[Journey] = []
    run: list[GpsPoint] = [points[0]]
    for prev, cur in zip(points, points[1:]):
        if cur.coach_id != prev.coach_id:
            raise ValueError("split_journeys expects points of a single coach")
        gap = cur.t - prev.t
        if gap <= 0:
            raise ValueError(f"points not strictly increasing in t at t={cur.t}")
        if gap <= max_gap_s:
            run.append(cur)
        else:
            if len(run) >= 2:
                journeys.append(_make_journey(run, tz_offset_hours))
            run = [cur]
    if len(run) >= 2:
        journeys.append(_make_journey(run, tz_offset_hours))
    return journeys


def _make_journey(run: list[GpsPoint], tz_offset_hours: float) -> Journey:
    first = datetime.fromtimestamp(run[0].t, tz=timezone.utc) + timedelta(
        hours=tz_offset_hours
    )
    return Journey(
        coach_id=run[0].coach_id,
        day=first.date().isoformat(),
        points=tuple(run),
    )


def group_by_coach(points: list[GpsPoint]) -> dict[str, list[GpsPoint]]:
    """Bucket points per coach, each bucket sorted by timestamp."""
    buckets: dict[str, list[GpsPoint]] = {}
    for p in points:
        buckets.setdefault(p.coach_id, []).append(p)
    for coach in buckets:
        buckets[coach].sort(key=lambda p: p.t)
    return buckets


__all__ = [
    "KMH_TO_MS",
    "CleaningConfig",
    "CleaningReport",
    "ConfigurationError",
    "FormatDescriptor",
    "GpsPoint",
    "Journey",
    "ParseError",
    "RawRecord",
    "clean",
    "decimal_digits",
    "group_by_coach",
    "haversine",
    "parse_records",
    "split_journeys",
]
