"""Route segmentation, stop attribution, and the stop-duration matrix.

The travel line is cut into fixed-length road segments. Each inferred
stop is projected onto its nearest segment and linearly smoothed over
that segment and the next, then summed into an M x N matrix of seconds
(segments x coach-days). Affinity-propagation clustering over segment
midpoints splits the matrix into independently solvable row blocks.
"""

from __future__ import annotations

import bisect
import csv
from dataclasses import dataclass, field

import numpy as np

from .geo import haversine, haversine_pairwise, point_to_chords
from .ingest import Journey
from .stopmodel import StopEvent


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class RoutePolyline:
    """Ordered route vertices with cumulative arclength per vertex."""

    vertices: tuple[tuple[float, float], ...]
    cumlen: tuple[float, ...]

    @classmethod
    def from_vertices(cls, vertices) -> "RoutePolyline":
        verts = [tuple(v) for v in vertices]
        if len(verts) < 2:
            raise ConfigurationError("polyline needs at least 2 vertices")
        lngs = np.array([v[0] for v in verts])
        lats = np.array([v[1] for v in verts])
        steps = haversine_pairwise(lngs, lats)
        if np.any(steps <= 0):
            raise ConfigurationError("polyline arclengths must be strictly increasing")
        cum = np.concatenate([[0.0], np.cumsum(steps)])
        return cls(vertices=tuple(verts), cumlen=tuple(cum.tolist()))

    @classmethod
    def from_file(cls, path) -> "RoutePolyline":
        verts = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                lng, lat = line.split(",")
                verts.append((float(lng), float(lat)))
        return cls.from_vertices(verts)

    @property
    def length(self) -> float:
        return self.cumlen[-1]

    def point_at(self, s: float) -> tuple[float, float]:
        """Linear interpolation of (lng, lat) at arclength s."""
        s = min(max(s, 0.0), self.length)
        i = bisect.bisect_right(self.cumlen, s) - 1
        if i >= len(self.vertices) - 1:
            return self.vertices[-1]
        s0, s1 = self.cumlen[i], self.cumlen[i + 1]
        f = (s - s0) / (s1 - s0)
        (x0, y0), (x1, y1) = self.vertices[i], self.vertices[i + 1]
        return (x0 + f * (x1 - x0), y0 + f * (y1 - y0))


def polyline_from_journey(journey: Journey) -> RoutePolyline:
    """Estimate a travel line from one reference journey's point trace."""
    verts: list[tuple[float, float]] = []
    for p in journey.points:
        pos = (p.lng, p.lat)
        if not verts or haversine(verts[-1], pos) > 0.0:
            verts.append(pos)
    return RoutePolyline.from_vertices(verts)


@dataclass(frozen=True)
class RoadSegment:
    r_id: int
    r_s: tuple[float, float]
    r_e: tuple[float, float]
    length: float


def segment_route(polyline: RoutePolyline, spacing: float) -> list[RoadSegment]:
    """Cut the polyline into consecutive arclength slices of `spacing` m.

    The final segment holds the remainder, in (0, spacing]. Endpoints
    are interpolated between polyline vertices.
    """
    if spacing <= 0:
        raise ConfigurationError("segment length must be positive")
    total = polyline.length
    n_full = int(total / spacing)
    residue = total - n_full * spacing
    if residue <= 1e-9 * max(1.0, total):
        n_full = max(1, n_full)
        bounds = [k * spacing for k in range(n_full)] + [total]
    else:
        bounds = [k * spacing for k in range(n_full + 1)] + [total]
    segments = []
    for i in range(len(bounds) - 1):
        segments.append(
            RoadSegment(
                r_id=i,
                r_s=polyline.point_at(bounds[i]),
                r_e=polyline.point_at(bounds[i + 1]),
                length=bounds[i + 1] - bounds[i],
            )
        )
    return segments


class _SegmentIndex:
    """Cached chord endpoints so repeated projections stay vectorized."""

    def __init__(self, segments: list[RoadSegment]):
        self.segments = segments
        self.starts = np.array([s.r_s for s in segments], dtype=float)
        self.ends = np.array([s.r_e for s in segments], dtype=float)


def project_event(
    position: tuple[float, float],
    segments: list[RoadSegment],
    off_route_threshold: float = 500.0,
    _index: _SegmentIndex | None = None,
) -> tuple[int, float] | None:
    """Nearest segment index and distance-to-segment-end for a position.

    Projects perpendicular onto each segment chord (clamped to the
    endpoints) and picks the closest. Positions farther than
    off_route_threshold from every segment are rejected (None).
    """
    if not segments:
        raise ConfigurationError("no segments to project onto")
    index = _index or _SegmentIndex(segments)
    dist, u = point_to_chords(position, index.starts, index.ends)
    i = int(np.argmin(dist))
    if dist[i] > off_route_threshold:
        return None
    d_to_end = (1.0 - u[i]) * segments[i].length
    return i, d_to_end


def smooth_split(
    dwell: float, i: int, d_to_end: float, spacing: float, n_segments: int
) -> list[tuple[int, float]]:
    """Linear-interpolation smoothing of one stop over segments i and i+1.

    Segment i keeps d_to_end / spacing of the duration and the rest
    moves to i+1; on the last segment the remainder folds back into i.
    Zero shares are omitted.
    """
    if not (0.0 <= d_to_end <= spacing + 1e-9):
        raise ValueError("distance to segment end must lie within one segment")
    w = d_to_end / spacing
    first = w * dwell
    second = (1.0 - w) * dwell
    if i >= n_segments - 1:
        first += second
        second = 0.0
    shares = []
    if first > 0.0:
        shares.append((i, first))
    if second > 0.0:
        shares.append((i + 1, second))
    return shares


@dataclass
class DurationMatrix:
    """M x N matrix of stop seconds: road segments x coach-days."""

    values: np.ndarray
    row_index: list[int]
    col_index: list[tuple[str, str]]  # (coach_id, iso day)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(self.row_index), len(self.col_index)):
            raise ValueError("matrix shape does not match row/column indices")
        if not np.all(np.isfinite(self.values)) or np.any(self.values < 0):
            raise ValueError("matrix entries must be finite and non-negative")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass
class AttributionReport:
    accepted: int = 0
    dropped_off_route: int = 0


def attribute_events(
    events: list[StopEvent],
    segments: list[RoadSegment],
    spacing: float,
    off_route_threshold: float = 500.0,
) -> tuple[list[tuple[int, tuple[str, str], float]], AttributionReport]:
    """Project and smooth events into (row, coach-day, seconds) shares."""
    index = _SegmentIndex(segments)
    shares: list[tuple[int, tuple[str, str], float]] = []
    report = AttributionReport()
    n = len(segments)
    for ev in events:
        hit = project_event((ev.lng, ev.lat), segments, off_route_threshold, index)
        if hit is None:
            report.dropped_off_route += 1
            continue
        report.accepted += 1
        i, d_to_end = hit
        key = (ev.coach_id, ev.day)
        for row, secs in smooth_split(ev.dwell, i, d_to_end, spacing, n):
            shares.append((row, key, secs))
    return shares, report


def assemble_matrix(
    events: list[StopEvent],
    segments: list[RoadSegment],
    spacing: float,
    column_keys: list[tuple[str, str]] | None = None,
    off_route_threshold: float = 500.0,
) -> DurationMatrix:
    """Sum smoothed stop durations into the segments x coach-days matrix.

    Column keys default to the sorted set of (coach, day) pairs present
    in the events; passing them explicitly aligns matrices built from
    different event sets (e.g. the zero-speed baseline input).
    """
    shares, _ = attribute_events(events, segments, spacing, off_route_threshold)
    if column_keys is None:
        column_keys = sorted({key for _, key, _ in shares})
    col_of = {key: j for j, key in enumerate(column_keys)}
    values = np.zeros((len(segments), len(column_keys)))
    for row, key, secs in shares:
        if key not in col_of:
            raise ValueError(f"event for unknown coach-day column {key}")
        values[row, col_of[key]] += secs
    return DurationMatrix(
        values=values,
        row_index=[s.r_id for s in segments],
        col_index=list(column_keys),
    )


# ---------------------------------------------------------------------------
# Affinity propagation over segment midpoints


@dataclass
class ClusterPartition:
    assignment: dict[int, int]  # segment id -> cluster id
    exemplars: list[int]  # one segment id per cluster, indexed by cluster id
    converged: bool = True

    def clusters(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {}
        for seg, c in self.assignment.items():
            out.setdefault(c, []).append(seg)
        for c in out:
            out[c].sort()
        return out


def similarity_matrix(
    points: list[tuple[float, float]], preference: float | str = "median"
) -> np.ndarray:
    """Negative squared haversine distances, preference on the diagonal."""
    n = len(points)
    S = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            d = haversine(points[i], points[j])
            S[i, j] = S[j, i] = -(d * d)
    if preference == "median":
        off = S[~np.eye(n, dtype=bool)]
        pref = float(np.median(off))
    else:
        pref = float(preference)
    np.fill_diagonal(S, pref)
    return S


def affinity_propagation(
    points: list[tuple[float, float]],
    damping: float = 0.9,
    preference: float | str = "median",
    max_iter: int = 1000,
    stable_iterations: int = 15,
) -> ClusterPartition:
    """Exemplar clustering by responsibility/availability message passing.

    Messages are damped exchanges over s(a, b) = -haversine(a, b)^2.
    Convergence means the exemplar set is unchanged for
    `stable_iterations` consecutive iterations; otherwise the current
    assignment is returned with converged=False.
    """
    if len(points) < 2:
        raise ConfigurationError("affinity propagation needs at least 2 points")
    if not (0.5 <= damping < 1.0):
        raise ConfigurationError("damping must be in [0.5, 1)")
    S = similarity_matrix(points, preference)
    n = len(points)
    R = np.zeros((n, n))
    A = np.zeros((n, n))
    idx = np.arange(n)
    last_exemplars: frozenset[int] = frozenset()
    stable = 0
    converged = False
    for _ in range(max_iter):
        # responsibilities
        AS = A + S
        best = np.argmax(AS, axis=1)
        best_val = AS[idx, best]
        AS[idx, best] = -np.inf
        second_val = np.max(AS, axis=1)
        R_new = S - best_val[:, None]
        R_new[idx, best] = S[idx, best] - second_val
        R = damping * R + (1.0 - damping) * R_new
        # availabilities
        Rp = np.maximum(R, 0.0)
        Rp[idx, idx] = R[idx, idx]
        colsum = Rp.sum(axis=0)
        A_new = colsum[None, :] - Rp
        diag = A_new[idx, idx].copy()
        A_new = np.minimum(A_new, 0.0)
        A_new[idx, idx] = diag
        A = damping * A + (1.0 - damping) * A_new
        exemplars = frozenset(np.flatnonzero(np.diag(A + R) > 0).tolist())
        if exemplars and exemplars == last_exemplars:
            stable += 1
            if stable >= stable_iterations:
                converged = True
                break
        else:
            stable = 0
        last_exemplars = exemplars
    exemplar_ids = sorted(last_exemplars)
    if not exemplar_ids:
        exemplar_ids = [int(np.argmax(np.diag(A + R)))]
        converged = False
    choice = np.argmax(S[:, exemplar_ids], axis=1)
    assignment = {int(i): int(choice[i]) for i in range(n)}
    for c, e in enumerate(exemplar_ids):
        assignment[e] = c
    return ClusterPartition(
        assignment=assignment, exemplars=list(exemplar_ids), converged=converged
    )


def enforce_contiguity(partition: ClusterPartition) -> ClusterPartition:
    """Re-cut clusters into contiguous runs of consecutive segment ids.

    Sub-problems then correspond to stretches of road. Each run keeps
    its middle member as exemplar.
    """
    order = sorted(partition.assignment)
    runs: list[list[int]] = []
    for seg in order:
        if runs and partition.assignment[seg] == partition.assignment[runs[-1][-1]] and seg == runs[-1][-1] + 1:
            runs[-1].append(seg)
        else:
            runs.append([seg])
    assignment = {}
    exemplars = []
    for c, run in enumerate(runs):
        exemplars.append(run[len(run) // 2])
        for seg in run:
            assignment[seg] = c
    return ClusterPartition(
        assignment=assignment, exemplars=exemplars, converged=partition.converged
    )


def partition_matrix(
    matrix: DurationMatrix, partition: ClusterPartition
) -> list[DurationMatrix]:
    """One sub-matrix per cluster: its rows, all columns, ids preserved."""
    missing = set(matrix.row_index) - set(partition.assignment)
    if missing:
        raise ValueError(f"partition does not cover rows {sorted(missing)[:5]}")
    by_cluster = partition.clusters()
    pieces = []
    row_pos = {rid: k for k, rid in enumerate(matrix.row_index)}
    for c in sorted(by_cluster):
        rows = [rid for rid in matrix.row_index if partition.assignment[rid] == c]
        take = [row_pos[rid] for rid in rows]
        pieces.append(
            DurationMatrix(
                values=matrix.values[take, :].copy(),
                row_index=rows,
                col_index=list(matrix.col_index),
            )
        )
    return pieces


def merge_row_scores(
    pieces: list[DurationMatrix], scores: list[np.ndarray], row_index: list[int]
) -> np.ndarray:
    """Reassemble per-piece row scores into full row order by segment id."""
    lookup: dict[int, float] = {}
    for piece, sc in zip(pieces, scores):
        for rid, val in zip(piece.row_index, sc):
            lookup[rid] = float(val)
    return np.array([lookup[rid] for rid in row_index])


# ---------------------------------------------------------------------------
# Matrix file round-trip


def write_matrix_csv(matrix: DurationMatrix, path, stamp: dict | None = None) -> None:
    """CSV with a column-key header and a leading segment-id column.

    Values are written at 17 significant digits so the round-trip is
    bit-exact.
    """
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if stamp:
            for k in sorted(stamp):
                fh.write(f"# {k}={stamp[k]}\n")
        writer = csv.writer(fh)
        writer.writerow(["segment_id"] + [f"{c}@{d}" for c, d in matrix.col_index])
        for rid, row in zip(matrix.row_index, matrix.values):
            writer.writerow([rid] + [f"{v:.17g}" for v in row])


def read_matrix_csv(path) -> DurationMatrix:
    with open(path, encoding="utf-8") as fh:
        rows = [line for line in fh if not line.startswith("#")]
    reader = csv.reader(rows)
    header = next(reader)
    col_index = []
    for cell in header[1:]:
        coach, day = cell.rsplit("@", 1)
        col_index.append((coach, day))
    row_index = []
    values = []
    for row in reader:
        row_index.append(int(row[0]))
        values.append([float(v) for v in row[1:]])
    return DurationMatrix(
        values=np.array(values, dtype=float).reshape(len(row_index), len(col_index)),
        row_index=row_index,
        col_index=col_index,
    )


__all__ = [
    "AttributionReport",
    "ClusterPartition",
    "ConfigurationError",
    "DurationMatrix",
    "RoadSegment",
    "RoutePolyline",
    "affinity_propagation",
    "assemble_matrix",
    "attribute_events",
    "enforce_contiguity",
    "merge_row_scores",
    "partition_matrix",
    "polyline_from_journey",
    "project_event",
    "read_matrix_csv",
    "segment_route",
    "similarity_matrix",
    "smooth_split",
    "write_matrix_csv",
]
