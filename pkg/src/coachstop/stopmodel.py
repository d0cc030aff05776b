"""Stop detection between consecutive low-frequency GPS samples.

A coach is assumed to change speed piecewise-linearly between two
samples taken T seconds apart (nominally 30 s). Given the endpoint
speeds and the distance actually covered, the profile either touches
zero momentarily (a stop of zero measured duration) or must include a
rest whose duration can be bounded from below.

Two detector modes are provided. ``literal`` evaluates the published
decision rule exactly as stated, including two known quirks: the
speeding-up bound telescopes to exactly zero, and the slowing-down
bound divides by the first endpoint speed. ``physical`` replaces both
case-2 bounds with the time-reversal-symmetric bound
``T - 2 d / min(v_i, v_next)`` over the strictly positive endpoint
speeds, and requires the momentary touch time to fall inside the
interval. literal is the pipeline default; physical is the mode the
synthetic oracle suite certifies as sound.
"""

from __future__ import annotations

from dataclasses import dataclass

from .geo import haversine
from .ingest import Journey

MODES = ("literal", "physical")

CASE_TOUCH = "case1_touch"
CASE_SLOWING = "case2_slowing"
CASE_SPEEDING = "case2_speeding"
CASE_NONE = "none"

MAX_PAIR_SPEED_MS = 120.0 / 3.6  # pairs implying faster travel are glitches


class DegenerateProfileError(ZeroDivisionError):
    """Touch-time is undefined when both endpoint speeds are equal."""


class ZeroSpeedPairError(ZeroDivisionError):
    """The slowing bound divides by v_i; v_i = 0 needs the stationary case."""


class MotionWithoutSpeedError(ValueError):
    """Both endpoint speeds are zero yet the positions differ."""


@dataclass(frozen=True)
class VelocityPair:
    """Endpoint speeds (m/s), distance (m), and interval length (s)."""

    v_i: float
    v_next: float
    d: float
    period: float = 30.0

    def __post_init__(self):
        if self.v_i < 0 or self.v_next < 0:
            raise ValueError("speeds must be non-negative")
        if self.d < 0:
            raise ValueError("distance must be non-negative")
        if self.period <= 0:
            raise ValueError("period must be positive")


@dataclass(frozen=True)
class StopVerdict:
    stopped: bool
    dwell: float = 0.0
    case_tag: str = CASE_NONE


def touch_time(pair: VelocityPair) -> float:
    """Time at which a zero-touching linear profile reaches speed zero.

    Solves t * (v_i - v_next) = 2 d - T * v_next. The result may lie
    outside [0, T]; feasibility is the caller's concern.
    """
    if pair.v_i == pair.v_next:
        raise DegenerateProfileError("touch time undefined for equal endpoint speeds")
    return (2.0 * pair.d - pair.period * pair.v_next) / (pair.v_i - pair.v_next)


def case1_holds(pair: VelocityPair, strict_feasibility: bool = False) -> bool:
    """Momentary-touch condition: the touch time is strictly positive.

    With strict_feasibility the touch time must also not exceed the
    interval length, excluding geometrically impossible profiles.
    """
    t = touch_time(pair)
    if strict_feasibility:
        return 0.0 < t <= pair.period
    return t > 0.0


def bound_slowing(pair: VelocityPair) -> float:
    """Published dwell lower bound for v_next <= v_i: T - 2 d / v_i."""
    if pair.v_i == 0.0:
        raise ZeroSpeedPairError("slowing bound undefined for v_i = 0")
    return pair.period - 2.0 * pair.d / pair.v_i


def bound_speeding_literal(pair: VelocityPair) -> float:
    """Published dwell lower bound for v_next > v_i, evaluated as written.

    The expression telescopes to exactly zero for every valid input;
    it is kept verbatim so the decision rule matches the published
    form, and a regression test pins the zero.
    """
    if not (pair.v_next > pair.v_i):
        raise ValueError("speeding bound requires v_next > v_i")
    if pair.v_next == 0.0:
        raise ZeroSpeedPairError("speeding bound undefined for v_next = 0")
    ratio = pair.v_i / pair.v_next - 1.0
    quotient = (2.0 * pair.d - pair.period * pair.v_next) / (pair.v_i - pair.v_next)
    return ratio * quotient + pair.period - 2.0 * pair.d / pair.v_next


def bound_physical(pair: VelocityPair) -> float:
    """Dwell lower bound using the smaller strictly positive endpoint speed.

    Reversing time swaps the endpoint roles in a linear profile, so the
    slowing-bound argument applies to min(v_i, v_next). A fully
    stationary pair (both speeds zero, zero distance) dwells the whole
    interval.
    """
    positive = [v for v in (pair.v_i, pair.v_next) if v > 0.0]
    if not positive:
        if pair.d > 0.0:
            raise MotionWithoutSpeedError(
                f"zero endpoint speeds but d = {pair.d} m"
            )
        return pair.period
    return pair.period - 2.0 * pair.d / min(positive)


def is_motion_anomaly(pair: VelocityPair) -> bool:
    """Both endpoint speeds zero while the coach apparently moved."""
    return pair.v_i == 0.0 and pair.v_next == 0.0 and pair.d > 0.0


def detect_stop(
    pair: VelocityPair, mode: str = "literal", strict_feasibility: bool = False
) -> StopVerdict:
    """Decide whether the coach stopped between the two samples.

    Total over all inputs: degenerate pairs never raise. A pair that
    moved with both endpoint speeds zero is contradictory sensor data
    and yields a non-stop verdict; callers that want to count such
    anomalies should test is_motion_anomaly first.
    """
    if mode not in MODES:
        raise ValueError(f"unknown detector mode {mode!r}")
    T = pair.period

    if pair.v_i == 0.0 and pair.v_next == 0.0:
        if pair.d == 0.0:
            return StopVerdict(True, T, CASE_SLOWING)
        return StopVerdict(False)

    if mode == "literal":
        if pair.v_i != pair.v_next and case1_holds(pair, strict_feasibility):
            return StopVerdict(True, 0.0, CASE_TOUCH)
        if pair.v_next > pair.v_i:
            bound = bound_speeding_literal(pair)
            tag = CASE_SPEEDING
        else:
            bound = bound_slowing(pair)
            tag = CASE_SLOWING
    else:
        if pair.v_i != pair.v_next and case1_holds(pair, strict_feasibility=True):
            return StopVerdict(True, 0.0, CASE_TOUCH)
        bound = bound_physical(pair)
        tag = CASE_SPEEDING if pair.v_next > pair.v_i else CASE_SLOWING

    if bound > 0.0:
        return StopVerdict(True, min(max(bound, 0.0), T), tag)
    return StopVerdict(False)


@dataclass(frozen=True)
class StopEvent:
    """An inferred stop, placed at the first point of the detected pair."""

    coach_id: str
    day: str
    lng: float
    lat: float
    dwell: float
    case_tag: str = CASE_NONE


@dataclass
class ExtractionReport:
    pairs: int = 0
    skipped_interval: int = 0
    skipped_glitch: int = 0
    skipped_anomaly: int = 0
    events: int = 0


def extract_stop_events(
    journeys: list[Journey],
    mode: str = "literal",
    strict_feasibility: bool = False,
    min_interval_s: float = 15.0,
    max_interval_s: float = 120.0,
    momentary_epsilon: float | None = None,
) -> tuple[list[StopEvent], ExtractionReport]:
    """Run the detector over every consecutive pair of every journey.

    Pairs with an interval outside [min_interval_s, max_interval_s] or
    implying travel above 120 km/h are skipped as feed jitter/glitches.
    Momentary touches carry zero duration and are dropped unless
    momentary_epsilon assigns them a fixed stand-in duration.
    """
    events: list[StopEvent] = []
    report = ExtractionReport()
    for journey in journeys:
        pts = journey.points
        for p, q in zip(pts, pts[1:]):
            report.pairs += 1
            T = q.t - p.t
            if not (min_interval_s <= T <= max_interval_s):
                report.skipped_interval += 1
                continue
            d = haversine((p.lng, p.lat), (q.lng, q.lat))
            if d / T > MAX_PAIR_SPEED_MS:
                report.skipped_glitch += 1
                continue
            pair = VelocityPair(v_i=p.v, v_next=q.v, d=d, period=T)
            if is_motion_anomaly(pair):
                report.skipped_anomaly += 1
                continue
            verdict = detect_stop(pair, mode, strict_feasibility)
            if not verdict.stopped:
                continue
            dwell = verdict.dwell
            if dwell == 0.0:
                if momentary_epsilon is None:
                    continue
                dwell = momentary_epsilon
            events.append(
                StopEvent(
                    coach_id=journey.coach_id,
                    day=journey.day,
                    lng=p.lng,
                    lat=p.lat,
                    dwell=dwell,
                    case_tag=verdict.case_tag,
                )
            )
            report.events += 1
    return events, report


def zero_speed_events(journeys: list[Journey]) -> list[StopEvent]:
    """Stops read directly off zero instantaneous speed (UIS baseline input).

    Each zero-speed point contributes its gap to the next sample as the
    stop duration, i.e. the time the single sample stands for.
    """
    events: list[StopEvent] = []
    for journey in journeys:
        pts = journey.points
        for p, q in zip(pts, pts[1:]):
            if p.v == 0.0:
                events.append(
                    StopEvent(
                        coach_id=journey.coach_id,
                        day=journey.day,
                        lng=p.lng,
                        lat=p.lat,
                        dwell=q.t - p.t,
                        case_tag=CASE_NONE,
                    )
                )
    return events


__all__ = [
    "CASE_NONE",
    "CASE_SLOWING",
    "CASE_SPEEDING",
    "CASE_TOUCH",
    "MODES",
    "DegenerateProfileError",
    "ExtractionReport",
    "MotionWithoutSpeedError",
    "StopEvent",
    "StopVerdict",
    "VelocityPair",
    "ZeroSpeedPairError",
    "bound_physical",
    "bound_slowing",
    "bound_speeding_literal",
    "case1_holds",
    "detect_stop",
    "extract_stop_events",
    "is_motion_anomaly",
    "touch_time",
    "zero_speed_events",
]
