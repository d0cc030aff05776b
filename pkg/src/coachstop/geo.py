"""Great-circle and local planar geometry helpers.

Positions are (lng, lat) pairs in decimal degrees, WGS84 axis order
(longitude first, as in GeoJSON). Distances are meters on a sphere of
radius 6,371 km.
"""

from __future__ import annotations

import math

import numpy as np

EARTH_RADIUS_M = 6_371_000.0
_DEG = math.pi / 180.0


def haversine(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Great-circle distance in meters between two (lng, lat) points."""
    lng1, lat1 = a[0] * _DEG, a[1] * _DEG
    lng2, lat2 = b[0] * _DEG, b[1] * _DEG
    h = (
        math.sin((lat2 - lat1) / 2.0) ** 2
        + math.cos(lat1) * math.cos(lat2) * math.sin((lng2 - lng1) / 2.0) ** 2
    )
    return 2.0 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


def haversine_pairwise(lngs: np.ndarray, lats: np.ndarray) -> np.ndarray:
    """Distances between consecutive points of a track, meters, length n-1."""
    lngs = np.asarray(lngs, dtype=float) * _DEG
    lats = np.asarray(lats, dtype=float) * _DEG
    dlat = np.diff(lats)
    dlng = np.diff(lngs)
    h = (
        np.sin(dlat / 2.0) ** 2
        + np.cos(lats[:-1]) * np.cos(lats[1:]) * np.sin(dlng / 2.0) ** 2
    )
    return 2.0 * EARTH_RADIUS_M * np.arcsin(np.minimum(1.0, np.sqrt(h)))


def local_xy(
    points: np.ndarray, origin: tuple[float, float]
) -> np.ndarray:
    """Project (lng, lat) rows to planar meters around `origin`.

    Equirectangular projection; adequate for the sub-kilometer
    point-to-segment tests this package performs.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    k = EARTH_RADIUS_M * _DEG
    x = (pts[:, 0] - origin[0]) * k * math.cos(origin[1] * _DEG)
    y = (pts[:, 1] - origin[1]) * k
    return np.column_stack([x, y])


def point_to_chords(
    position: tuple[float, float],
    starts: np.ndarray,
    ends: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Distance from one point to each chord, with projection parameter.

    `starts` and `ends` are (n, 2) arrays of (lng, lat). Returns
    (distances_m, u) where u in [0, 1] is the clamped position of the
    perpendicular foot along each chord (0 = start, 1 = end).
    """
    p = local_xy(np.array([position]), position)[0]
    a = local_xy(starts, position)
    b = local_xy(ends, position)
    ab = b - a
    denom = np.einsum("ij,ij->i", ab, ab)
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.einsum("ij,ij->i", p - a, ab) / denom
    u = np.where(denom > 0.0, u, 0.0)
    u = np.clip(u, 0.0, 1.0)
    foot = a + u[:, None] * ab
    dist = np.linalg.norm(foot - p, axis=1)
    return dist, u


def point_in_polygon(point: tuple[float, float], polygon) -> bool:
    """Ray-casting point-in-polygon test. Vertices as (lng, lat).

    Points exactly on an edge may land on either side; the cleaning
    rules treat the polygon as a coarse region, not a survey boundary.
    """
    x, y = point
    inside = False
    n = len(polygon)
    for i in range(n):
        x1, y1 = polygon[i]
        x2, y2 = polygon[(i + 1) % n]
        if (y1 > y) != (y2 > y):
            x_cross = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if x < x_cross:
                inside = not inside
    return inside


def segments_intersect(p1, p2, p3, p4) -> bool:
    """True if open segments (p1,p2) and (p3,p4) properly intersect."""

    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        if v > 0:
            return 1
        if v < 0:
            return -1
        return 0

    o1 = orient(p1, p2, p3)
    o2 = orient(p1, p2, p4)
    o3 = orient(p3, p4, p1)
    o4 = orient(p3, p4, p2)
    return o1 != o2 and o3 != o4 and 0 not in (o1, o2, o3, o4)
