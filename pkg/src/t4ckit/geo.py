"""Great-circle distances and polyline helpers on WGS84 coordinates."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

EARTH_RADIUS_M = 6_371_000.0

Point = tuple[float, float]  # (lat, lon)


def haversine_m(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    phi1, phi2 = math.radians(lat1), math.radians(lat2)
    dphi = phi2 - phi1
    dlambda = math.radians(lon2 - lon1)
    a = math.sin(dphi / 2.0) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlambda / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(a)))


def haversine_many(lat: float, lon: float, lats: np.ndarray, lons: np.ndarray) -> np.ndarray:
    phi1 = math.radians(lat)
    phi2 = np.radians(lats)
    dphi = phi2 - phi1
    dlambda = np.radians(lons - lon)
    a = np.sin(dphi / 2.0) ** 2 + math.cos(phi1) * np.cos(phi2) * np.sin(dlambda / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * np.arcsin(np.minimum(1.0, np.sqrt(a)))


def bearing_deg(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    """Initial bearing from point 1 to point 2, degrees clockwise from north in [0, 360)."""
    phi1, phi2 = math.radians(lat1), math.radians(lat2)
    dlambda = math.radians(lon2 - lon1)
    x = math.sin(dlambda) * math.cos(phi2)
    y = math.cos(phi1) * math.sin(phi2) - math.sin(phi1) * math.cos(phi2) * math.cos(dlambda)
    return math.degrees(math.atan2(x, y)) % 360.0


def offset(lat: float, lon: float, north_m: float, east_m: float) -> Point:
    """Move a point by local metric offsets (spherical, small-distance exact enough)."""
    dlat = math.degrees(north_m / EARTH_RADIUS_M)
    dlon = math.degrees(east_m / (EARTH_RADIUS_M * math.cos(math.radians(lat))))
    return (lat + dlat, lon + dlon)


def polyline_lengths(geometry) -> list[float]:
    """Haversine length of each segment of a polyline."""
    return [haversine_m(a[0], a[1], b[0], b[1]) for a, b in zip(geometry, geometry[1:])]


@dataclass(frozen=True)
class Projection:
    distance_m: float
    point: Point
    fraction: float  # position along the polyline by length, in [0, 1]
    segment: int


def project_onto_polyline(lat: float, lon: float, geometry) -> Projection:
    """Closest point of a polyline to (lat, lon).

    Segments are projected in a local equirectangular plane centred on the
    query point; the returned distance is the haversine distance to the
    projected point.
    """
    if len(geometry) < 2:
        raise ValueError("polyline needs at least two points")
    coslat = math.cos(math.radians(lat))
    pts = np.asarray(geometry, dtype=float)
    ys = np.radians(pts[:, 0] - lat) * EARTH_RADIUS_M
    xs = np.radians(pts[:, 1] - lon) * EARTH_RADIUS_M * coslat
    x1, y1, x2, y2 = xs[:-1], ys[:-1], xs[1:], ys[1:]
    dx, dy = x2 - x1, y2 - y1
    seg2 = dx * dx + dy * dy
    with np.errstate(invalid="ignore", divide="ignore"):
        s = np.where(seg2 > 0, -(x1 * dx + y1 * dy) / seg2, 0.0)
    s = np.clip(s, 0.0, 1.0)
    px, py = x1 + s * dx, y1 + s * dy
    planar = px * px + py * py
    i = int(np.argmin(planar))
    a, b = geometry[i], geometry[i + 1]
    plat = a[0] + float(s[i]) * (b[0] - a[0])
    plon = a[1] + float(s[i]) * (b[1] - a[1])
    seg_lengths = polyline_lengths(geometry)
    total = math.fsum(seg_lengths)
    along = math.fsum(seg_lengths[:i]) + float(s[i]) * seg_lengths[i]
    fraction = along / total if total > 0 else 0.0
    return Projection(haversine_m(lat, lon, plat, plon), (plat, plon), min(1.0, max(0.0, fraction)), i)


def split_polyline(geometry, fraction: float) -> tuple[list[Point], list[Point], Point]:
    """Cut a polyline at `fraction` of its length; returns (head, tail, cut point)."""
    seg_lengths = polyline_lengths(geometry)
    total = math.fsum(seg_lengths)
    target = fraction * total
    acc = 0.0
    for i, seg in enumerate(seg_lengths):
        if acc + seg >= target or i == len(seg_lengths) - 1:
            s = 0.0 if seg == 0 else min(1.0, max(0.0, (target - acc) / seg))
            a, b = geometry[i], geometry[i + 1]
            cut = (a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1]))
            head = [tuple(p) for p in geometry[: i + 1]] + [cut]
            tail = [cut] + [tuple(p) for p in geometry[i + 1:]]
            return head, tail, cut
        acc += seg
    raise ValueError("empty polyline")


def sample_polyline(geometry, step_m: float = 10.0) -> list[tuple[Point, float]]:
    """Points every `step_m` along a polyline, each with the local bearing."""
    out: list[tuple[Point, float]] = []
    for a, b in zip(geometry, geometry[1:]):
        seg = haversine_m(a[0], a[1], b[0], b[1])
        brg = bearing_deg(a[0], a[1], b[0], b[1]) if seg > 0 else 0.0
        n = max(1, math.ceil(seg / step_m))
        for k in range(n + 1):
            s = k / n
            out.append(((a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])), brg))
    return out
