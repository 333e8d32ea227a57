"""Quadrilateral / rotated-rectangle geometry.

Quads are ``(4, 2)`` float arrays of ``(x, y)`` vertices in pixel units.
Pixel ``(row, col)`` covers the unit square ``[col, col+1] x [row, row+1]``,
so its centre sits at ``(col + 0.5, row + 0.5)``.
"""

from __future__ import annotations

import math
from typing import NamedTuple, Sequence

import numpy as np

_EPS_AREA = 1e-12
_HALF_PI = math.pi / 2


class DegenerateGeometryError(ValueError):
    """Raised for zero-area boxes where a positive area is required."""


class RotatedRect(NamedTuple):
    """Oriented box; ``theta`` is the angle from the x-axis to the ``w`` side.

    Normalized form has ``w >= h`` and ``theta`` in ``[-pi/2, pi/2)``.
    """

    cx: float
    cy: float
    w: float
    h: float
    theta: float


def as_quad(points: Sequence[Sequence[float]] | np.ndarray) -> np.ndarray:
    q = np.asarray(points, dtype=np.float64)
    if q.shape == (8,):
        q = q.reshape(4, 2)
    if q.shape != (4, 2):
        raise ValueError(f"a quad needs 4 (x, y) vertices, got shape {q.shape}")
    if not np.all(np.isfinite(q)):
        raise ValueError("quad vertices must be finite")
    return q


def polygon_area(poly) -> float:
    """Signed shoelace area (positive for counter-clockwise in a y-up frame)."""
    n = len(poly)
    if n < 3:
        return 0.0
    acc = 0.0
    for i in range(n):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % n]
        acc += x0 * y1 - x1 * y0
    return 0.5 * float(acc)


def convex_hull(points: np.ndarray) -> np.ndarray:
    """Andrew's monotone chain; returns hull vertices with positive signed area."""
    pts = sorted(set(map(tuple, np.asarray(points, dtype=np.float64).tolist())))
    if len(pts) <= 2:
        return np.array(pts, dtype=np.float64).reshape(-1, 2)

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    pl = pts
    lower: list = []
    for p in pl:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list = []
    for p in reversed(pl):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1], dtype=np.float64)


def quad_area(q: np.ndarray) -> float:
    return abs(polygon_area(convex_hull(as_quad(q))))


def _normalize_rect(cx, cy, w, h, theta) -> RotatedRect:
    if w < h:
        w, h = h, w
        theta += _HALF_PI
    if math.isclose(w, h, rel_tol=1e-9, abs_tol=1e-12):
        # squares: theta only defined mod pi/2, fold to [-pi/4, pi/4)
        period, lo = _HALF_PI, -math.pi / 4
    else:
        period, lo = math.pi, -_HALF_PI
    theta = (theta - lo) % period + lo
    if theta >= lo + period - 1e-12:
        theta -= period
    return RotatedRect(float(cx), float(cy), float(w), float(h), float(theta))


def min_area_rect(points: np.ndarray) -> RotatedRect:
    """Minimum-area enclosing rectangle by rotating calipers over the hull."""
    hull = convex_hull(points)
    if len(hull) < 3 or abs(polygon_area(hull)) < _EPS_AREA:
        raise DegenerateGeometryError("points span zero area")
    best = None
    n = len(hull)
    for i in range(n):
        edge = hull[(i + 1) % n] - hull[i]
        length = math.hypot(edge[0], edge[1])
        if length == 0.0:
            continue
        ux, uy = edge / length
        along = hull @ np.array([ux, uy])
        perp = hull @ np.array([-uy, ux])
        a0, a1 = along.min(), along.max()
        p0, p1 = perp.min(), perp.max()
        area = (a1 - a0) * (p1 - p0)
        if best is None or area < best[0] * (1 - 1e-12):
            ca, cp = (a0 + a1) / 2, (p0 + p1) / 2
            cx = ca * ux - cp * uy
            cy = ca * uy + cp * ux
            best = (area, cx, cy, a1 - a0, p1 - p0, math.atan2(uy, ux))
    _, cx, cy, w, h, theta = best
    return _normalize_rect(cx, cy, w, h, theta)


def quad_to_rotated_rect(q) -> RotatedRect:
    return min_area_rect(as_quad(q))


def rotated_rect_to_quad(r: RotatedRect) -> np.ndarray:
    """Corners in the order (-w,-h), (+w,-h), (+w,+h), (-w,+h) of the local frame."""
    cx, cy, w, h, theta = r
    if w <= 0 or h <= 0:
        raise DegenerateGeometryError(f"rectangle needs w, h > 0, got {w}, {h}")
    c, s = math.cos(theta), math.sin(theta)
    local = np.array([[-w, -h], [w, -h], [w, h], [-w, h]], dtype=np.float64) / 2
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([cx, cy])


def axis_aligned_quad(x0: float, y0: float, x1: float, y1: float) -> np.ndarray:
    return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], dtype=np.float64)


def _clip(subject: list, a: tuple, b: tuple) -> list:
    """Keep the part of ``subject`` to the left of directed edge a->b."""

    def side(p):
        return (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])

    out = []
    n = len(subject)
    for i in range(n):
        cur, nxt = subject[i], subject[(i + 1) % n]
        sc, sn = side(cur), side(nxt)
        if sc >= 0:
            out.append(cur)
        if (sc >= 0) != (sn >= 0):
            t = sc / (sc - sn)
            out.append((cur[0] + t * (nxt[0] - cur[0]), cur[1] + t * (nxt[1] - cur[1])))
    return out


def convex_intersection_area(pa: np.ndarray, pb: np.ndarray) -> float:
    """Intersection area of two convex polygons given with positive orientation."""
    poly = [tuple(p) for p in np.asarray(pa).tolist()]
    pb = [tuple(p) for p in np.asarray(pb).tolist()]
    nb = len(pb)
    for i in range(nb):
        if not poly:
            return 0.0
        poly = _clip(poly, pb[i], pb[(i + 1) % nb])
    if len(poly) < 3:
        return 0.0
    return abs(polygon_area(poly))


def _disjoint_bounds(a: np.ndarray, b: np.ndarray) -> bool:
    (ax0, ay0), (ax1, ay1) = a.min(axis=0).tolist(), a.max(axis=0).tolist()
    (bx0, by0), (bx1, by1) = b.min(axis=0).tolist(), b.max(axis=0).tolist()
    return ax1 <= bx0 or bx1 <= ax0 or ay1 <= by0 or by1 <= ay0


def intersection_area(a, b) -> float:
    a, b = as_quad(a), as_quad(b)
    if _disjoint_bounds(a, b):
        return 0.0
    ha, hb = convex_hull(a), convex_hull(b)
    if len(ha) < 3 or len(hb) < 3:
        return 0.0
    return convex_intersection_area(ha, hb)


def iou(a, b) -> float:
    a, b = as_quad(a), as_quad(b)
    if _disjoint_bounds(a, b):
        if abs(polygon_area(a.tolist())) < _EPS_AREA and abs(polygon_area(b.tolist())) < _EPS_AREA:
            raise DegenerateGeometryError("IOU of two zero-area boxes is undefined")
        return 0.0
    ha, hb = convex_hull(a), convex_hull(b)
    area_a, area_b = abs(polygon_area(ha)), abs(polygon_area(hb))
    if area_a < _EPS_AREA and area_b < _EPS_AREA:
        raise DegenerateGeometryError("IOU of two zero-area boxes is undefined")
    if len(ha) < 3 or len(hb) < 3:
        return 0.0
    inter = convex_intersection_area(ha, hb)
    union = area_a + area_b - inter
    return min(1.0, max(0.0, inter / union))


def quad_bounds(q: np.ndarray) -> tuple[float, float, float, float]:
    """(x_min, y_min, x_max, y_max)."""
    return float(q[:, 0].min()), float(q[:, 1].min()), float(q[:, 0].max()), float(q[:, 1].max())


def quad_contains(q: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Vectorized inside test of points against the convex hull of ``q``."""
    hull = convex_hull(as_quad(q))
    inside = np.ones(np.broadcast(xs, ys).shape, dtype=bool)
    n = len(hull)
    if n < 3:
        return np.zeros_like(inside)
    for i in range(n):
        ax, ay = hull[i]
        bx, by = hull[(i + 1) % n]
        inside &= (bx - ax) * (ys - ay) - (by - ay) * (xs - ax) >= 0
    return inside


def rasterize_quad(q: np.ndarray, height: int, width: int) -> tuple[slice, slice, np.ndarray] | None:
    """Pixels whose centres fall inside ``q``, clipped to the frame.

    Returns ``(row_slice, col_slice, mask)`` for the covered window, or None
    when the quad misses the frame entirely.
    """
    x0, y0, x1, y1 = quad_bounds(q)
    c0 = max(int(math.floor(x0 - 0.5)), 0)
    c1 = min(int(math.ceil(x1 - 0.5)) + 1, width)
    r0 = max(int(math.floor(y0 - 0.5)), 0)
    r1 = min(int(math.ceil(y1 - 0.5)) + 1, height)
    if c0 >= c1 or r0 >= r1:
        return None
    ys, xs = np.mgrid[r0:r1, c0:c1]
    mask = quad_contains(q, xs + 0.5, ys + 0.5)
    return slice(r0, r1), slice(c0, c1), mask
