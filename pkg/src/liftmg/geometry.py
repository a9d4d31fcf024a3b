"""Planar geometry primitives shared by the simulator, sensors and planners.

Walls are stored as an ``(M, 4)`` array of ``x1, y1, x2, y2`` rows and object
footprints as ``(K, 2)`` arrays of convex polygon vertices in counter-clockwise
order.
"""

from __future__ import annotations

import math

import numpy as np

TWO_PI = 2.0 * math.pi


def normalize_angle(a: float) -> float:
    """Wrap an angle into ``(-pi, pi]``."""
    a = math.fmod(a, TWO_PI)
    if a <= -math.pi:
        a += TWO_PI
    elif a > math.pi:
        a -= TWO_PI
    return a


def point_segment_distance(px: float, py: float, segs: np.ndarray) -> np.ndarray:
    """Distance from one point to every segment row of ``segs``."""
    if len(segs) == 0:
        return np.empty(0)
    x1, y1, x2, y2 = segs[:, 0], segs[:, 1], segs[:, 2], segs[:, 3]
    dx = x2 - x1
    dy = y2 - y1
    ll = dx * dx + dy * dy
    t = ((px - x1) * dx + (py - y1) * dy) / np.where(ll > 0, ll, 1.0)
    t = np.clip(t, 0.0, 1.0)
    cx = x1 + t * dx - px
    cy = y1 + t * dy - py
    return np.sqrt(cx * cx + cy * cy)


def points_segments_min_distance(pts: np.ndarray, segs: np.ndarray) -> np.ndarray:
    """Minimum distance from each of ``N`` points to a set of segments."""
    if len(segs) == 0:
        return np.full(len(pts), np.inf)
    px = pts[:, 0:1]
    py = pts[:, 1:2]
    x1, y1, x2, y2 = (segs[:, i][None, :] for i in range(4))
    dx = x2 - x1
    dy = y2 - y1
    ll = dx * dx + dy * dy
    t = ((px - x1) * dx + (py - y1) * dy) / np.where(ll > 0, ll, 1.0)
    np.clip(t, 0.0, 1.0, out=t)
    cx = x1 + t * dx - px
    cy = y1 + t * dy - py
    return np.sqrt((cx * cx + cy * cy).min(axis=1))


def polygon_edges(poly: np.ndarray) -> np.ndarray:
    """Edge segments of a closed polygon as an ``(K, 4)`` array."""
    nxt = np.roll(poly, -1, axis=0)
    return np.hstack([poly, nxt])


def point_in_polygon(px: float, py: float, poly: np.ndarray, tol: float = 0.0) -> bool:
    """Point inside a CCW convex polygon, with ``tol`` outward slack."""
    n = len(poly)
    for i in range(n):
        ax, ay = poly[i]
        bx, by = poly[(i + 1) % n]
        ex, ey = bx - ax, by - ay
        el = math.hypot(ex, ey)
        # signed distance to the left of the edge (inside for CCW)
        if (ex * (py - ay) - ey * (px - ax)) / el < -tol:
            return False
    return True


def points_in_polygon(pts: np.ndarray, poly: np.ndarray, tol: float = 0.0) -> np.ndarray:
    """Vectorised :func:`point_in_polygon` over an ``(N, 2)`` array."""
    inside = np.ones(len(pts), dtype=bool)
    n = len(poly)
    for i in range(n):
        ax, ay = poly[i]
        bx, by = poly[(i + 1) % n]
        ex, ey = bx - ax, by - ay
        el = math.hypot(ex, ey)
        inside &= (ex * (pts[:, 1] - ay) - ey * (pts[:, 0] - ax)) / el >= -tol
    return inside


def point_polygon_distance(px: float, py: float, poly: np.ndarray) -> float:
    """Distance from a point to a convex polygon (0 inside)."""
    if point_in_polygon(px, py, poly):
        return 0.0
    return float(point_segment_distance(px, py, polygon_edges(poly)).min())


def _cross(ax, ay, bx, by):
    return ax * by - ay * bx


def segment_intersection(p, q, a, b):
    """Parameter ``t`` along ``p->q`` where it crosses segment ``a-b``, or None."""
    rx, ry = q[0] - p[0], q[1] - p[1]
    sx, sy = b[0] - a[0], b[1] - a[1]
    den = _cross(rx, ry, sx, sy)
    if abs(den) < 1e-15:
        return None
    qpx, qpy = a[0] - p[0], a[1] - p[1]
    t = _cross(qpx, qpy, sx, sy) / den
    u = _cross(qpx, qpy, rx, ry) / den
    if 0.0 <= t <= 1.0 and 0.0 <= u <= 1.0:
        return t
    return None


def segment_hits_segments(p, q, segs: np.ndarray) -> bool:
    """Whether segment ``p->q`` touches any row of ``segs``."""
    if len(segs) == 0:
        return False
    rx, ry = q[0] - p[0], q[1] - p[1]
    sx = segs[:, 2] - segs[:, 0]
    sy = segs[:, 3] - segs[:, 1]
    den = rx * sy - ry * sx
    qpx = segs[:, 0] - p[0]
    qpy = segs[:, 1] - p[1]
    ok = np.abs(den) > 1e-15
    safe = np.where(ok, den, 1.0)
    t = (qpx * sy - qpy * sx) / safe
    u = (qpx * ry - qpy * rx) / safe
    hit = ok & (t >= 0.0) & (t <= 1.0) & (u >= 0.0) & (u <= 1.0)
    return bool(hit.any())


def segment_polygon_contact(p, q, poly: np.ndarray):
    """First contact of the sweep ``p->q`` with a convex polygon.

    Returns ``(point, outward_normal)`` or ``None`` when the sweep misses.
    A sweep starting inside reports its start point and the normal of the
    nearest edge.
    """
    n = len(poly)
    if point_in_polygon(p[0], p[1], poly):
        best = None
        for i in range(n):
            a = poly[i]
            b = poly[(i + 1) % n]
            ex, ey = b[0] - a[0], b[1] - a[1]
            el = math.hypot(ex, ey)
            d = (ex * (p[1] - a[1]) - ey * (p[0] - a[0])) / el
            if best is None or d < best[0]:
                best = (d, (ey / el, -ex / el))
        return (float(p[0]), float(p[1])), best[1]
    best_t = None
    normal = None
    for i in range(n):
        a = poly[i]
        b = poly[(i + 1) % n]
        t = segment_intersection(p, q, a, b)
        if t is not None and (best_t is None or t < best_t):
            ex, ey = b[0] - a[0], b[1] - a[1]
            el = math.hypot(ex, ey)
            best_t = t
            normal = (ey / el, -ex / el)
    if best_t is None:
        return None
    return (p[0] + best_t * (q[0] - p[0]), p[1] + best_t * (q[1] - p[1])), normal


def polygons_overlap(a: np.ndarray, b: np.ndarray, eps: float = 1e-9) -> bool:
    """Strict overlap of two convex polygons (touching does not count)."""
    for poly in (a, b):
        n = len(poly)
        for i in range(n):
            ex = poly[(i + 1) % n, 0] - poly[i, 0]
            ey = poly[(i + 1) % n, 1] - poly[i, 1]
            nx, ny = -ey, ex
            pa = a[:, 0] * nx + a[:, 1] * ny
            pb = b[:, 0] * nx + b[:, 1] * ny
            scale = math.hypot(nx, ny)
            if pa.max() - pb.min() <= eps * scale or pb.max() - pa.min() <= eps * scale:
                return False
    return True


def segments_cross_polygon(segs: np.ndarray, poly: np.ndarray, eps: float = 1e-9) -> bool:
    """Whether any segment enters the interior of a convex polygon."""
    if len(segs) == 0:
        return False
    for s in segs:
        seg = np.array([[s[0], s[1]], [s[2], s[3]]])
        # a segment is a degenerate convex polygon; SAT needs its normal too
        ex, ey = s[2] - s[0], s[3] - s[1]
        nx, ny = -ey, ex
        pa = seg[:, 0] * nx + seg[:, 1] * ny
        pb = poly[:, 0] * nx + poly[:, 1] * ny
        scale = math.hypot(nx, ny)
        if scale > 0 and (pa.max() - pb.min() <= eps * scale or pb.max() - pa.min() <= eps * scale):
            continue
        separated = False
        n = len(poly)
        for i in range(n):
            px = poly[(i + 1) % n, 0] - poly[i, 0]
            py = poly[(i + 1) % n, 1] - poly[i, 1]
            mx, my = -py, px
            qa = seg[:, 0] * mx + seg[:, 1] * my
            qb = poly[:, 0] * mx + poly[:, 1] * my
            sc = math.hypot(mx, my)
            if qa.max() - qb.min() <= eps * sc or qb.max() - qa.min() <= eps * sc:
                separated = True
                break
        if not separated:
            return True
    return False


def disc_hits_polygon(cx: float, cy: float, r: float, poly: np.ndarray) -> bool:
    if point_in_polygon(cx, cy, poly):
        return True
    return bool(point_segment_distance(cx, cy, polygon_edges(poly)).min() < r)


def transform_points(local: np.ndarray, x: float, y: float, theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    out = np.empty_like(local, dtype=np.float64)
    out[:, 0] = x + c * local[:, 0] - s * local[:, 1]
    out[:, 1] = y + s * local[:, 0] + c * local[:, 1]
    return out


def ray_segment_ranges(ox: float, oy: float, angles: np.ndarray, segs: np.ndarray,
                       max_range: float) -> np.ndarray:
    """Range along each ray to the nearest segment, capped at ``max_range``."""
    out = np.full(len(angles), max_range)
    if len(segs) == 0:
        return out
    dx = np.cos(angles)[:, None]
    dy = np.sin(angles)[:, None]
    x1, y1 = segs[:, 0][None, :], segs[:, 1][None, :]
    sx = (segs[:, 2] - segs[:, 0])[None, :]
    sy = (segs[:, 3] - segs[:, 1])[None, :]
    den = dx * sy - dy * sx
    qx = x1 - ox
    qy = y1 - oy
    ok = np.abs(den) > 1e-12
    safe = np.where(ok, den, 1.0)
    t = (qx * sy - qy * sx) / safe
    u = (qx * dy - qy * dx) / safe
    hit = ok & (t > 1e-9) & (u >= 0.0) & (u <= 1.0)
    t = np.where(hit, t, np.inf)
    return np.minimum(out, t.min(axis=1))
