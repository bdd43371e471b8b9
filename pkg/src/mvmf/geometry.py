"""Small planar geometry helpers shared by the planner and simulator."""
from __future__ import annotations

import numpy as np


def as_point(p) -> np.ndarray:
    a = np.asarray(p, dtype=float).reshape(2)
    if not np.all(np.isfinite(a)):
        raise ValueError(f"non-finite point {p!r}")
    return a


def point_segment_distance(p, a, b) -> float:
    p, a, b = np.asarray(p, float), np.asarray(a, float), np.asarray(b, float)
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return float(np.hypot(*(p - a)))
    s = np.clip(float((p - a) @ ab) / denom, 0.0, 1.0)
    return float(np.hypot(*(p - (a + s * ab))))


def point_polyline_distance(p, pts) -> float:
    """Distance from ``p`` to the polyline through ``pts`` (shape (n, 2))."""
    pts = np.asarray(pts, dtype=float)
    p = np.asarray(p, dtype=float)
    if len(pts) == 1:
        return float(np.hypot(*(p - pts[0])))
    a, b = pts[:-1], pts[1:]
    ab = b - a
    denom = np.einsum("ij,ij->i", ab, ab)
    s = np.einsum("ij,ij->i", p - a, ab)
    s = np.divide(s, denom, out=np.zeros_like(s), where=denom > 0)
    s = np.clip(s, 0.0, 1.0)
    closest = a + s[:, None] * ab
    return float(np.min(np.hypot(*(p - closest).T)))


def segment_intersection(p0, p1, q0, q1, eps: float = 1e-12):
    """Intersection of segments p0-p1 and q0-q1.

    Returns ``(s, u)``, the fractional positions along each segment, or None
    when the segments do not meet. Collinear overlaps are reported as None.
    """
    r = (p1[0] - p0[0], p1[1] - p0[1])
    d = (q1[0] - q0[0], q1[1] - q0[1])
    denom = r[0] * d[1] - r[1] * d[0]
    if abs(denom) <= eps * (abs(r[0]) + abs(r[1])) * (abs(d[0]) + abs(d[1])) or denom == 0.0:
        return None
    w = (q0[0] - p0[0], q0[1] - p0[1])
    s = (w[0] * d[1] - w[1] * d[0]) / denom
    u = (w[0] * r[1] - w[1] * r[0]) / denom
    if 0.0 <= s <= 1.0 and 0.0 <= u <= 1.0:
        return s, u
    return None


def polyline_length(pts) -> float:
    pts = np.asarray(pts, dtype=float)
    if len(pts) < 2:
        return 0.0
    return float(np.sum(np.hypot(*np.diff(pts, axis=0).T)))


def point_along(pts, dist: float) -> np.ndarray:
    """Point at arc length ``dist`` along a polyline (clamped to its ends)."""
    pts = np.asarray(pts, dtype=float)
    if len(pts) == 1 or dist <= 0:
        return pts[0].copy()
    seg = np.hypot(*np.diff(pts, axis=0).T)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    if dist >= cum[-1]:
        return pts[-1].copy()
    i = int(np.searchsorted(cum, dist, side="right") - 1)
    f = (dist - cum[i]) / seg[i] if seg[i] > 0 else 0.0
    return pts[i] + f * (pts[i + 1] - pts[i])
