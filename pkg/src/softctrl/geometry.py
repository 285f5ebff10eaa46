"""Planar geometry helpers: oriented boxes and polyline distances."""
from __future__ import annotations

import numpy as np


def box_corners(x, y, theta, length, width) -> np.ndarray:
    """Corners of an oriented rectangle centred on (x, y), shape (4, 2), counter-clockwise."""
    c, s = np.cos(theta), np.sin(theta)
    hl, hw = 0.5 * length, 0.5 * width
    local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([x, y])


def boxes_overlap(a: np.ndarray, b: np.ndarray) -> bool:
    """Separating-axis test for two convex quadrilaterals given as corner arrays.

    Touching boxes (zero-width overlap) count as overlapping.
    """
    for corners in (a, b):
        edges = np.roll(corners, -1, axis=0) - corners
        # only two distinct edge normals per rectangle
        for ex, ey in edges[:2]:
            axis = np.array([-ey, ex])
            pa = a @ axis
            pb = b @ axis
            if pa.max() < pb.min() or pb.max() < pa.min():
                return False
    return True


def point_in_box(points: np.ndarray, x, y, theta, length, width) -> np.ndarray:
    """Boolean mask of which (N, 2) points fall inside the oriented rectangle."""
    d = points - np.array([x, y])
    c, s = np.cos(theta), np.sin(theta)
    lx = c * d[:, 0] + s * d[:, 1]
    ly = -s * d[:, 0] + c * d[:, 1]
    return (np.abs(lx) <= 0.5 * length) & (np.abs(ly) <= 0.5 * width)


def point_segment_distances(point, starts: np.ndarray, ends: np.ndarray) -> np.ndarray:
    """Distance from ``point`` to each segment ``starts[i] -> ends[i]``.

    Zero-length segments degrade to point distances.
    """
    p = np.asarray(point, dtype=float)
    seg = ends - starts
    seg_len2 = np.einsum("ij,ij->i", seg, seg)
    rel = p - starts
    with np.errstate(invalid="ignore", divide="ignore"):
        t = np.where(seg_len2 > 0, np.einsum("ij,ij->i", rel, seg) / seg_len2, 0.0)
    t = np.clip(t, 0.0, 1.0)
    closest = starts + t[:, None] * seg
    return np.hypot(*(p - closest).T)


def point_polyline_distance(point, polyline: np.ndarray) -> float:
    polyline = np.asarray(polyline, dtype=float)
    if len(polyline) == 1:
        return float(np.hypot(*(np.asarray(point) - polyline[0])))
    return float(point_segment_distances(point, polyline[:-1], polyline[1:]).min())


def points_polyline_distance(points, polyline: np.ndarray, chunk: int = 512) -> np.ndarray:
    """Nearest-segment distance for each row of ``points`` (n, 2)."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    poly = np.asarray(polyline, dtype=float)
    if len(poly) == 1:
        return np.hypot(*(pts - poly[0]).T)
    starts, seg = poly[:-1], poly[1:] - poly[:-1]
    seg_len2 = np.einsum("ij,ij->i", seg, seg)
    safe = np.where(seg_len2 > 0, seg_len2, 1.0)
    out = np.empty(len(pts))
    for lo in range(0, len(pts), chunk):
        rel = pts[lo: lo + chunk, None, :] - starts[None]
        t = np.clip(np.where(seg_len2 > 0, np.einsum("nij,ij->ni", rel, seg) / safe, 0.0), 0.0, 1.0)
        diff = rel - t[..., None] * seg[None]
        out[lo: lo + chunk] = np.sqrt(np.min(np.einsum("nij,nij->ni", diff, diff), axis=1))
    return out


def project_onto_polyline(point, polyline: np.ndarray) -> float:
    """Arc-length coordinate of the closest point on ``polyline``."""
    starts, ends = polyline[:-1], polyline[1:]
    seg = ends - starts
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    rel = np.asarray(point) - starts
    t = np.clip(np.einsum("ij,ij->i", rel, seg) / np.maximum(seg_len, 1e-12) ** 2, 0.0, 1.0)
    closest = starts + t[:, None] * seg
    d = np.hypot(*(np.asarray(point) - closest).T)
    i = int(np.argmin(d))
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    return float(cum[i] + t[i] * seg_len[i])


def sample_polyline(polyline: np.ndarray, arc_positions: np.ndarray):
    """Points at the given arc lengths; positions outside [0, length] are flagged absent."""
    seg = np.diff(polyline, axis=0)
    cum = np.concatenate([[0.0], np.cumsum(np.hypot(seg[:, 0], seg[:, 1]))])
    present = (arc_positions >= 0.0) & (arc_positions <= cum[-1])
    s = np.clip(arc_positions, 0.0, cum[-1])
    xs = np.interp(s, cum, polyline[:, 0])
    ys = np.interp(s, cum, polyline[:, 1])
    return np.stack([xs, ys], axis=1), present
