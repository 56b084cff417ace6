"""Planar convex hulls of complex point sets and the convex perimeter.

Complex sequences are treated as planar point clouds (real part = x,
imaginary part = y).  The hull walk is returned as a closed counter-clockwise
index cycle so the perimeter is literally the sum of consecutive edge
lengths.  Degenerate inputs are kept continuous: a single point has
perimeter 0, two points (or any collinear set) traverse the extreme segment
out and back, i.e. perimeter = 2 * segment length.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Coincident points are collapsed before the hull walk.
DEDUP_TOL = 1e-12


@dataclass
class HullResult:
    """Closed CCW vertex cycle (indices into the input) and its edge-length sum.

    ``vertex_indices`` repeats the starting vertex at the end whenever there
    is more than one distinct vertex; a single-point hull is just ``[i]``.
    """

    vertex_indices: np.ndarray
    perimeter: float


def _dedup(points: np.ndarray) -> np.ndarray:
    """Indices of representative points, coincident ones (within tol) dropped.

    Keeps the lowest original index of each coincident group.
    """
    order = np.lexsort((points.imag, points.real))
    reps = []
    anchor = None
    best = -1
    for i in order:
        p = points[i]
        new_group = (
            anchor is None
            or abs(p.real - anchor.real) > DEDUP_TOL
            or abs(p.imag - anchor.imag) > DEDUP_TOL
        )
        if new_group:
            if best >= 0:
                reps.append(best)
            anchor = p
            best = int(i)
        elif i < best:
            best = int(i)
    reps.append(best)
    return np.asarray(sorted(reps), dtype=np.intp)


def _prune_interior(points: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Akl-Toussaint pruning: drop points strictly inside the extreme octagon.

    Exact (never removes a hull vertex); used only to keep large inputs cheap.
    """
    x, y = points[idx].real, points[idx].imag
    anchors = set()
    for proj in (x, y, x + y, x - y):
        anchors.add(idx[int(np.argmin(proj))])
        anchors.add(idx[int(np.argmax(proj))])
    anchors = np.asarray(sorted(anchors), dtype=np.intp)
    if len(anchors) < 3:
        return idx
    hull_a = _chain(points, anchors)
    if len(hull_a) < 3:
        return idx
    # strict inside test against the anchor polygon
    poly = points[hull_a]
    p = points[idx]
    inside = np.ones(len(idx), dtype=bool)
    for k in range(len(poly)):
        a, b = poly[k], poly[(k + 1) % len(poly)]
        cross = (b.real - a.real) * (p.imag - a.imag) - (b.imag - a.imag) * (p.real - a.real)
        inside &= cross > 0.0
    return idx[~inside]


def _chain(points: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Andrew monotone chain over ``points[idx]``; returns open CCW cycle.

    Collinear points are dropped (strict turns only), so a fully collinear
    input reduces to its two extreme indices.
    """
    order = idx[np.lexsort((points[idx].imag, points[idx].real))]

    def build(seq):
        out = []
        for i in seq:
            while len(out) >= 2:
                a, b = points[out[-2]], points[out[-1]]
                c = points[i]
                cross = (b.real - a.real) * (c.imag - a.imag) - (b.imag - a.imag) * (c.real - a.real)
                if cross <= 0.0:  # clockwise or collinear: discard middle
                    out.pop()
                else:
                    break
            out.append(i)
        return out

    lower = build(order)
    upper = build(order[::-1])
    return np.asarray(lower[:-1] + upper[:-1], dtype=np.intp)


def convex_hull(points: np.ndarray) -> HullResult:
    """Convex hull of a complex point set.

    Returns the CCW closed vertex cycle (original indices, start repeated at
    the end) and the cycle's total edge length.  Raises ``ValueError`` on
    empty or non-finite input.
    """
    points = np.asarray(points, dtype=complex).ravel()
    if points.size == 0:
        raise ValueError("convex hull of an empty point set")
    if not np.all(np.isfinite(points)):
        raise ValueError("convex hull input contains non-finite points")

    idx = _dedup(points)
    if len(idx) == 1:
        return HullResult(np.asarray([idx[0]], dtype=np.intp), 0.0)
    if len(idx) > 256:
        idx = _prune_interior(points, idx)

    cycle = _chain(points, idx)
    closed = np.concatenate([cycle, cycle[:1]])
    edges = points[closed[1:]] - points[closed[:-1]]
    return HullResult(closed, float(np.sum(np.abs(edges))))


def perimeter_of(points: np.ndarray) -> float:
    """Convex perimeter of a complex point set (0 for a single point)."""
    return convex_hull(points).perimeter


def hull_support_map(hull_points: np.ndarray, sequence: np.ndarray) -> np.ndarray:
    """Index of the raw sample nearest to each hull/alphabet point.

    Ties resolve to the lowest sample index.  ``hull_points`` may repeat the
    starting vertex (closed cycle); the map is applied pointwise.
    """
    hull_points = np.asarray(hull_points, dtype=complex).ravel()
    sequence = np.asarray(sequence, dtype=complex).ravel()
    if hull_points.size == 0 or sequence.size == 0:
        raise ValueError("hull_support_map requires nonempty inputs")
    # argmin returns the first (lowest) index on exact ties
    d = np.abs(sequence[None, :] - hull_points[:, None])
    return np.argmin(d, axis=1).astype(np.intp)
