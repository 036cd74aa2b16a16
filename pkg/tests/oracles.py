"""Independent reference implementations the package is checked against.

None of these reuse package internals beyond plain data types: the
interval oracle samples the distance densely and refines boundaries by
bisection, the cell and bin oracles enumerate every cell or bin.
"""

from __future__ import annotations

import itertools

import numpy as np

from trajsearch.fsg import GridSpec
from trajsearch.geometry import Mbb, SegmentST


def _dist(p0, p1, t0, t1, r0, r1, s0, s1, t):
    """Distance between the two moving points at times ``t`` (shape ``(n, k)``)."""
    fa = (t - t0[:, None]) / (t1 - t0)[:, None]
    fb = (t - s0[:, None]) / (s1 - s0)[:, None]
    pa = p0[:, None, :] + fa[..., None] * (p1 - p0)[:, None, :]
    pb = r0[:, None, :] + fb[..., None] * (r1 - r0)[:, None, :]
    return np.sqrt(((pb - pa) ** 2).sum(axis=-1))


def interval_oracle(e0, e1, et0, et1, q0, q1, qt0, qt1, d, samples: int = 1000, iters: int = 200):
    """Interaction intervals by dense sampling plus bisection.

    The squared distance is convex in time, so after locating the sampled
    minimum, a golden-section pass pins the true minimum and each boundary is
    found by bisection between a point outside and a point inside the
    threshold. Returns ``(hit, begin, end, clipped_lo, clipped_hi)``.
    """
    e0, e1, q0, q1 = (np.asarray(x, dtype=float).reshape(-1, 3) for x in (e0, e1, q0, q1))
    et0, et1, qt0, qt1 = (np.asarray(x, dtype=float).reshape(-1) for x in (et0, et1, qt0, qt1))
    n = len(e0)
    a = np.maximum(et0, qt0)
    b = np.minimum(et1, qt1)
    hit = np.zeros(n, dtype=bool)
    begin = np.full(n, np.nan)
    end = np.full(n, np.nan)
    clip_lo = np.zeros(n, dtype=bool)
    clip_hi = np.zeros(n, dtype=bool)
    live = np.flatnonzero(a <= b)
    args = lambda idx: (e0[idx], e1[idx], et0[idx], et1[idx], q0[idx], q1[idx], qt0[idx], qt1[idx])  # noqa: E731
    for lo in range(0, len(live), max(1, 2_000_000 // samples)):
        idx = live[lo:lo + max(1, 2_000_000 // samples)]
        A, B = a[idx], b[idx]
        grid = A[:, None] + (B - A)[:, None] * np.linspace(0.0, 1.0, samples)[None, :]
        f = _dist(*args(idx), grid)
        k = np.argmin(f, axis=1)
        rows = np.arange(len(idx))
        left = grid[rows, np.maximum(k - 1, 0)]
        right = grid[rows, np.minimum(k + 1, samples - 1)]
        # golden-section search for the minimum inside the bracketing samples
        g = (np.sqrt(5.0) - 1.0) / 2.0
        for _ in range(iters):
            m1 = right - g * (right - left)
            m2 = left + g * (right - left)
            f1 = _dist(*args(idx), m1[:, None])[:, 0]
            f2 = _dist(*args(idx), m2[:, None])[:, 0]
            shrink_right = f1 <= f2
            right = np.where(shrink_right, m2, right)
            left = np.where(shrink_right, left, m1)
        t_star = 0.5 * (left + right)
        candidates = np.stack([t_star, grid[rows, k]], axis=1)
        fc = _dist(*args(idx), candidates)
        best = np.argmin(fc, axis=1)
        t_star = candidates[rows, best]
        inside = fc[rows, best] <= d
        f_a = _dist(*args(idx), A[:, None])[:, 0]
        f_b = _dist(*args(idx), B[:, None])[:, 0]
        # left boundary: bisection on [A, t_star]
        out_t, in_t = A.copy(), t_star.copy()
        for _ in range(iters):
            mid = 0.5 * (out_t + in_t)
            fm = _dist(*args(idx), mid[:, None])[:, 0]
            out_t = np.where(fm > d, mid, out_t)
            in_t = np.where(fm > d, in_t, mid)
        lo_t = np.where(f_a <= d, A, in_t)
        out_t, in_t = B.copy(), t_star.copy()
        for _ in range(iters):
            mid = 0.5 * (out_t + in_t)
            fm = _dist(*args(idx), mid[:, None])[:, 0]
            out_t = np.where(fm > d, mid, out_t)
            in_t = np.where(fm > d, in_t, mid)
        hi_t = np.where(f_b <= d, B, in_t)
        hit[idx] = inside
        begin[idx] = np.where(inside, lo_t, np.nan)
        end[idx] = np.where(inside, hi_t, np.nan)
        clip_lo[idx] = inside & (f_a <= d)
        clip_hi[idx] = inside & (f_b <= d)
    return hit, begin, end, clip_lo, clip_hi


def sampled_interval(entry: SegmentST, query: SegmentST, d: float, samples: int = 10_000):
    """Scalar form of :func:`interval_oracle`; ``None`` when the pair never comes within ``d``."""
    hit, begin, end, _, _ = interval_oracle(
        [entry.start], [entry.end], [entry.t_start], [entry.t_end],
        [query.start], [query.end], [query.t_start], [query.t_end], d, samples=samples,
    )
    return (float(begin[0]), float(end[0])) if hit[0] else None


def distance_at(e0, e1, et0, et1, q0, q1, qt0, qt1, t):
    return _dist(
        np.asarray(e0, float).reshape(-1, 3), np.asarray(e1, float).reshape(-1, 3),
        np.asarray(et0, float).reshape(-1), np.asarray(et1, float).reshape(-1),
        np.asarray(q0, float).reshape(-1, 3), np.asarray(q1, float).reshape(-1, 3),
        np.asarray(qt0, float).reshape(-1), np.asarray(qt1, float).reshape(-1),
        np.asarray(t, float).reshape(-1, 1),
    )[:, 0]


def cells_touching(box: Mbb, spec: GridSpec) -> set[tuple[int, int, int]]:
    """Every cell whose closed extent intersects ``box``, by enumeration."""
    out = set()
    gx, gy, gz = spec.counts
    for c in itertools.product(range(gx), range(gy), range(gz)):
        ok = True
        for k in range(3):
            lo = spec.origin[k] + c[k] * spec.cell_size[k]
            hi = spec.origin[k] + (c[k] + 1) * spec.cell_size[k]
            if box.max[k] < lo or box.min[k] > hi:
                ok = False
                break
        if ok:
            out.add(c)
    return out


def bins_overlapping(b_start, b_end, b_first, t0: float, t1: float) -> list[int]:
    """Non-empty bins whose ``[b_start, b_end]`` intersects ``[t0, t1]``."""
    return [j for j in range(len(b_start)) if b_first[j] >= 0 and b_start[j] <= t1 and b_end[j] >= t0]


def overlapping_pairs(entries, queries) -> set[tuple[int, int]]:
    """(query row, entry row) pairs with a non-empty temporal overlap."""
    out = set()
    for q in range(len(queries)):
        ok = (entries.t_start <= queries.t_end[q]) & (entries.t_end >= queries.t_start[q])
        out.update((q, int(e)) for e in np.flatnonzero(ok))
    return out
