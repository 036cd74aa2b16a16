"""Continuous-time distance between linearly moving points.

Every index in the package reduces a search to candidate (entry, query)
pairs and hands them to :func:`interaction_intervals`, the vectorized form of
:func:`compare`. Two segments interact over the closed time interval where
their Euclidean separation is at most ``d``; with linear motion the squared
separation is a quadratic in time, so that set is a single interval.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import GeometryError

# Below this the relative motion is treated as linear (or stationary).
DEGENERATE_QUADRATIC = 1e-300


class Point3(NamedTuple):
    x: float
    y: float
    z: float


@dataclass(frozen=True)
class SegmentST:
    """One trajectory edge: linear motion from ``start`` at ``t_start`` to ``end`` at ``t_end``."""

    trajectory_id: int
    segment_id: int
    start: Point3
    end: Point3
    t_start: float
    t_end: float

    def __post_init__(self):
        object.__setattr__(self, "start", Point3(*map(float, self.start)))
        object.__setattr__(self, "end", Point3(*map(float, self.end)))
        values = (*self.start, *self.end, self.t_start, self.t_end)
        if not all(math.isfinite(v) for v in values):
            raise ValueError(f"segment ({self.trajectory_id}, {self.segment_id}) has non-finite values")
        if not self.t_start < self.t_end:
            raise ValueError(
                f"segment ({self.trajectory_id}, {self.segment_id}) needs t_start < t_end, "
                f"got [{self.t_start}, {self.t_end}]"
            )


@dataclass(frozen=True)
class Mbb:
    min: Point3
    max: Point3


@dataclass(frozen=True)
class TimeInterval:
    begin: float
    end: float


@dataclass(frozen=True)
class Interaction:
    query_trajectory_id: int
    query_segment_id: int
    entry_trajectory_id: int
    entry_segment_id: int
    interval: TimeInterval


@dataclass
class Segments:
    """Columnar storage for many segments (the shape every kernel works on).

    ``start``/``end`` are ``(n, 3)`` float64 arrays; ids are int64.
    """

    trajectory_id: np.ndarray
    segment_id: np.ndarray
    start: np.ndarray
    end: np.ndarray
    t_start: np.ndarray
    t_end: np.ndarray

    def __post_init__(self):
        self.trajectory_id = np.ascontiguousarray(self.trajectory_id, dtype=np.int64)
        self.segment_id = np.ascontiguousarray(self.segment_id, dtype=np.int64)
        self.start = np.ascontiguousarray(self.start, dtype=np.float64).reshape(-1, 3)
        self.end = np.ascontiguousarray(self.end, dtype=np.float64).reshape(-1, 3)
        self.t_start = np.ascontiguousarray(self.t_start, dtype=np.float64)
        self.t_end = np.ascontiguousarray(self.t_end, dtype=np.float64)
        n = len(self.trajectory_id)
        for name in ("segment_id", "start", "end", "t_start", "t_end"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"column {name!r} has length {len(getattr(self, name))}, expected {n}")

    def __len__(self) -> int:
        return len(self.trajectory_id)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Segments):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, f), getattr(other, f))
            for f in ("trajectory_id", "segment_id", "start", "end", "t_start", "t_end")
        )

    @classmethod
    def from_segments(cls, segments: Sequence[SegmentST]) -> "Segments":
        return cls(
            trajectory_id=np.array([s.trajectory_id for s in segments], dtype=np.int64),
            segment_id=np.array([s.segment_id for s in segments], dtype=np.int64),
            start=np.array([s.start for s in segments], dtype=np.float64).reshape(-1, 3),
            end=np.array([s.end for s in segments], dtype=np.float64).reshape(-1, 3),
            t_start=np.array([s.t_start for s in segments], dtype=np.float64),
            t_end=np.array([s.t_end for s in segments], dtype=np.float64),
        )

    def take(self, idx) -> "Segments":
        return Segments(
            self.trajectory_id[idx], self.segment_id[idx], self.start[idx],
            self.end[idx], self.t_start[idx], self.t_end[idx],
        )

    def segment(self, i: int) -> SegmentST:
        return SegmentST(
            int(self.trajectory_id[i]), int(self.segment_id[i]),
            Point3(*self.start[i].tolist()), Point3(*self.end[i].tolist()),
            float(self.t_start[i]), float(self.t_end[i]),
        )

    def __iter__(self):
        for i in range(len(self)):
            yield self.segment(i)

    def mbb_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-segment spatial MBB corners, each ``(n, 3)``."""
        return np.minimum(self.start, self.end), np.maximum(self.start, self.end)


def mbb_of_segment(seg: SegmentST) -> Mbb:
    return Mbb(
        Point3(*(min(a, b) for a, b in zip(seg.start, seg.end))),
        Point3(*(max(a, b) for a, b in zip(seg.start, seg.end))),
    )


def expand_mbb(box: Mbb, d: float) -> Mbb:
    if d < 0:
        raise ValueError(f"expansion distance must be >= 0, got {d}")
    return Mbb(Point3(*(c - d for c in box.min)), Point3(*(c + d for c in box.max)))


def position_at(seg: SegmentST, t: float) -> Point3:
    if not seg.t_start <= t <= seg.t_end:
        raise ValueError(f"t={t} outside segment extent [{seg.t_start}, {seg.t_end}]")
    frac = (t - seg.t_start) / (seg.t_end - seg.t_start)
    return Point3(*(s + frac * (e - s) for s, e in zip(seg.start, seg.end)))


def positions_at(start, end, t_start, t_end, t) -> np.ndarray:
    """Vectorized :func:`position_at` without the range check."""
    frac = (np.asarray(t) - t_start) / (t_end - t_start)
    return start + frac[..., None] * (end - start)


def interaction_intervals(
    e_start: np.ndarray, e_end: np.ndarray, e_t0: np.ndarray, e_t1: np.ndarray,
    q_start: np.ndarray, q_end: np.ndarray, q_t0: np.ndarray, q_t1: np.ndarray,
    d: float,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Closed interaction interval for each (entry, query) pair.

    Inputs are aligned arrays (``(n, 3)`` positions, ``(n,)`` times).
    Returns ``(hit, begin, end)``; ``begin``/``end`` are NaN where ``hit`` is
    False. Endpoints clipped to the temporal overlap are returned as the
    overlap bounds exactly.
    """
    if not d > 0:
        raise ValueError(f"distance threshold must be > 0, got {d}")
    e_t0 = np.asarray(e_t0, dtype=np.float64)
    q_t0 = np.asarray(q_t0, dtype=np.float64)
    a = np.maximum(e_t0, q_t0)
    b = np.minimum(e_t1, q_t1)
    n = a.shape[0]
    hit = np.zeros(n, dtype=bool)
    begin = np.full(n, np.nan)
    end = np.full(n, np.nan)

    idx = np.flatnonzero(a <= b)
    if idx.size == 0:
        return hit, begin, end
    a, b = a[idx], b[idx]
    es, ee = e_start[idx], e_end[idx]
    qs, qe = q_start[idx], q_end[idx]
    et0, et1 = e_t0[idx], np.asarray(e_t1)[idx]
    qt0, qt1 = q_t0[idx], np.asarray(q_t1)[idx]

    e_dur = et1 - et0
    q_dur = qt1 - qt0
    e_step = ee - es
    q_step = qe - qs
    # overflow here surfaces as a GeometryError just below
    with np.errstate(over="ignore", invalid="ignore"):
        # relative displacement at the overlap start, and its rate of change
        delta0 = (qs + ((a - qt0) / q_dur)[:, None] * q_step) - (es + ((a - et0) / e_dur)[:, None] * e_step)
        w = q_step / q_dur[:, None] - e_step / e_dur[:, None]
        qa = w[:, 0] * w[:, 0] + w[:, 1] * w[:, 1] + w[:, 2] * w[:, 2]
        qb = 2.0 * (delta0[:, 0] * w[:, 0] + delta0[:, 1] * w[:, 1] + delta0[:, 2] * w[:, 2])
        qc = (delta0[:, 0] * delta0[:, 0] + delta0[:, 1] * delta0[:, 1] + delta0[:, 2] * delta0[:, 2]) - d * d
    span = b - a

    if not (np.isfinite(qa).all() and np.isfinite(qb).all() and np.isfinite(qc).all()):
        raise GeometryError("non-finite coefficient in distance quadratic")

    lo = np.full(idx.size, np.inf)
    hi = np.full(idx.size, -np.inf)

    linear = qa < DEGENERATE_QUADRATIC
    if linear.any():
        lb, lc = qb[linear], qc[linear]
        l_lo = np.full(lb.shape, np.inf)
        l_hi = np.full(lb.shape, -np.inf)
        const = lb == 0.0
        inside = const & (lc <= 0.0)
        l_lo[inside] = -np.inf
        l_hi[inside] = np.inf
        sloped = ~const
        with np.errstate(divide="ignore", invalid="ignore"):
            root = -lc[sloped] / lb[sloped]
        rising = lb[sloped] > 0.0
        s_lo = np.where(rising, -np.inf, root)
        s_hi = np.where(rising, root, np.inf)
        l_lo[sloped] = s_lo
        l_hi[sloped] = s_hi
        lo[linear] = l_lo
        hi[linear] = l_hi

    quad = ~linear
    if quad.any():
        ka, kb, kc = qa[quad], qb[quad], qc[quad]
        disc = kb * kb - 4.0 * ka * kc
        real = disc >= 0.0
        sq = np.sqrt(np.where(real, disc, 0.0))
        qq = -0.5 * (kb + np.copysign(sq, kb))
        with np.errstate(divide="ignore", invalid="ignore"):
            r1 = qq / ka
            r2 = np.where(qq != 0.0, kc / qq, r1)
        k_lo = np.where(real, np.minimum(r1, r2), np.inf)
        k_hi = np.where(real, np.maximum(r1, r2), -np.inf)
        lo[quad] = k_lo
        hi[quad] = k_hi

    clip_lo = lo <= 0.0
    clip_hi = hi >= span
    ok = (np.where(clip_lo, 0.0, lo) <= np.where(clip_hi, span, hi)) & (hi >= 0.0) & (lo <= span)
    with np.errstate(invalid="ignore"):
        t_begin = np.where(clip_lo, a, np.maximum(a + lo, a))
        t_end = np.where(clip_hi, b, np.minimum(a + hi, b))
    ok &= t_begin <= t_end
    if not (np.isfinite(t_begin[ok]).all() and np.isfinite(t_end[ok]).all()):
        raise GeometryError("non-finite interaction endpoint")

    sel = idx[ok]
    hit[sel] = True
    begin[sel] = t_begin[ok]
    end[sel] = t_end[ok]
    return hit, begin, end


def compare(entry: SegmentST, query: SegmentST, d: float) -> Interaction | None:
    """Interaction of one entry/query pair, or None if they never come within ``d``."""
    hit, begin, end = interaction_intervals(
        np.array([entry.start]), np.array([entry.end]),
        np.array([entry.t_start]), np.array([entry.t_end]),
        np.array([query.start]), np.array([query.end]),
        np.array([query.t_start]), np.array([query.t_end]),
        d,
    )
    if not hit[0]:
        return None
    return Interaction(
        query.trajectory_id, query.segment_id,
        entry.trajectory_id, entry.segment_id,
        TimeInterval(float(begin[0]), float(end[0])),
    )
