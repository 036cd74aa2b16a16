"""Temporal bins subdivided into v spatial slabs per dimension.

For each dimension an id array (X, Y or Z) lists, slab by slab and within
a slab bin by bin, the entries whose projected extent overlaps the slab.
A query that stays inside one slab of some dimension can therefore be
served by one contiguous range of that array, spanning its temporal bins.
Queries that straddle slabs in every dimension fall back to the temporal
range, which keeps results free of duplicates.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .engine import DEFAULT_CHUNK, DEFAULT_RESULT_CAPACITY, expand_ranges
from .errors import ConfigurationError
from .geometry import Segments
from .temporal import (
    DEFAULT_BINS, EMPTY, Schedule, TemporalIndex, build_temporal, overlapping_bins,
    run_schedule, sort_queries,
)

SELECT_TEMPORAL = -1
SELECTOR_NAMES = {0: "X", 1: "Y", 2: "Z", SELECT_TEMPORAL: "TEMPORAL"}
# reported bound when segments have no extent in a dimension
MAX_SUBBINS = 1 << 16
DEFAULT_SUBBINS = 4


@dataclass(frozen=True)
class SubbinBound:
    per_dimension: tuple[int, int, int]
    admissible: int


@dataclass(frozen=True)
class SubbinDescriptor:
    """Inclusive ranges into X, Y, Z (None when the subbin is empty in that dimension)."""

    x: tuple[int, int] | None
    y: tuple[int, int] | None
    z: tuple[int, int] | None


@dataclass
class SpatioTemporalIndex:
    """``arrays[dim]`` holds positions in ``base.entries``.

    Block (slab j, bin i) of dimension ``dim`` is
    ``arrays[dim][offsets[dim][j*m + i] : offsets[dim][j*m + i + 1]]``.
    """

    base: TemporalIndex
    v: int
    origin: np.ndarray
    width: np.ndarray
    arrays: list[np.ndarray]
    offsets: list[np.ndarray]

    @property
    def m(self) -> int:
        return self.base.m

    @property
    def X(self) -> np.ndarray:
        return self.arrays[0]

    @property
    def Y(self) -> np.ndarray:
        return self.arrays[1]

    @property
    def Z(self) -> np.ndarray:
        return self.arrays[2]

    def descriptor(self, i: int, j: int) -> SubbinDescriptor:
        """Ranges of subbin (temporal bin ``i``, slab ``j``)."""
        out = []
        for dim in range(3):
            lo, hi = self.offsets[dim][j * self.m + i], self.offsets[dim][j * self.m + i + 1]
            out.append((int(lo), int(hi) - 1) if hi > lo else None)
        return SubbinDescriptor(*out)

    def slab_of(self, values: np.ndarray, dim: int) -> np.ndarray:
        return slab_index(values, self.origin[dim], self.width[dim], self.v)


def slab_index(values, origin: float, width: float, v: int) -> np.ndarray:
    """Slab containing each value; slabs are half-open except the last, and the ends are clamped."""
    return np.clip(np.floor((np.asarray(values) - origin) / width), 0, v - 1).astype(np.int64)


def max_subbin_count(segments: Segments, cap: int = MAX_SUBBINS) -> SubbinBound:
    if len(segments) == 0:
        raise ConfigurationError("cannot bound subbins of an empty dataset")
    lo, hi = segments.mbb_bounds()
    extent = hi.max(axis=0) - lo.min(axis=0)
    longest = (hi - lo).max(axis=0)
    bounds = []
    for dim in range(3):
        if longest[dim] == 0:
            bounds.append(cap)
        else:
            bounds.append(int(min(cap, np.floor(extent[dim] / longest[dim]))))
    return SubbinBound(tuple(bounds), max(1, min(bounds)))


def build_spatiotemporal(
    segments: Segments,
    m: int = DEFAULT_BINS,
    v: int = DEFAULT_SUBBINS,
    layout: tuple[Sequence[float], Sequence[float]] | None = None,
) -> SpatioTemporalIndex:
    """Build the index; ``layout=(origin, width)`` pins the slab grid instead of deriving it from D.

    Slab widths must be at least the largest segment extent in each
    dimension; otherwise :class:`ConfigurationError` is raised.
    """
    if v < 1:
        raise ConfigurationError(f"number of subbins must be >= 1, got {v}")
    base = build_temporal(segments, m)
    entries = base.entries
    lo, hi = entries.mbb_bounds()
    longest = (hi - lo).max(axis=0)
    if layout is None:
        bound = max_subbin_count(entries)
        for dim in range(3):
            if v > bound.per_dimension[dim]:
                raise ConfigurationError(
                    f"v={v} exceeds the subbin bound {bound.per_dimension[dim]} in dimension {'xyz'[dim]}"
                )
        origin = lo.min(axis=0)
        extent = hi.max(axis=0) - origin
        width = np.where(extent > 0, extent / v, 1.0)
    else:
        origin = np.asarray(layout[0], dtype=np.float64)
        width = np.asarray(layout[1], dtype=np.float64)
        if origin.shape != (3,) or width.shape != (3,) or not (width > 0).all():
            raise ConfigurationError("layout needs three origins and three positive widths")
        for dim in range(3):
            if width[dim] < longest[dim]:
                raise ConfigurationError(
                    f"slab width {width[dim]} is below the largest extent {longest[dim]} in dimension {'xyz'[dim]}"
                )

    n = len(entries)
    bin_of = np.empty(n, dtype=np.int64)
    nonempty = np.flatnonzero(base.b_first != EMPTY)
    bin_of[:] = np.repeat(nonempty, base.b_last[nonempty] - base.b_first[nonempty] + 1)
    arrays, offsets = [], []
    for dim in range(3):
        s_lo = slab_index(lo[:, dim], origin[dim], width[dim], v)
        s_hi = slab_index(hi[:, dim], origin[dim], width[dim], v)
        slab, owner = expand_ranges(s_lo, s_hi + 1)
        key = slab * base.m + bin_of[owner]
        order = np.lexsort([owner, key])
        arrays.append(owner[order].astype(np.int64))
        off = np.zeros(v * base.m + 1, dtype=np.int64)
        np.cumsum(np.bincount(key, minlength=v * base.m), out=off[1:])
        offsets.append(off)
    return SpatioTemporalIndex(base, v, origin, width, arrays, offsets)


def build_schedule_st(index: SpatioTemporalIndex, queries: Segments, d: float) -> Schedule:
    """Per query pick the single-slab dimension with the shortest array range, else fall back.

    The result is sorted by selector (X, Y, Z, then temporal fallback),
    each row carrying its query id.
    """
    base = index.base
    q_order = sort_queries(queries)
    first, last = overlapping_bins(base, queries, q_order)
    hit = first >= 0
    f, l_ = np.maximum(first, 0), np.maximum(last, 0)
    lo, hi = queries.mbb_bounds()
    lo, hi = lo[q_order] - d, hi[q_order] + d

    n = len(q_order)
    best_len = np.full(n, np.iinfo(np.int64).max)
    selector = np.full(n, SELECT_TEMPORAL, dtype=np.int64)
    range_lo = np.where(hit, base.b_first[f], EMPTY)
    range_hi = np.where(hit, base.b_last[l_] + 1, EMPTY)
    for dim in range(3):
        s_lo = index.slab_of(lo[:, dim], dim)
        s_hi = index.slab_of(hi[:, dim], dim)
        single = hit & (s_lo == s_hi)
        start = index.offsets[dim][s_lo * index.m + f]
        stop = index.offsets[dim][s_lo * index.m + l_ + 1]
        better = single & (stop - start < best_len)
        best_len = np.where(better, stop - start, best_len)
        selector = np.where(better, dim, selector)
        range_lo = np.where(better, start, range_lo)
        range_hi = np.where(better, stop, range_hi)

    empty = range_hi <= range_lo
    entry_min = np.where(empty, EMPTY, range_lo)
    entry_max = np.where(empty, EMPTY, range_hi - 1)
    rank = np.where(selector == SELECT_TEMPORAL, 3, selector)
    order = np.argsort(rank, kind="stable")
    return Schedule(q_order[order].astype(np.int64), entry_min[order], entry_max[order], selector[order])


def search_spatiotemporal(
    index: SpatioTemporalIndex,
    queries: Segments,
    schedule: Schedule,
    d: float,
    result_capacity: int = DEFAULT_RESULT_CAPACITY,
    workers: int = 1,
    chunk_size: int = DEFAULT_CHUNK,
):
    """Refine each query against its scheduled X/Y/Z range or temporal range; returns ``(ResultSet, RunMetrics)``."""
    return run_schedule(index.arrays, index.base.entries, queries, schedule, d, result_capacity, workers, chunk_size)
