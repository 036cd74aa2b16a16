"""Temporal-bin index: entries sorted by start time, grouped into m fixed-length bins.

A bin's end time is stretched to cover the end of every member, so a query
only has to be compared with the contiguous entry range spanned by the
bins it overlaps in time.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .engine import (
    DEFAULT_CHUNK, DEFAULT_RESULT_CAPACITY, KernelOutput,
    expand_ranges, group_by_gid, refine_pairs, run_batched,
)
from .errors import ConfigurationError
from .geometry import Segments

DEFAULT_BINS = 10_000
EMPTY = -1


@dataclass(frozen=True)
class TemporalBin:
    b_start: float
    b_end: float
    b_first: int
    b_last: int

    @property
    def empty(self) -> bool:
        return self.b_first == EMPTY


@dataclass
class TemporalIndex:
    """``entries`` is D sorted by ``t_start``; ``order[k]`` is the original row of ``entries[k]``."""

    entries: Segments
    order: np.ndarray
    b_start: np.ndarray
    b_end: np.ndarray
    b_first: np.ndarray
    b_last: np.ndarray
    t_min: float
    t_max: float
    b: float

    @property
    def m(self) -> int:
        return len(self.b_start)

    @property
    def bins(self) -> list[TemporalBin]:
        return [
            TemporalBin(*row)
            for row in zip(self.b_start.tolist(), self.b_end.tolist(), self.b_first.tolist(), self.b_last.tolist())
        ]


@dataclass(frozen=True)
class ScheduleEntry:
    query_id: int
    entry_min: int
    entry_max: int
    selector: int = -1


@dataclass
class Schedule:
    """Column form of a schedule; ``entry_min == -1`` marks an empty range.

    ``selector`` is -1 for the sorted entries array and 0/1/2 for the X/Y/Z
    arrays of the spatiotemporal index. ``query_id`` indexes the caller's Q.
    """

    query_id: np.ndarray
    entry_min: np.ndarray
    entry_max: np.ndarray
    selector: np.ndarray

    def __len__(self) -> int:
        return len(self.query_id)

    def __getitem__(self, k: int) -> ScheduleEntry:
        return ScheduleEntry(int(self.query_id[k]), int(self.entry_min[k]), int(self.entry_max[k]), int(self.selector[k]))

    def __iter__(self) -> Iterator[ScheduleEntry]:
        for k in range(len(self)):
            yield self[k]


def build_temporal(segments: Segments, m: int = DEFAULT_BINS) -> TemporalIndex:
    if m < 1:
        raise ConfigurationError(f"number of bins must be >= 1, got {m}")
    if len(segments) == 0:
        raise ConfigurationError("cannot index an empty dataset")
    order = np.argsort(segments.t_start, kind="stable")
    entries = segments.take(order)
    t_min = float(entries.t_start[0])
    t_max = float(entries.t_end.max())
    b = (t_max - t_min) / m
    slot = np.floor((entries.t_start - t_min) / b).astype(np.int64) if b > 0 else np.zeros(len(entries), np.int64)
    slot = np.clip(slot, 0, m - 1)
    counts = np.bincount(slot, minlength=m)
    stops = np.cumsum(counts)
    starts = stops - counts
    j = np.arange(m)
    b_start = t_min + j * b
    slot_end = t_min + (j + 1) * b
    slot_end[-1] = max(slot_end[-1], t_max)
    member_end = np.full(m, -np.inf)
    np.maximum.at(member_end, slot, entries.t_end)
    b_end = np.maximum(slot_end, member_end)
    nonempty = counts > 0
    b_first = np.where(nonempty, starts, EMPTY)
    b_last = np.where(nonempty, stops - 1, EMPTY)
    return TemporalIndex(entries, order.astype(np.int64), b_start, b_end, b_first, b_last, t_min, t_max, b)


def sort_queries(queries: Segments) -> np.ndarray:
    """Query rows by non-decreasing ``t_start`` (stable)."""
    return np.argsort(queries.t_start, kind="stable")


def overlapping_bins(index: TemporalIndex, queries: Segments, q_order: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """First and last overlapping non-empty bin per query, in ``q_order``.

    Scans forward from the first bin that overlapped the previous query;
    bins before that point cannot overlap any later query because queries
    arrive by non-decreasing start time. Returns -1 where nothing overlaps.
    """
    b_start = index.b_start.tolist()
    b_end = index.b_end.tolist()
    nonempty = (index.b_first != EMPTY).tolist()
    t0 = queries.t_start[q_order].tolist()
    t1 = queries.t_end[q_order].tolist()
    m = index.m
    first = np.full(len(q_order), -1, dtype=np.int64)
    last = np.full(len(q_order), -1, dtype=np.int64)
    pointer = 0
    for k in range(len(q_order)):
        lo, hi = t0[k], t1[k]
        j = pointer
        seen_overlap = False
        f = l_ = -1
        while j < m and b_start[j] <= hi:
            if b_end[j] >= lo:
                if not seen_overlap:
                    pointer = j
                    seen_overlap = True
                if nonempty[j]:
                    if f < 0:
                        f = j
                    l_ = j
            j += 1
        first[k], last[k] = f, l_
    return first, last


def build_schedule_temporal(index: TemporalIndex, queries: Segments) -> Schedule:
    q_order = sort_queries(queries)
    first, last = overlapping_bins(index, queries, q_order)
    hit = first >= 0
    entry_min = np.where(hit, index.b_first[np.maximum(first, 0)], EMPTY)
    entry_max = np.where(hit, index.b_last[np.maximum(last, 0)], EMPTY)
    return Schedule(q_order.astype(np.int64), entry_min, entry_max, np.full(len(q_order), -1, dtype=np.int64))


def schedule_kernel(targets: list[np.ndarray], entries: Segments, queries: Segments,
                    schedule: Schedule, d: float, active: np.ndarray, row_of: np.ndarray):
    """Kernel over schedule rows.

    Rows with selector ``s >= 0`` address ``targets[s]``, whose values are
    rows of ``entries``; selector -1 addresses ``entries`` directly.
    """

    def kernel(gids: np.ndarray) -> KernelOutput:
        qids = active[gids]
        rows = row_of[qids]
        lo = schedule.entry_min[rows]
        hi = schedule.entry_max[rows]
        sel = schedule.selector[rows]
        nonempty = lo != EMPTY
        pos, owner = expand_ranges(np.where(nonempty, lo, 0), np.where(nonempty, hi + 1, 0))
        e_idx = pos.copy()
        owner_sel = sel[owner]
        for s, target in enumerate(targets):
            mask = owner_sel == s
            e_idx[mask] = target[pos[mask]]
        q_idx = schedule.query_id[rows][owner]
        rec, pair = refine_pairs(entries, e_idx, queries, q_idx, d, return_pairs=True)
        records, offsets = group_by_gid(rec, owner[pair], len(gids))
        return KernelOutput(qids, records, offsets, len(e_idx))

    return kernel


def run_schedule(targets, entries: Segments, queries: Segments, schedule: Schedule, d: float,
                 result_capacity: int, workers: int, chunk_size: int):
    if len(queries) == 0:
        raise ConfigurationError("query set is empty")
    row_of = np.empty(len(queries), dtype=np.int64)
    row_of[schedule.query_id] = np.arange(len(schedule))

    def make_kernel(active: np.ndarray):
        return schedule_kernel(targets, entries, queries, schedule, d, active, row_of)

    return run_batched(make_kernel, schedule.query_id, result_capacity, workers, chunk_size)


def search_temporal(
    index: TemporalIndex,
    queries: Segments,
    schedule: Schedule,
    d: float,
    result_capacity: int = DEFAULT_RESULT_CAPACITY,
    workers: int = 1,
    chunk_size: int = DEFAULT_CHUNK,
):
    """Compare each query with every entry in its scheduled range; returns ``(ResultSet, RunMetrics)``."""
    return run_schedule([], index.entries, queries, schedule, d, result_capacity, workers, chunk_size)

