"""Portable emulation of the data-parallel search kernels.

A *kernel* processes a chunk of global ids (``gid``) at once with numpy,
but each gid's results are published through :class:`ResultBuffer`
independently, exactly as a device thread would: reserve slots on a shared
counter, write the reserved slots, and on failure record the query id for a
later re-invocation. Chunks run on a thread pool when ``workers > 1`` so
reservations from different chunks interleave for real.

Records are deterministic, so a query re-run after an overflow reproduces
bit-identical records and :func:`dedup_results` collapses the partial copy.
"""

from __future__ import annotations

import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import CapacityError, IntegrityError
from .geometry import Interaction, Segments, TimeInterval, interaction_intervals

logger = logging.getLogger(__name__)

RECORD_DTYPE = np.dtype([
    ("query_traj", np.int64), ("query_seg", np.int64),
    ("entry_traj", np.int64), ("entry_seg", np.int64),
    ("t_begin", np.float64), ("t_end", np.float64),
])
ID_FIELDS = ("query_traj", "query_seg", "entry_traj", "entry_seg")

DEFAULT_RESULT_CAPACITY = 50_000_000
DEFAULT_CHUNK = 256
# pairs refined per numpy pass; bounds temporary memory
PAIR_BLOCK = 1 << 20


# --------------------------------------------------------------------- refinement

def refine_pairs(entries: Segments, e_idx: np.ndarray, queries: Segments, q_idx: np.ndarray, d: float,
                 return_pairs: bool = False):
    """Run the interaction test on aligned (entry, query) index pairs.

    Returns the non-empty interactions as a ``RECORD_DTYPE`` array, in pair
    order; with ``return_pairs`` also the input position of each record.
    """
    out = []
    where = []
    for lo in range(0, len(e_idx), PAIR_BLOCK):
        ei = e_idx[lo:lo + PAIR_BLOCK]
        qi = q_idx[lo:lo + PAIR_BLOCK]
        # cheap temporal pre-pass so positions are only gathered for overlapping pairs
        keep = np.flatnonzero(
            np.maximum(entries.t_start[ei], queries.t_start[qi]) <= np.minimum(entries.t_end[ei], queries.t_end[qi])
        )
        ei, qi = ei[keep], qi[keep]
        if ei.size == 0:
            continue
        hit, begin, end = interaction_intervals(
            entries.start[ei], entries.end[ei], entries.t_start[ei], entries.t_end[ei],
            queries.start[qi], queries.end[qi], queries.t_start[qi], queries.t_end[qi],
            d,
        )
        if not hit.any():
            continue
        ei, qi = ei[hit], qi[hit]
        rec = np.empty(ei.size, dtype=RECORD_DTYPE)
        rec["query_traj"] = queries.trajectory_id[qi]
        rec["query_seg"] = queries.segment_id[qi]
        rec["entry_traj"] = entries.trajectory_id[ei]
        rec["entry_seg"] = entries.segment_id[ei]
        rec["t_begin"] = begin[hit]
        rec["t_end"] = end[hit]
        out.append(rec)
        where.append(lo + keep[hit])
    records = np.concatenate(out) if out else np.empty(0, dtype=RECORD_DTYPE)
    if return_pairs:
        return records, (np.concatenate(where) if where else np.empty(0, dtype=np.int64))
    return records


def expand_ranges(starts: np.ndarray, stops: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Concatenate ``arange(starts[k], stops[k])`` for every k.

    Returns ``(values, owner)`` where ``owner[i]`` is the k that produced
    ``values[i]``.
    """
    lengths = np.maximum(stops - starts, 0)
    total = int(lengths.sum())
    owner = np.repeat(np.arange(len(starts)), lengths)
    if total == 0:
        return np.empty(0, dtype=np.int64), owner
    offsets = np.cumsum(lengths) - lengths
    values = np.arange(total, dtype=np.int64) - np.repeat(offsets - starts, lengths)
    return values, owner


def group_by_gid(records: np.ndarray, rec_gid: np.ndarray, n_gids: int) -> tuple[np.ndarray, np.ndarray]:
    """Stable-sort records by owning gid and return ``(records, offsets)``."""
    order = np.argsort(rec_gid, kind="stable")
    counts = np.bincount(rec_gid, minlength=n_gids)
    offsets = np.zeros(n_gids + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    return records[order], offsets


# --------------------------------------------------------------------- kernels

@dataclass
class KernelOutput:
    """What one chunk of workers produced.

    ``records[offsets[k]:offsets[k+1]]`` belong to ``query_ids[k]``.
    ``redo[k]`` marks a worker that aborted before producing results (a
    candidate buffer overflow); ``redo_counts[k]`` is how many candidates it
    needed.
    """

    query_ids: np.ndarray
    records: np.ndarray
    offsets: np.ndarray
    candidates: int = 0
    redo: np.ndarray | None = None
    redo_counts: np.ndarray | None = None


Kernel = Callable[[np.ndarray], KernelOutput]


class ResultBuffer:
    """Fixed-capacity result storage with a linearizable reservation counter."""

    def __init__(self, capacity: int):
        if capacity < 0:
            raise ValueError("capacity must be >= 0")
        self.capacity = int(capacity)
        self.count = 0
        self.overflow_query_ids: list[int] = []
        self.oversized: dict[int, int] = {}
        self.redo_counts: dict[int, int] = {}
        self._slots: list[np.ndarray] = []
        self._lock = threading.Lock()

    def reserve(self, n: int) -> int:
        """Atomically reserve up to ``n`` slots; return how many were granted."""
        with self._lock:
            granted = min(n, self.capacity - self.count)
            self.count += granted
            return granted

    def append(self, query_id: int, records: np.ndarray) -> bool:
        """Publish one worker's records; False (and query recorded) on overflow.

        A partial reservation is written before the worker gives up, like a
        device thread that cannot roll back earlier appends.
        """
        n = len(records)
        if n == 0:
            return True
        if n > self.capacity:
            with self._lock:
                self.oversized[query_id] = n
        granted = self.reserve(n)
        if granted:
            with self._lock:
                self._slots.append(records[:granted])
        if granted < n:
            self.flag_overflow(query_id)
            return False
        return True

    def flag_overflow(self, query_id: int, needed: int | None = None) -> None:
        with self._lock:
            self.overflow_query_ids.append(int(query_id))
            if needed is not None:
                self.redo_counts[int(query_id)] = int(needed)

    def records(self) -> np.ndarray:
        with self._lock:
            if not self._slots:
                return np.empty(0, dtype=RECORD_DTYPE)
            out = np.concatenate(self._slots)
        assert len(out) == self.count
        return out


@dataclass
class InvocationOutcome:
    launched: int
    reserved: int
    overflow_query_ids: list[int]
    candidates: int
    wall_time: float


def dispatch(
    kernel: Kernel,
    schedule_length: int,
    buffer: ResultBuffer,
    workers: int = 1,
    chunk_size: int = DEFAULT_CHUNK,
    order: Sequence[int] | None = None,
) -> InvocationOutcome:
    """Run ``kernel`` for every gid in ``[0, schedule_length)``.

    ``order`` fixes the gid sequence (one admissible interleaving); by
    default gids are taken in ascending order and split into chunks.
    """
    t0 = time.perf_counter()
    gids = np.arange(schedule_length, dtype=np.int64) if order is None else np.asarray(order, dtype=np.int64)
    if len(gids) != schedule_length or (schedule_length and set(gids.tolist()) != set(range(schedule_length))):
        raise ValueError("order must be a permutation of range(schedule_length)")
    chunks = [gids[i:i + chunk_size] for i in range(0, schedule_length, max(1, chunk_size))]
    candidates = 0

    def run(chunk: np.ndarray) -> int:
        out = kernel(chunk)
        for k, qid in enumerate(out.query_ids.tolist()):
            if out.redo is not None and out.redo[k]:
                buffer.flag_overflow(qid, None if out.redo_counts is None else int(out.redo_counts[k]))
                continue
            buffer.append(qid, out.records[out.offsets[k]:out.offsets[k + 1]])
        return out.candidates

    if workers <= 1 or len(chunks) <= 1:
        for chunk in chunks:
            candidates += run(chunk)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            candidates = sum(pool.map(run, chunks))
    return InvocationOutcome(
        launched=schedule_length,
        reserved=buffer.count,
        overflow_query_ids=sorted(set(buffer.overflow_query_ids)),
        candidates=candidates,
        wall_time=time.perf_counter() - t0,
    )


# --------------------------------------------------------------------- result sets

class ResultSet:
    """Canonical, deduplicated interactions sorted by (query ids, entry ids)."""

    def __init__(self, records: np.ndarray):
        self.records = records

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[Interaction]:
        for r in self.records.tolist():
            yield Interaction(r[0], r[1], r[2], r[3], TimeInterval(r[4], r[5]))

    def __eq__(self, other) -> bool:
        if not isinstance(other, ResultSet):
            return NotImplemented
        return np.array_equal(self.records, other.records)

    def __repr__(self) -> str:
        return f"ResultSet({len(self)} interactions)"

    def pairs(self) -> set[tuple[int, int, int, int]]:
        return set(map(tuple, self.ids().tolist()))

    def ids(self) -> np.ndarray:
        return np.stack([self.records[f] for f in ID_FIELDS], axis=1) if len(self) else np.empty((0, 4), np.int64)

    def to_csv(self, sink) -> None:
        write_results_csv(self, sink)


RESULTS_HEADER = ("query_traj", "query_seg", "entry_traj", "entry_seg", "t_begin", "t_end")


def write_results_csv(results: ResultSet, sink) -> None:
    """Canonical results file: 17 significant digits so floats round-trip."""
    lines = [",".join(RESULTS_HEADER)]
    for r in results.records.tolist():
        lines.append(f"{r[0]},{r[1]},{r[2]},{r[3]},{r[4]:.17g},{r[5]:.17g}")
    text = "\n".join(lines) + "\n"
    if hasattr(sink, "write"):
        sink.write(text)
    else:
        with open(sink, "w", encoding="ascii", newline="") as fh:
            fh.write(text)


def read_results_csv(source) -> ResultSet:
    if hasattr(source, "read"):
        text = source.read()
    else:
        with open(source, encoding="ascii") as fh:
            text = fh.read()
    lines = text.splitlines()
    if not lines or tuple(lines[0].split(",")) != RESULTS_HEADER:
        raise ValueError(f"results file header must be {','.join(RESULTS_HEADER)}")
    rec = np.empty(len(lines) - 1, dtype=RECORD_DTYPE)
    for i, line in enumerate(lines[1:]):
        f = line.split(",")
        if len(f) != 6:
            raise ValueError(f"results line {i + 2}: expected 6 columns")
        rec[i] = (int(f[0]), int(f[1]), int(f[2]), int(f[3]), float(f[4]), float(f[5]))
    return dedup_results(rec)


def _id_sort_order(records: np.ndarray) -> np.ndarray:
    return np.lexsort([records[f] for f in reversed(ID_FIELDS)])


def dedup_results(raw: np.ndarray | Sequence[np.ndarray], tolerance: float = 1e-12) -> ResultSet:
    if not isinstance(raw, np.ndarray):
        raw = np.concatenate(list(raw)) if len(raw) else np.empty(0, dtype=RECORD_DTYPE)
    if len(raw) == 0:
        return ResultSet(np.empty(0, dtype=RECORD_DTYPE))
    rec = raw[_id_sort_order(raw)]
    same = np.ones(len(rec) - 1, dtype=bool)
    for f in ID_FIELDS:
        same &= rec[f][1:] == rec[f][:-1]
    if same.any():
        dev = np.maximum(
            np.abs(rec["t_begin"][1:] - rec["t_begin"][:-1]),
            np.abs(rec["t_end"][1:] - rec["t_end"][:-1]),
        )
        bad = same & ~(dev <= tolerance)
        if bad.any():
            i = int(np.argmax(bad))
            raise IntegrityError(f"duplicate interaction {tuple(rec[i].tolist()[:4])} has differing intervals")
    keep = np.ones(len(rec), dtype=bool)
    keep[1:] = ~same
    return ResultSet(np.ascontiguousarray(rec[keep]))


@dataclass
class EquivalenceReport:
    equivalent: bool
    only_in_a: list[tuple[int, int, int, int]]
    only_in_b: list[tuple[int, int, int, int]]
    max_deviation: float

    def summary(self) -> str:
        if self.equivalent:
            return f"equivalent (max endpoint deviation {self.max_deviation:.3g})"
        parts = []
        if self.only_in_a:
            parts.append(f"{len(self.only_in_a)} only in first, e.g. {self.only_in_a[:3]}")
        if self.only_in_b:
            parts.append(f"{len(self.only_in_b)} only in second, e.g. {self.only_in_b[:3]}")
        parts.append(f"max endpoint deviation {self.max_deviation:.3g}")
        return "NOT equivalent: " + "; ".join(parts)


def compare_result_sets(a: ResultSet, b: ResultSet, tolerance: float = 1e-9) -> EquivalenceReport:
    ra, rb = a.records, b.records
    both = np.concatenate([ra, rb])
    src = np.concatenate([np.zeros(len(ra), np.int8), np.ones(len(rb), np.int8)])
    order = np.lexsort([src] + [both[f] for f in reversed(ID_FIELDS)])
    both, src = both[order], src[order]
    n = len(both)
    matched = np.zeros(n, dtype=bool)
    deviation = 0.0
    if n > 1:
        same = np.ones(n - 1, dtype=bool)
        for f in ID_FIELDS:
            same &= both[f][1:] == both[f][:-1]
        pair = same & (src[:-1] == 0) & (src[1:] == 1)
        matched[:-1] |= pair
        matched[1:] |= pair
        if pair.any():
            i = np.flatnonzero(pair)
            deviation = float(max(
                np.abs(both["t_begin"][i] - both["t_begin"][i + 1]).max(),
                np.abs(both["t_end"][i] - both["t_end"][i + 1]).max(),
            ))
    unmatched = ~matched
    ids = lambda mask: [tuple(r[:4]) for r in both[mask].tolist()]  # noqa: E731
    only_a = ids(unmatched & (src == 0))
    only_b = ids(unmatched & (src == 1))
    return EquivalenceReport(
        equivalent=not only_a and not only_b and deviation <= tolerance,
        only_in_a=only_a,
        only_in_b=only_b,
        max_deviation=deviation,
    )


# --------------------------------------------------------------------- batching

@dataclass
class RunMetrics:
    invocations: int = 0
    reserved_records: int = 0
    unique_records: int = 0
    candidates_refined: int = 0
    wall_time: float = 0.0
    invocation_times: list[float] = field(default_factory=list)
    active_queries: list[int] = field(default_factory=list)

    @property
    def dedup_ratio(self) -> float:
        return self.reserved_records / self.unique_records if self.unique_records else 1.0

    def as_row(self) -> dict:
        return {
            "invocations": self.invocations,
            "reserved_records": self.reserved_records,
            "unique_records": self.unique_records,
            "dedup_ratio": round(self.dedup_ratio, 6),
            "candidates_refined": self.candidates_refined,
            "wall_time_s": round(self.wall_time, 6),
        }


def run_batched(
    make_kernel: Callable[[np.ndarray], Kernel],
    query_ids: Sequence[int] | np.ndarray,
    capacity: int = DEFAULT_RESULT_CAPACITY,
    workers: int = 1,
    chunk_size: int = DEFAULT_CHUNK,
) -> tuple[ResultSet, RunMetrics]:
    """Invoke kernels until every query has completed without overflow.

    ``make_kernel(active)`` builds the kernel for one invocation; gid ``g``
    of that invocation must process query ``active[g]``. After an
    invocation exactly the overflowed queries are re-run. If an invocation
    completes no query at all, the next one launches only the first half of
    the pending queries (the remainder waits), which gives every launched
    worker a larger share of any per-invocation buffer.
    """
    t0 = time.perf_counter()
    pending = np.asarray(query_ids, dtype=np.int64)
    window = len(pending)
    metrics = RunMetrics()
    raw: list[np.ndarray] = []
    while len(pending):
        active, deferred = pending[:window], pending[window:]
        buffer = ResultBuffer(capacity)
        outcome = dispatch(make_kernel(active), len(active), buffer, workers=workers, chunk_size=chunk_size)
        if buffer.oversized:
            qid, n = next(iter(sorted(buffer.oversized.items())))
            raise CapacityError(
                f"query {qid} produces {n} results, more than the result capacity {capacity}", qid, n
            )
        metrics.invocations += 1
        metrics.reserved_records += buffer.count
        metrics.candidates_refined += outcome.candidates
        metrics.invocation_times.append(outcome.wall_time)
        metrics.active_queries.append(len(active))
        raw.append(buffer.records())
        redo = np.asarray(outcome.overflow_query_ids, dtype=np.int64)
        if len(redo) == len(active):
            if len(active) == 1:
                qid = int(active[0])
                needed = buffer.redo_counts.get(qid, -1)
                raise CapacityError(
                    f"query {qid} overflows its buffer even when processed alone (needs {needed})", qid, needed
                )
            window = max(1, len(active) // 2)
        logger.debug("invocation %d: %d active, %d redo", metrics.invocations, len(active), len(redo))
        pending = np.sort(np.concatenate([redo, deferred]))
    result = dedup_results(raw)
    metrics.unique_records = len(result)
    metrics.wall_time = time.perf_counter() - t0
    return result, metrics


# --------------------------------------------------------------------- oracle

def brute_force_oracle(entries: Segments, queries: Segments, d: float, block: int = 1 << 22) -> ResultSet:
    """Refine every (entry, query) pair; the reference every index is checked against."""
    n_e, n_q = len(entries), len(queries)
    if n_e == 0 or n_q == 0:
        return ResultSet(np.empty(0, dtype=RECORD_DTYPE))
    per = max(1, block // n_e)
    out = []
    e_all = np.arange(n_e, dtype=np.int64)
    for q_lo in range(0, n_q, per):
        q_hi = min(n_q, q_lo + per)
        q_idx = np.repeat(np.arange(q_lo, q_hi, dtype=np.int64), n_e)
        e_idx = np.tile(e_all, q_hi - q_lo)
        out.append(refine_pairs(entries, e_idx, queries, q_idx, d))
    return dedup_results(out)
