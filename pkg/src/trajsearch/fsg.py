"""Flat structured grid (FSG): a uniform 3-D cell grid over entry MBBs.

Only non-empty cells are stored, sorted by their row-major linear
coordinate ``h``; each cell owns a contiguous slice of the lookup array
``A`` listing the entry segments whose MBB touches the cell. A segment that
touches k cells appears k times in ``A``.

Cells are closed boxes, so a box touching a cell face belongs to both
cells. Query boxes are expanded by the distance threshold before
rasterization; candidates are not deduplicated before refinement.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .engine import (
    DEFAULT_CHUNK, DEFAULT_RESULT_CAPACITY, KernelOutput, RECORD_DTYPE,
    expand_ranges, group_by_gid, refine_pairs, run_batched,
)
from .errors import ConfigurationError, DatasetFormatError
from .geometry import Mbb, SegmentST, Segments, expand_mbb, mbb_of_segment

ID_BYTES = 4
DEFAULT_CELLS = 50
DEFAULT_CANDIDATE_BUFFER_BYTES = 2 * 1024 ** 3
FSG_MAGIC = b"FSG1"
# (query, cell row) pairs examined per numpy pass
CELL_BLOCK = 1 << 20


@dataclass(frozen=True)
class GridSpec:
    origin: tuple[float, float, float]
    cell_size: tuple[float, float, float]
    counts: tuple[int, int, int]

    def __post_init__(self):
        if any(c < 1 for c in self.counts):
            raise ConfigurationError(f"grid counts must be >= 1, got {self.counts}")
        if any(not w > 0 for w in self.cell_size):
            raise ConfigurationError(f"cell sizes must be > 0, got {self.cell_size}")

    @property
    def n_cells(self) -> int:
        gx, gy, gz = self.counts
        return gx * gy * gz

    def upper(self) -> np.ndarray:
        return np.asarray(self.origin) + np.asarray(self.counts) * np.asarray(self.cell_size)


@dataclass(frozen=True)
class FsgCell:
    h: int
    a_min: int
    a_max: int


@dataclass
class FsgIndex:
    """Grid ``spec``, non-empty cells (``cell_h``/``a_min``/``a_max``) and lookup ``A``."""

    spec: GridSpec
    cell_h: np.ndarray
    a_min: np.ndarray
    a_max: np.ndarray
    lookup: np.ndarray

    @property
    def cells(self) -> list[FsgCell]:
        return [FsgCell(h, lo, hi) for h, lo, hi in zip(self.cell_h.tolist(), self.a_min.tolist(), self.a_max.tolist())]

    def find_cell(self, h: int) -> int | None:
        """Position of cell ``h`` in G (binary search), or None if empty."""
        pos = int(np.searchsorted(self.cell_h, h))
        if pos < len(self.cell_h) and self.cell_h[pos] == h:
            return pos
        return None


def linearize(cx: int, cy: int, cz: int, spec: GridSpec) -> int:
    gx, gy, gz = spec.counts
    if not (0 <= cx < gx and 0 <= cy < gy and 0 <= cz < gz):
        raise ValueError(f"cell ({cx}, {cy}, {cz}) outside grid {spec.counts}")
    return cx * gy * gz + cy * gz + cz


def _linearize(cx, cy, cz, spec: GridSpec):
    _, gy, gz = spec.counts
    return (cx * gy + cy) * gz + cz


def cell_ranges(lo: np.ndarray, hi: np.ndarray, spec: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    """Inclusive per-axis cell ranges touched by boxes ``[lo, hi]`` (each ``(n, 3)``).

    Uses the same edge values ``origin + c * size`` for every test so that
    boxes sharing a point always share a cell. Results are clamped to the
    grid.
    """
    origin = np.asarray(spec.origin)
    size = np.asarray(spec.cell_size)
    n = np.asarray(spec.counts)
    edge = lambda c: origin + c * size  # noqa: E731
    c_lo = np.floor((lo - origin) / size).astype(np.int64) - 1
    for _ in range(3):
        c_lo = np.where(edge(c_lo + 1) < lo, c_lo + 1, c_lo)
    c_hi = np.floor((hi - origin) / size).astype(np.int64) + 1
    for _ in range(3):
        c_hi = np.where(edge(c_hi) > hi, c_hi - 1, c_hi)
    return np.clip(c_lo, 0, n - 1), np.clip(c_hi, 0, n - 1)


def _touches_grid(lo: np.ndarray, hi: np.ndarray, spec: GridSpec) -> np.ndarray:
    return ((hi >= np.asarray(spec.origin)) & (lo <= spec.upper())).all(axis=-1)


def rasterize_mbb(box: Mbb, spec: GridSpec) -> set[tuple[int, int, int]]:
    lo = np.array([box.min], dtype=np.float64)
    hi = np.array([box.max], dtype=np.float64)
    if not _touches_grid(lo, hi, spec)[0]:
        return set()
    c_lo, c_hi = cell_ranges(lo, hi, spec)
    (x0, y0, z0), (x1, y1, z1) = c_lo[0].tolist(), c_hi[0].tolist()
    return {
        (cx, cy, cz)
        for cx in range(x0, x1 + 1)
        for cy in range(y0, y1 + 1)
        for cz in range(z0, z1 + 1)
    }


def _box_cells(c_lo: np.ndarray, c_hi: np.ndarray, spec: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    """Linear cell ids of every cell in each box; returns ``(h, owner)``."""
    span = c_hi - c_lo + 1
    per_box = span[:, 0] * span[:, 1] * span[:, 2]
    k, owner = expand_ranges(np.zeros(len(per_box), dtype=np.int64), per_box)
    sy, sz = span[owner, 1], span[owner, 2]
    cx = c_lo[owner, 0] + k // (sy * sz)
    cy = c_lo[owner, 1] + (k // sz) % sy
    cz = c_lo[owner, 2] + k % sz
    return _linearize(cx, cy, cz, spec), owner


def grid_for(segments: Segments, counts: Sequence[int] | int = DEFAULT_CELLS) -> GridSpec:
    if isinstance(counts, int):
        counts = (counts, counts, counts)
    counts = tuple(int(c) for c in counts)
    if len(counts) != 3 or any(c < 1 for c in counts):
        raise ConfigurationError(f"need three cell counts >= 1, got {counts}")
    lo, hi = segments.mbb_bounds()
    lo, hi = lo.min(axis=0), hi.max(axis=0)
    sizes = []
    for axis in range(3):
        extent = hi[axis] - lo[axis]
        w = extent / counts[axis] if extent > 0 else 1.0
        while lo[axis] + counts[axis] * w < hi[axis]:
            w = np.nextafter(w, np.inf)
        sizes.append(float(w))
    return GridSpec(tuple(map(float, lo)), tuple(sizes), counts)


def build_fsg(segments: Segments, counts: Sequence[int] | int = DEFAULT_CELLS) -> FsgIndex:
    if len(segments) == 0:
        raise ConfigurationError("cannot index an empty dataset")
    spec = grid_for(segments, counts)
    lo, hi = segments.mbb_bounds()
    c_lo, c_hi = cell_ranges(lo, hi, spec)
    h, owner = _box_cells(c_lo, c_hi, spec)
    order = np.lexsort([owner, h])
    h, ids = h[order], owner[order]
    starts = np.flatnonzero(np.r_[True, h[1:] != h[:-1]])
    stops = np.r_[starts[1:], len(h)] - 1
    return FsgIndex(spec, h[starts].astype(np.int64), starts.astype(np.int64), stops.astype(np.int64), ids.astype(np.int64))


def _query_rows(index: FsgIndex, lo: np.ndarray, hi: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """A ranges under each box, one per (cx, cy) row of cells; returns ``(a_lo, a_stop, owner)``.

    The cells of one row have consecutive ``h``, so the non-empty ones form
    a contiguous run of G found with two binary searches, and their A
    slices are contiguous too. Rows come out in ascending ``h``.
    """
    spec = index.spec
    _, gy, gz = spec.counts
    touching = _touches_grid(lo, hi, spec)
    c_lo, c_hi = cell_ranges(lo, hi, spec)
    span = c_hi - c_lo + 1
    rows = np.where(touching, span[:, 0] * span[:, 1], 0)
    k, owner = expand_ranges(np.zeros(len(rows), dtype=np.int64), rows)
    sy = span[owner, 1]
    cx = c_lo[owner, 0] + k // sy
    cy = c_lo[owner, 1] + k % sy
    base = (cx * gy + cy) * gz
    g_lo = np.searchsorted(index.cell_h, base + c_lo[owner, 2], side="left")
    g_stop = np.searchsorted(index.cell_h, base + c_hi[owner, 2], side="right")
    keep = g_stop > g_lo
    g_lo, g_stop, owner = g_lo[keep], g_stop[keep], owner[keep]
    return index.a_min[g_lo], index.a_max[g_stop - 1] + 1, owner


def _expanded_bounds(queries: Segments, d: float) -> tuple[np.ndarray, np.ndarray]:
    lo, hi = queries.mbb_bounds()
    return lo - d, hi + d


def fsg_get_candidates(index: FsgIndex, query: SegmentST, d: float, capacity: int) -> tuple[bool, list[int]]:
    """Candidate entry ids for one query, duplicates retained, in cell order.

    Returns ``(True, [])`` when the candidates would not fit in ``capacity``.
    """
    if capacity < 0:
        raise ValueError("capacity must be >= 0")
    box = expand_mbb(mbb_of_segment(query), d)
    a_lo, a_stop, _ = _query_rows(index, np.array([box.min]), np.array([box.max]))
    if int((a_stop - a_lo).sum()) > capacity:
        return True, []
    a_idx, _ = expand_ranges(a_lo, a_stop)
    return False, index.lookup[a_idx].tolist()


def _spatial_kernel(index: FsgIndex, entries: Segments, queries: Segments, d: float,
                    active: np.ndarray, per_query_capacity: int):
    lo_all, hi_all = _expanded_bounds(queries, d)

    def kernel(gids: np.ndarray) -> KernelOutput:
        qids = active[gids]
        n = len(qids)
        redo = np.zeros(n, dtype=bool)
        need = np.zeros(n, dtype=np.int64)
        recs, rec_gid = [], []
        candidates = 0
        # bound (query, cell row) pairs per pass
        c_lo, c_hi = cell_ranges(lo_all[qids], hi_all[qids], index.spec)
        cells = (c_hi[:, 0] - c_lo[:, 0] + 1) * (c_hi[:, 1] - c_lo[:, 1] + 1)
        start = 0
        while start < n:
            stop = start + 1
            budget = cells[start]
            while stop < n and budget + cells[stop] <= CELL_BLOCK:
                budget += cells[stop]
                stop += 1
            sub = qids[start:stop]
            a_lo, a_stop, owner = _query_rows(index, lo_all[sub], hi_all[sub])
            per = np.bincount(owner, weights=a_stop - a_lo, minlength=len(sub)).astype(np.int64)
            over = per > per_query_capacity
            redo[start:stop] = over
            need[start:stop] = per
            keep = ~over[owner]
            a_idx, row_owner = expand_ranges(a_lo[keep], a_stop[keep])
            e_idx = index.lookup[a_idx]
            local = owner[keep][row_owner]
            candidates += len(e_idx)
            rec, pair = refine_pairs(entries, e_idx, queries, sub[local], d, return_pairs=True)
            recs.append(rec)
            rec_gid.append(local[pair] + start)
            start = stop
        records = np.concatenate(recs) if recs else np.empty(0, dtype=RECORD_DTYPE)
        owners = np.concatenate(rec_gid) if rec_gid else np.empty(0, dtype=np.int64)
        records, offsets = group_by_gid(records, owners, n)
        return KernelOutput(qids, records, offsets, candidates, redo, need)

    return kernel


def search_spatial(
    index: FsgIndex,
    entries: Segments,
    queries: Segments,
    d: float,
    candidate_buffer_bytes: int = DEFAULT_CANDIDATE_BUFFER_BYTES,
    result_capacity: int = DEFAULT_RESULT_CAPACITY,
    workers: int = 1,
    chunk_size: int = DEFAULT_CHUNK,
):
    """Distance-threshold search through the grid; returns ``(ResultSet, RunMetrics)``.

    The candidate buffer is split evenly over the queries of each
    invocation, so re-invoked queries get proportionally more room.
    """
    if len(queries) == 0:
        raise ConfigurationError("query set is empty")
    total_entries = candidate_buffer_bytes // ID_BYTES

    def make_kernel(active: np.ndarray):
        return _spatial_kernel(index, entries, queries, d, active, total_entries // len(active))

    return run_batched(make_kernel, np.arange(len(queries)), result_capacity, workers, chunk_size)


# --------------------------------------------------------------------- persistence

def save_fsg(index: FsgIndex, path) -> None:
    """``FSG1`` | origin 3f8 | cell size 3f8 | counts 3u4 | |G| u8 | G (h, aMin, aMax as u8) | |A| u8 | A u4."""
    with open(path, "wb") as fh:
        fh.write(FSG_MAGIC)
        fh.write(struct.pack("<3d3d3I", *index.spec.origin, *index.spec.cell_size, *index.spec.counts))
        fh.write(struct.pack("<Q", len(index.cell_h)))
        g = np.stack([index.cell_h, index.a_min, index.a_max], axis=1).astype("<u8")
        fh.write(g.tobytes())
        fh.write(struct.pack("<Q", len(index.lookup)))
        fh.write(index.lookup.astype("<u4").tobytes())


def load_fsg(path) -> FsgIndex:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != FSG_MAGIC:
        raise DatasetFormatError(f"bad magic {data[:4]!r}, expected {FSG_MAGIC!r}")
    off = 4
    vals = struct.unpack_from("<3d3d3I", data, off)
    off += struct.calcsize("<3d3d3I")
    spec = GridSpec(tuple(vals[0:3]), tuple(vals[3:6]), tuple(vals[6:9]))
    (n_g,) = struct.unpack_from("<Q", data, off)
    off += 8
    g = np.frombuffer(data, dtype="<u8", count=3 * n_g, offset=off).reshape(n_g, 3).astype(np.int64)
    off += 24 * n_g
    (n_a,) = struct.unpack_from("<Q", data, off)
    off += 8
    if len(data) - off != 4 * n_a:
        raise DatasetFormatError("truncated FSG lookup array")
    lookup = np.frombuffer(data, dtype="<u4", count=n_a, offset=off).astype(np.int64)
    return FsgIndex(spec, g[:, 0].copy(), g[:, 1].copy(), g[:, 2].copy(), lookup)
