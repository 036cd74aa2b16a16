"""In-memory 4-D R-tree baseline (space + time), bulk loaded with sort-tile-recursive.

Each leaf entry bounds up to r consecutive segments of one trajectory.
Levels are stored as flat arrays: the children of node k on level L are
the contiguous slice ``child_start[k]:child_start[k] + child_count[k]`` of
level L+1, and the last level holds the leaf entries themselves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .engine import (
    DEFAULT_CHUNK, DEFAULT_RESULT_CAPACITY, KernelOutput, expand_ranges, group_by_gid,
    refine_pairs, run_batched,
)
from .errors import ConfigurationError
from .geometry import Segments

DEFAULT_FANOUT = 16
DEFAULT_MBB_SEGMENTS = 10


@dataclass
class RTreeLevel:
    lo: np.ndarray          # (n, 4) box minima: x, y, z, t
    hi: np.ndarray          # (n, 4) box maxima
    child_start: np.ndarray
    child_count: np.ndarray


@dataclass
class RTreeIndex:
    """``levels[0]`` is the root level; ``leaf_lo/leaf_hi`` bound the leaf entries.

    Leaf entry k covers rows ``seg_first[k]..seg_last[k]`` of the indexed
    segments.
    """

    fanout: int
    r: int
    levels: list[RTreeLevel]
    leaf_lo: np.ndarray
    leaf_hi: np.ndarray
    seg_first: np.ndarray
    seg_last: np.ndarray

    @property
    def height(self) -> int:
        return len(self.levels) + 1

    @property
    def n_leaf_entries(self) -> int:
        return len(self.seg_first)


def group_segments(segments: Segments, r: int) -> tuple[np.ndarray, np.ndarray]:
    """Inclusive row ranges of up to ``r`` consecutive segments of one trajectory."""
    if r < 1:
        raise ConfigurationError(f"segments per MBB must be >= 1, got {r}")
    n = len(segments)
    if n == 0:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    tid, sid = segments.trajectory_id, segments.segment_id
    new_run = np.r_[True, (tid[1:] != tid[:-1]) | (sid[1:] != sid[:-1] + 1)]
    run_start = np.flatnonzero(new_run)
    run_len = np.diff(np.r_[run_start, n])
    groups_per_run = -(-run_len // r)
    k, owner = expand_ranges(np.zeros(len(run_len), np.int64), groups_per_run)
    first = run_start[owner] + k * r
    last = np.minimum(first + r, run_start[owner] + run_len[owner]) - 1
    return first, last


def _segment_boxes(segments: Segments) -> tuple[np.ndarray, np.ndarray]:
    lo, hi = segments.mbb_bounds()
    return np.c_[lo, segments.t_start], np.c_[hi, segments.t_end]


def _str_order(centers: np.ndarray, fanout: int) -> np.ndarray:
    """Sort-tile-recursive ordering of items so consecutive runs of ``fanout`` form nodes."""
    dims = centers.shape[1]

    def tile(idx: np.ndarray, dim: int) -> list[np.ndarray]:
        if dim == dims - 1 or len(idx) <= fanout:
            order = np.lexsort([idx, centers[idx, dim]])
            return [idx[order]]
        n_nodes = math.ceil(len(idx) / fanout)
        slabs = math.ceil(n_nodes ** (1.0 / (dims - dim)))
        per_slab = fanout * math.ceil(n_nodes / slabs)
        order = np.lexsort([idx, centers[idx, dim]])
        idx = idx[order]
        out = []
        for s in range(0, len(idx), per_slab):
            out.extend(tile(idx[s:s + per_slab], dim + 1))
        return out

    parts = tile(np.arange(len(centers)), 0)
    # every tile but the last is a multiple of fanout, so node boundaries never straddle tiles
    return np.concatenate(parts)


def build_rtree(segments: Segments, r: int = DEFAULT_MBB_SEGMENTS, fanout: int = DEFAULT_FANOUT) -> RTreeIndex:
    if fanout < 2:
        raise ConfigurationError(f"fanout must be >= 2, got {fanout}")
    if len(segments) == 0:
        raise ConfigurationError("cannot index an empty dataset")
    first, last = group_segments(segments, r)
    seg_lo, seg_hi = _segment_boxes(segments)
    # per-group tight boxes
    starts = first
    lo = np.minimum.reduceat(seg_lo, starts, axis=0)
    hi = np.maximum.reduceat(seg_hi, starts, axis=0)
    order = _str_order((lo + hi) / 2, fanout)
    lo, hi, first, last = lo[order], hi[order], first[order], last[order]
    leaf_lo, leaf_hi = lo, hi

    levels: list[RTreeLevel] = []
    cur_lo, cur_hi = lo, hi
    while True:
        n = len(cur_lo)
        child_start = np.arange(0, n, fanout, dtype=np.int64)
        child_count = np.minimum(fanout, n - child_start)
        node_lo = np.minimum.reduceat(cur_lo, child_start, axis=0)
        node_hi = np.maximum.reduceat(cur_hi, child_start, axis=0)
        levels.append(RTreeLevel(node_lo, node_hi, child_start, child_count))
        if len(node_lo) == 1:
            break
        # reorder this level so its parents again own contiguous runs
        order = _str_order((node_lo + node_hi) / 2, fanout)
        levels[-1] = RTreeLevel(node_lo[order], node_hi[order], child_start[order], child_count[order])
        cur_lo, cur_hi = node_lo[order], node_hi[order]
    levels.reverse()
    return RTreeIndex(fanout, r, levels, leaf_lo, leaf_hi, first.astype(np.int64), last.astype(np.int64))


def check_containment(index: RTreeIndex) -> bool:
    """True when every child box lies inside its parent box, on every level."""
    for depth, level in enumerate(index.levels):
        if depth + 1 < len(index.levels):
            c_lo, c_hi = index.levels[depth + 1].lo, index.levels[depth + 1].hi
        else:
            c_lo, c_hi = index.leaf_lo, index.leaf_hi
        child, parent = expand_ranges(level.child_start, level.child_start + level.child_count)
        if not ((c_lo[child] >= level.lo[parent]).all() and (c_hi[child] <= level.hi[parent]).all()):
            return False
    return True


def _intersects(lo_a, hi_a, lo_b, hi_b) -> np.ndarray:
    return ((lo_a <= hi_b) & (lo_b <= hi_a)).all(axis=1)


def query_leaf_entries(index: RTreeIndex, q_lo: np.ndarray, q_hi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Leaf entries whose boxes intersect each query box; returns ``(leaf, owner)``."""
    owner = np.arange(len(q_lo))
    node = np.zeros(len(q_lo), dtype=np.int64)
    for depth, level in enumerate(index.levels):
        keep = _intersects(level.lo[node], level.hi[node], q_lo[owner], q_hi[owner])
        node, owner = node[keep], owner[keep]
        child, which = expand_ranges(level.child_start[node], level.child_start[node] + level.child_count[node])
        node, owner = child, owner[which]
    keep = _intersects(index.leaf_lo[node], index.leaf_hi[node], q_lo[owner], q_hi[owner])
    return node[keep], owner[keep]


def query_boxes(queries: Segments, d: float) -> tuple[np.ndarray, np.ndarray]:
    """4-D query boxes: spatial MBB expanded by ``d``, temporal extent unchanged."""
    lo, hi = _segment_boxes(queries)
    lo[:, :3] -= d
    hi[:, :3] += d
    return lo, hi


def search_rtree(
    index: RTreeIndex,
    entries: Segments,
    queries: Segments,
    d: float,
    result_capacity: int = DEFAULT_RESULT_CAPACITY,
    workers: int = 1,
    chunk_size: int = DEFAULT_CHUNK,
):
    """Traverse the tree per query and refine every member of every hit leaf entry."""
    if len(queries) == 0:
        raise ConfigurationError("query set is empty")
    q_lo, q_hi = query_boxes(queries, d)

    def make_kernel(active: np.ndarray):
        def kernel(gids: np.ndarray) -> KernelOutput:
            qids = active[gids]
            leaf, owner = query_leaf_entries(index, q_lo[qids], q_hi[qids])
            e_idx, which = expand_ranges(index.seg_first[leaf], index.seg_last[leaf] + 1)
            local = owner[which]
            rec, pair = refine_pairs(entries, e_idx, queries, qids[local], d, return_pairs=True)
            records, offsets = group_by_gid(rec, local[pair], len(gids))
            return KernelOutput(qids, records, offsets, len(e_idx))
        return kernel

    return run_batched(make_kernel, np.arange(len(queries)), result_capacity, workers, chunk_size)
