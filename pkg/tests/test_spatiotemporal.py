from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trajsearch.engine import brute_force_oracle
from trajsearch.errors import ConfigurationError
from trajsearch.spatiotemporal import (
    MAX_SUBBINS, SELECT_TEMPORAL, SpatioTemporalIndex, build_schedule_st, build_spatiotemporal, max_subbin_count,
    search_spatiotemporal, slab_index,
)
from trajsearch.temporal import EMPTY, build_schedule_temporal, build_temporal, search_temporal

from .helpers import fig5_segments, make_segments, walk, walks

FIG5_LAYOUT = ((0, 0, 0), (4, 4, 6))
FIG5_X = [1, 3, 4, 5, 9, 0, 2, 3, 4, 7, 8, 6, 8]


def admissible_v(segs, v: int) -> int:
    return max(1, min(v, max_subbin_count(segs).admissible))


def expected_blocks(index: SpatioTemporalIndex, dim: int) -> list[list[int]]:
    """Entry positions of every (slab j, bin i) block by enumeration, in (j, i) order."""
    e = index.base.entries
    lo = np.minimum(e.start[:, dim], e.end[:, dim])
    hi = np.maximum(e.start[:, dim], e.end[:, dim])
    blocks = []
    for j in range(index.v):
        for i in range(index.m):
            if index.base.b_first[i] == EMPTY:
                blocks.append([])
                continue
            members = range(index.base.b_first[i], index.base.b_last[i] + 1)
            s_lo = np.clip(np.floor((lo - index.origin[dim]) / index.width[dim]), 0, index.v - 1)
            s_hi = np.clip(np.floor((hi - index.origin[dim]) / index.width[dim]), 0, index.v - 1)
            blocks.append([k for k in members if s_lo[k] <= j <= s_hi[k]])
    return blocks


class TestFig5:
    def test_x_array_and_descriptor(self):
        index = build_spatiotemporal(fig5_segments(), 3, 3, layout=FIG5_LAYOUT)
        assert index.X.tolist() == FIG5_X
        assert index.descriptor(0, 1).x == (5, 7)

    def test_arrays_follow_the_slab_rule(self):
        index = build_spatiotemporal(fig5_segments(), 3, 3, layout=FIG5_LAYOUT)
        for dim in range(3):
            flat = [k for block in expected_blocks(index, dim) for k in block]
            assert index.arrays[dim].tolist() == flat
        # l2 spans y in [6, 7] and must appear in the second y slab of bin 0
        assert 2 in index.Y[index.offsets[1][3]:index.offsets[1][4]].tolist()

    def test_example_z_width_is_rejected(self):
        # l4 spans 6 units in z, more than the 5-unit z slabs of the worked example
        with pytest.raises(ConfigurationError, match="dimension z"):
            build_spatiotemporal(fig5_segments(), 3, 3, layout=((0, 0, 0), (4, 4, 5)))

    def test_bound(self):
        bound = max_subbin_count(fig5_segments())
        assert bound.per_dimension[0] >= 3


class TestBounds:
    def test_zero_extent(self):
        segs = make_segments([(0, 0, (1, 1, 1), (1, 1, 1), 0, 1), (1, 0, (5, 5, 5), (5, 5, 5), 0, 1)])
        assert max_subbin_count(segs).per_dimension == (MAX_SUBBINS,) * 3

    def test_arithmetic(self):
        segs = make_segments([(0, 0, (0, 0, 0), (30, 0, 0), 0, 1), (1, 0, (100, 0, 0), (100, 0, 0), 0, 1)])
        assert max_subbin_count(segs).per_dimension[0] == 3

    def test_v_above_bound(self):
        segs = walk(5, 10, seed=1)
        too_many = max_subbin_count(segs).admissible + 1
        with pytest.raises(ConfigurationError):
            build_spatiotemporal(segs, 10, too_many)

    def test_invalid_v(self):
        with pytest.raises(ConfigurationError):
            build_spatiotemporal(walk(2, 3, seed=1), 1, 0)

    def test_slab_index_clamps(self):
        assert slab_index([-5, 0, 3.99, 4, 100], 0.0, 4.0, 3).tolist() == [0, 0, 0, 1, 2]

    @given(walks(max_traj=6, max_steps=8), st.integers(1, 20), st.integers(1, 8))
    @settings(max_examples=60)
    def test_structure(self, segs, m, v):
        v = admissible_v(segs, v)
        index = build_spatiotemporal(segs, m, v)
        lo, hi = index.base.entries.mbb_bounds()
        longest = (hi - lo).max(axis=0)
        assert (index.width >= longest).all()
        n = len(segs)
        for dim in range(3):
            arr, off = index.arrays[dim], index.offsets[dim]
            assert len(off) == v * index.m + 1 and off[0] == 0 and off[-1] == len(arr)
            counts = np.bincount(arr, minlength=n)
            assert ((counts >= 1) & (counts <= 2)).all()
            assert len(arr) <= 2 * n
            for b in range(v * index.m):
                block = arr[off[b]:off[b + 1]]
                assert (np.diff(block) > 0).all()
            flat = [k for block in expected_blocks(index, dim) for k in block]
            assert arr.tolist() == flat

    def test_v1_identity(self):
        segs = walk(6, 12, seed=4)
        index = build_spatiotemporal(segs, 7, 1)
        for dim in range(3):
            assert index.arrays[dim].tolist() == list(range(len(segs)))
            for i in range(index.m):
                d = index.descriptor(i, 0)
                if index.base.b_first[i] != EMPTY:
                    assert getattr(d, "xyz"[dim]) == (index.base.b_first[i], index.base.b_last[i])


class TestSchedule:
    def test_fallback_when_all_dims_span(self):
        index = build_spatiotemporal(fig5_segments(), 3, 3, layout=FIG5_LAYOUT)
        q = make_segments([(0, 0, (3.5, 3.5, 5.5), (4.5, 4.5, 6.5), 0.2, 0.4)])
        row = build_schedule_st(index, q, 0.1)[0]
        assert row.selector == SELECT_TEMPORAL
        assert (row.entry_min, row.entry_max) == (0, 3)

    def test_picks_shortest_single_slab(self):
        index = build_spatiotemporal(fig5_segments(), 3, 3, layout=FIG5_LAYOUT)
        q = make_segments([(0, 0, (2, 6, 2.5), (2, 6, 2.5), 0.5, 1.5)])
        row = build_schedule_st(index, q, 0.1)[0]
        candidates = {
            dim: index.offsets[dim][s * 3 + 1 + 1] - index.offsets[dim][s * 3 + 0]
            for dim, s in ((0, 0), (1, 1), (2, 0))
        }
        assert row.selector == min(candidates, key=lambda k: (candidates[k], k))

    def test_sorted_by_selector(self):
        segs, queries = walk(20, 20, seed=5), walk(5, 20, seed=6)
        index = build_spatiotemporal(segs, 20, 4)
        schedule = build_schedule_st(index, queries, 1.0)
        rank = np.where(schedule.selector == SELECT_TEMPORAL, 3, schedule.selector)
        assert (np.diff(rank) >= 0).all()
        assert sorted(schedule.query_id.tolist()) == list(range(len(queries)))

    @given(walks(max_traj=5, max_steps=8), walks(max_traj=3, max_steps=8), st.floats(0.1, 10),
           st.integers(1, 15), st.integers(1, 8))
    @settings(max_examples=60)
    def test_completeness_and_no_duplicates(self, entries, queries, d, m, v):
        index = build_spatiotemporal(entries, m, admissible_v(entries, v))
        schedule = build_schedule_st(index, queries, d)
        covered = set()
        for row in schedule:
            if row.entry_min == EMPTY:
                continue
            span = np.arange(row.entry_min, row.entry_max + 1)
            pos = span if row.selector == SELECT_TEMPORAL else index.arrays[row.selector][span]
            assert len(set(pos.tolist())) == len(pos)
            rows = index.base.order[pos]
            covered.update((row.query_id, int(r)) for r in rows)
        oracle = brute_force_oracle(entries, queries, d)
        key_e = {(int(t), int(s)): i for i, (t, s) in enumerate(zip(entries.trajectory_id, entries.segment_id))}
        key_q = {(int(t), int(s)): i for i, (t, s) in enumerate(zip(queries.trajectory_id, queries.segment_id))}
        for qt, qs, et, es in oracle.ids().tolist():
            assert (key_q[(qt, qs)], key_e[(et, es)]) in covered


class TestSearch:
    @given(walks(max_traj=5, max_steps=6), walks(max_traj=3, max_steps=6), st.floats(0.1, 12),
           st.sampled_from([1, 2, 4, 8]), st.sampled_from([1, 10, 100]))
    @settings(max_examples=40)
    def test_equals_oracle(self, entries, queries, d, v, m):
        index = build_spatiotemporal(entries, m, admissible_v(entries, v))
        result, _ = search_spatiotemporal(index, queries, build_schedule_st(index, queries, d), d)
        assert result == brute_force_oracle(entries, queries, d)

    def test_v1_equals_temporal(self, small_entries, small_queries):
        st_index = build_spatiotemporal(small_entries, 30, 1)
        t_index = build_temporal(small_entries, 30)
        a, _ = search_spatiotemporal(st_index, small_queries, build_schedule_st(st_index, small_queries, 5.0), 5.0)
        b, _ = search_temporal(t_index, small_queries, build_schedule_temporal(t_index, small_queries), 5.0)
        assert a == b and len(a) > 0

    def test_v_invariance(self, small_entries, small_queries):
        results = []
        for v in (1, 2, 4, 8):
            index = build_spatiotemporal(small_entries, 30, v)
            results.append(search_spatiotemporal(index, small_queries, build_schedule_st(index, small_queries, 5.0), 5.0)[0])
        assert all(r == results[0] for r in results)

    def test_all_fallback_equals_temporal(self, small_entries, small_queries):
        index = build_spatiotemporal(small_entries, 30, 4)
        huge = 1e4
        a, _ = search_spatiotemporal(index, small_queries, build_schedule_st(index, small_queries, huge), huge)
        assert (build_schedule_st(index, small_queries, huge).selector == SELECT_TEMPORAL).all()
        t_index = build_temporal(small_entries, 30)
        b, _ = search_temporal(t_index, small_queries, build_schedule_temporal(t_index, small_queries), huge)
        assert a == b
