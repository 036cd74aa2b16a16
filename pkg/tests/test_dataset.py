from __future__ import annotations

import io
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trajsearch.dataset import (
    BINARY_MAGIC, CSV_HEADER, DenseWalkParams, RandomWalkParams, TrajectoryDataset, generate_random_dense,
    generate_random_walk, read_binary, read_csv, read_dataset, segment_count, validate_segments, write_binary,
    write_csv, write_dataset,
)
from trajsearch.errors import DatasetFormatError

from .helpers import make_segments


def three_segments() -> TrajectoryDataset:
    return TrajectoryDataset(make_segments([
        (0, 0, (0, 0, 0), (1, 0, 0), 0.0, 1.0),
        (0, 1, (1, 0, 0), (1, 2, 0), 1.0, 2.0),
        (1, 0, (5, 5, 5), (5, 5, 6), 0.5, 1.5),
    ]))


def _bin_bytes(ds) -> bytes:
    buf = io.BytesIO()
    write_binary(ds, buf)
    return buf.getvalue()


def _csv_text(ds) -> str:
    buf = io.StringIO()
    write_csv(ds, buf)
    return buf.getvalue()


class TestCounts:
    @pytest.mark.parametrize("n,steps,expected", [(2500, 400, 997_500), (100, 400, 39_900),
                                                  (65_536, 193, 12_582_912), (265, 193, 50_880)])
    def test_segment_count(self, n, steps, expected):
        assert segment_count(n, steps) == expected

    def test_cube_side(self):
        assert DenseWalkParams(65_536, density=0.112).cube_side == pytest.approx(83.64, abs=0.01)

    def test_small_walk_count(self):
        ds = generate_random_walk(RandomWalkParams(7, 13, seed=3))
        assert len(ds) == 7 * 12
        assert ds.n_trajectories == 7

    def test_single_step(self):
        s = generate_random_walk(RandomWalkParams(1, 2, step_max=0.5, seed=1)).segments
        assert len(s) == 1
        assert (np.abs(s.end - s.start) <= 0.5).all()
        assert s.t_end[0] - s.t_start[0] == pytest.approx(1.0, abs=1e-12)


class TestGenerators:
    @given(st.integers(1, 6), st.integers(2, 12), st.integers(0, 10_000))
    @settings(max_examples=25)
    def test_walk_continuity_and_determinism(self, n, steps, seed):
        p = RandomWalkParams(n, steps, seed=seed)
        a, b = generate_random_walk(p), generate_random_walk(p)
        validate_segments(a.segments)
        assert _bin_bytes(a) == _bin_bytes(b)
        s = a.segments
        assert np.allclose(s.t_end - s.t_start, 1.0, rtol=0, atol=1e-12)
        first = s.segment_id == 0
        assert ((s.t_start[first] >= 0) & (s.t_start[first] <= p.start_window)).all()
        assert ((s.start[first] >= 0) & (s.start[first] <= p.initial_box)).all()
        assert (np.abs(s.end - s.start) <= p.step_max).all()

    @given(st.integers(1, 20), st.integers(2, 12), st.integers(0, 10_000))
    @settings(max_examples=25)
    def test_dense_continuity_and_determinism(self, n, steps, seed):
        p = DenseWalkParams(n, steps, density=0.112, seed=seed)
        a, b = generate_random_dense(p), generate_random_dense(p)
        validate_segments(a.segments)
        assert _bin_bytes(a) == _bin_bytes(b)
        s = a.segments
        step = np.abs(s.end - s.start)
        assert ((step >= p.step_min) & (step <= p.step_max)).all()
        first = s.segment_id == 0
        assert (s.t_start[first] == 0).all()
        assert ((s.start[first] >= 0) & (s.start[first] <= p.cube_side)).all()

    def test_seed_changes_output(self):
        a = generate_random_walk(RandomWalkParams(3, 5, seed=1))
        b = generate_random_walk(RandomWalkParams(3, 5, seed=2))
        assert _bin_bytes(a) != _bin_bytes(b)

    def test_trajectory_stream_independent_of_count(self):
        few = generate_random_walk(RandomWalkParams(2, 6, seed=9)).segments
        many = generate_random_walk(RandomWalkParams(5, 6, seed=9)).segments
        assert few == many.take(np.arange(len(few)))

    def test_dense_forced_back(self):
        # tiny cube, large steps: particles must keep returning
        p = DenseWalkParams(50, 400, density=1.0, step_min=1.0, step_max=2.0, escape_fraction=0.2, seed=4)
        s = generate_random_dense(p).segments
        side = p.cube_side
        # a particle can overshoot the slack by at most one step before being turned around
        limit = p.escape_fraction * side + p.step_max
        assert (s.end >= -limit - 1e-9).all() and (s.end <= side + limit + 1e-9).all()

    def test_metadata(self):
        ds = generate_random_dense(DenseWalkParams(8, 3, seed=0))
        assert ds.metadata["units"] == "pc"
        assert ds.metadata["cube_side"] == pytest.approx((8 / 0.112) ** (1 / 3))


class TestRoundTrip:
    def test_binary_bit_exact(self):
        ds = three_segments()
        assert read_binary(io.BytesIO(_bin_bytes(ds))).segments == ds.segments

    def test_csv_exact(self):
        ds = three_segments()
        text = _csv_text(ds)
        assert text.splitlines()[0] == ",".join(CSV_HEADER)
        assert read_csv(io.StringIO(text)).segments == ds.segments

    @given(st.integers(1, 5), st.integers(2, 8), st.integers(0, 1000))
    @settings(max_examples=15)
    def test_generated_round_trip(self, n, steps, seed):
        ds = generate_random_walk(RandomWalkParams(n, steps, seed=seed))
        assert read_binary(io.BytesIO(_bin_bytes(ds))).segments == ds.segments
        assert read_csv(io.StringIO(_csv_text(ds))).segments == ds.segments

    def test_binary_layout(self):
        data = _bin_bytes(three_segments())
        assert data[:4] == BINARY_MAGIC
        assert struct.unpack_from("<Q", data, 4)[0] == 3
        assert len(data) == 12 + 3 * (2 * 4 + 8 * 8)
        ids = struct.unpack_from("<II", data, 12)
        vals = struct.unpack_from("<8d", data, 20)
        assert ids == (0, 0)
        assert vals == (0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0)

    @pytest.mark.parametrize("fmt", ["csv", "bin"])
    def test_files_and_sidecar(self, tmp_path, fmt):
        ds = generate_random_walk(RandomWalkParams(2, 4, seed=1))
        path = tmp_path / f"d.{fmt}"
        write_dataset(ds, path, fmt)
        back = read_dataset(path)
        assert back.segments == ds.segments
        assert back.metadata["generator"] == "random-walk"
        assert back.metadata["source_format"] == fmt


class TestErrors:
    def test_wrong_magic(self):
        with pytest.raises(DatasetFormatError, match="magic"):
            read_binary(io.BytesIO(b"XXXX" + bytes(8)))

    def test_truncated_binary(self):
        data = _bin_bytes(three_segments())
        with pytest.raises(DatasetFormatError) as info:
            read_binary(io.BytesIO(data[:-5]))
        assert info.value.record == 2

    def test_csv_missing_column(self):
        lines = _csv_text(three_segments()).splitlines()
        lines[2] = ",".join(lines[2].split(",")[:-1])
        with pytest.raises(DatasetFormatError, match="line 3") as info:
            read_csv(io.StringIO("\n".join(lines)))
        assert info.value.record == 1

    def test_csv_bad_header(self):
        with pytest.raises(DatasetFormatError, match="header"):
            read_csv(io.StringIO("a,b,c\n"))

    def test_csv_empty(self):
        with pytest.raises(DatasetFormatError, match="header"):
            read_csv(io.StringIO(""))

    def test_csv_non_number(self):
        text = _csv_text(three_segments()).replace("1.5", "abc")
        with pytest.raises(DatasetFormatError, match="line"):
            read_csv(io.StringIO(text))

    def test_non_contiguous_trajectory(self):
        segs = make_segments([
            (0, 0, (0, 0, 0), (1, 0, 0), 0.0, 1.0),
            (1, 0, (5, 5, 5), (5, 5, 6), 0.5, 1.5),
            (0, 1, (1, 0, 0), (1, 2, 0), 1.0, 2.0),
        ])
        with pytest.raises(DatasetFormatError, match="non-contiguous") as info:
            validate_segments(segs)
        assert info.value.record == 2

    def test_non_monotone_time(self):
        segs = make_segments([(0, 0, (0, 0, 0), (1, 0, 0), 1.0, 1.0)])
        with pytest.raises(DatasetFormatError, match="non-monotone"):
            validate_segments(segs)

    def test_time_gap(self):
        segs = make_segments([
            (0, 0, (0, 0, 0), (1, 0, 0), 0.0, 1.0),
            (0, 1, (1, 0, 0), (1, 2, 0), 1.5, 2.0),
        ])
        with pytest.raises(DatasetFormatError, match="non-monotone") as info:
            validate_segments(segs)
        assert info.value.record == 1

    def test_spatial_gap(self):
        segs = make_segments([
            (0, 0, (0, 0, 0), (1, 0, 0), 0.0, 1.0),
            (0, 1, (1, 0, 1), (1, 2, 0), 1.0, 2.0),
        ])
        with pytest.raises(DatasetFormatError, match="discontinuous"):
            validate_segments(segs)

    def test_skipped_segment_id(self):
        segs = make_segments([
            (0, 0, (0, 0, 0), (1, 0, 0), 0.0, 1.0),
            (0, 2, (1, 0, 0), (1, 2, 0), 1.0, 2.0),
        ])
        with pytest.raises(DatasetFormatError, match="consecutive"):
            validate_segments(segs)

    def test_non_finite(self):
        segs = make_segments([(0, 0, (0, 0, np.inf), (1, 0, 0), 0.0, 1.0)])
        with pytest.raises(DatasetFormatError, match="non-finite"):
            validate_segments(segs)

    def test_unknown_format(self, tmp_path):
        with pytest.raises(ValueError):
            write_dataset(three_segments(), tmp_path / "x", "parquet")
