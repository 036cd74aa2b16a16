"""Synthetic trajectory datasets and their file formats.

Two random-walk generators are provided: a sparse one (uniform start
times, uniform per-axis steps) and a dense one (all particles start in a
cube sized from a target number density, and particles that drift too far
from the cube are pushed back towards it).

Every trajectory draws from its own random stream derived from
``(seed, trajectory_id)``, so output does not depend on generation order.

File formats
------------
CSV: header ``traj_id,seg_id,x_start,y_start,z_start,t_start,x_end,y_end,z_end,t_end``
followed by one row per segment.

Binary: magic ``TRJ1``, little-endian ``uint64`` segment count, then per
segment two ``uint32`` ids followed by eight ``float64`` values in the CSV
column order.
"""

from __future__ import annotations

import csv
import io
import json
import os
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .errors import DatasetFormatError
from .geometry import Segments

CSV_HEADER = (
    "traj_id", "seg_id",
    "x_start", "y_start", "z_start", "t_start",
    "x_end", "y_end", "z_end", "t_end",
)
BINARY_MAGIC = b"TRJ1"
BINARY_RECORD = np.dtype([
    ("traj_id", "<u4"), ("seg_id", "<u4"),
    ("x_start", "<f8"), ("y_start", "<f8"), ("z_start", "<f8"), ("t_start", "<f8"),
    ("x_end", "<f8"), ("y_end", "<f8"), ("z_end", "<f8"), ("t_end", "<f8"),
])


@dataclass
class TrajectoryDataset:
    segments: Segments
    metadata: dict[str, Any] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.segments)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TrajectoryDataset):
            return NotImplemented
        return self.segments == other.segments

    @property
    def n_trajectories(self) -> int:
        if len(self.segments) == 0:
            return 0
        return int(np.unique(self.segments.trajectory_id).size)


@dataclass(frozen=True)
class RandomWalkParams:
    """Sparse random walk (the Random-1M style)."""

    n_trajectories: int = 2500
    n_timesteps: int = 400
    start_window: float = 100.0
    initial_box: float = 1000.0
    step_max: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_trajectories < 1:
            raise ValueError("n_trajectories must be >= 1")
        if self.n_timesteps < 2:
            raise ValueError("n_timesteps must be >= 2")
        if not self.step_max > 0:
            raise ValueError("step_max must be > 0")
        if self.start_window < 0 or self.initial_box < 0:
            raise ValueError("start_window and initial_box must be >= 0")


@dataclass(frozen=True)
class DenseWalkParams:
    """Dense random walk inside a density-sized cube (Random-dense style).

    Units are parsecs; the default step bounds of 1 to 5 pc correspond to
    0.001 to 0.005 kpc.
    """

    n_particles: int = 65536
    n_timesteps: int = 193
    density: float = 0.112
    step_min: float = 1.0
    step_max: float = 5.0
    escape_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.n_particles < 1:
            raise ValueError("n_particles must be >= 1")
        if self.n_timesteps < 2:
            raise ValueError("n_timesteps must be >= 2")
        if not self.density > 0:
            raise ValueError("density must be > 0")
        if not 0 <= self.step_min <= self.step_max:
            raise ValueError("need 0 <= step_min <= step_max")
        if self.escape_fraction < 0:
            raise ValueError("escape_fraction must be >= 0")

    @property
    def cube_side(self) -> float:
        return (self.n_particles / self.density) ** (1.0 / 3.0)


def _stream(seed: int, trajectory_id: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(trajectory_id,))))


def _segments_from_tracks(positions: np.ndarray, times: np.ndarray) -> Segments:
    """Flatten ``(n_traj, n_steps, 3)`` positions and ``(n_traj, n_steps)`` times."""
    n_traj, n_steps, _ = positions.shape
    per = n_steps - 1
    traj = np.repeat(np.arange(n_traj, dtype=np.int64), per)
    seg = np.tile(np.arange(per, dtype=np.int64), n_traj)
    return Segments(
        trajectory_id=traj,
        segment_id=seg,
        start=positions[:, :-1, :].reshape(-1, 3),
        end=positions[:, 1:, :].reshape(-1, 3),
        t_start=times[:, :-1].reshape(-1),
        t_end=times[:, 1:].reshape(-1),
    )


def segment_count(n_trajectories: int, n_timesteps: int) -> int:
    return n_trajectories * (n_timesteps - 1)


def generate_random_walk(p: RandomWalkParams) -> TrajectoryDataset:
    n, steps = p.n_trajectories, p.n_timesteps
    positions = np.empty((n, steps, 3))
    t0 = np.empty(n)
    for tid in range(n):
        rng = _stream(p.seed, tid)
        t0[tid] = rng.uniform(0.0, p.start_window)
        origin = rng.uniform(0.0, p.initial_box, size=3)
        moves = rng.uniform(-p.step_max, p.step_max, size=(steps - 1, 3))
        positions[tid, 0] = origin
        np.cumsum(moves, axis=0, out=positions[tid, 1:])
        positions[tid, 1:] += origin
    times = t0[:, None] + np.arange(steps, dtype=np.float64)[None, :]
    meta = {"generator": "random-walk", "units": "arbitrary", **asdict(p)}
    return TrajectoryDataset(_segments_from_tracks(positions, times), meta)


def generate_random_dense(p: DenseWalkParams) -> TrajectoryDataset:
    n, steps = p.n_particles, p.n_timesteps
    side = p.cube_side
    slack = p.escape_fraction * side
    origin = np.empty((n, 3))
    magnitude = np.empty((n, steps - 1, 3))
    sign = np.empty((n, steps - 1, 3), dtype=np.int8)
    for tid in range(n):
        rng = _stream(p.seed, tid)
        origin[tid] = rng.uniform(0.0, side, size=3)
        magnitude[tid] = rng.uniform(p.step_min, p.step_max, size=(steps - 1, 3))
        sign[tid] = np.where(rng.random(size=(steps - 1, 3)) < 0.5, -1, 1)

    positions = np.empty((n, steps, 3))
    positions[:, 0] = origin
    # per particle and axis: 0 free, +1 forced upward, -1 forced downward
    forced = np.zeros((n, 3))
    current = origin.copy()
    for k in range(steps - 1):
        forced[current < -slack] = 1.0
        forced[current > side + slack] = -1.0
        forced[(forced > 0) & (current >= 0.0)] = 0.0
        forced[(forced < 0) & (current <= side)] = 0.0
        step_sign = np.where(forced != 0.0, forced, sign[:, k])
        current = current + step_sign * magnitude[:, k]
        positions[:, k + 1] = current
    times = np.broadcast_to(np.arange(steps, dtype=np.float64), (n, steps))
    meta = {
        "generator": "random-dense", "units": "pc", "cube_side": side,
        **asdict(p),
    }
    return TrajectoryDataset(_segments_from_tracks(positions, times), meta)


# --------------------------------------------------------------------- validation

def validate_segments(segs: Segments) -> None:
    """Check ingest invariants; raise :class:`DatasetFormatError` naming the record."""
    n = len(segs)
    if n == 0:
        return
    finite = (
        np.isfinite(segs.start).all(axis=1) & np.isfinite(segs.end).all(axis=1)
        & np.isfinite(segs.t_start) & np.isfinite(segs.t_end)
    )
    if not finite.all():
        raise DatasetFormatError("non-finite coordinate or time", int(np.argmin(finite)))
    bad = ~(segs.t_start < segs.t_end)
    if bad.any():
        raise DatasetFormatError("non-monotone time (t_start >= t_end)", int(np.argmax(bad)))
    if (segs.trajectory_id < 0).any() or (segs.segment_id < 0).any():
        raise DatasetFormatError("negative id", int(np.argmax((segs.trajectory_id < 0) | (segs.segment_id < 0))))

    tid = segs.trajectory_id
    new_traj = np.ones(n, dtype=bool)
    new_traj[1:] = tid[1:] != tid[:-1]
    firsts = tid[new_traj]
    if np.unique(firsts).size != firsts.size:
        seen: set[int] = set()
        for i in np.flatnonzero(new_traj):
            if int(tid[i]) in seen:
                raise DatasetFormatError(f"non-contiguous trajectory {int(tid[i])}", int(i))
            seen.add(int(tid[i]))
    starts_ok = segs.segment_id[new_traj] == 0
    if not starts_ok.all():
        i = int(np.flatnonzero(new_traj)[np.argmin(starts_ok)])
        raise DatasetFormatError(f"trajectory {int(tid[i])} does not start at segment 0", i)
    cont = ~new_traj[1:]
    if cont.any():
        nxt = np.flatnonzero(cont) + 1
        prv = nxt - 1
        ordered = segs.segment_id[nxt] == segs.segment_id[prv] + 1
        if not ordered.all():
            raise DatasetFormatError("segment ids not consecutive within trajectory", int(nxt[np.argmin(ordered)]))
        if not (segs.t_end[prv] == segs.t_start[nxt]).all():
            i = int(nxt[np.argmin(segs.t_end[prv] == segs.t_start[nxt])])
            raise DatasetFormatError("non-monotone time: segment does not start where previous ended", i)
        joined = (segs.end[prv] == segs.start[nxt]).all(axis=1)
        if not joined.all():
            raise DatasetFormatError("trajectory is discontinuous in space", int(nxt[np.argmin(joined)]))


# --------------------------------------------------------------------- I/O

def _records_to_segments(rec: np.ndarray) -> Segments:
    return Segments(
        trajectory_id=rec["traj_id"].astype(np.int64),
        segment_id=rec["seg_id"].astype(np.int64),
        start=np.stack([rec["x_start"], rec["y_start"], rec["z_start"]], axis=1),
        end=np.stack([rec["x_end"], rec["y_end"], rec["z_end"]], axis=1),
        t_start=rec["t_start"].astype(np.float64),
        t_end=rec["t_end"].astype(np.float64),
    )


def _segments_to_records(segs: Segments) -> np.ndarray:
    if len(segs) and (segs.trajectory_id.max() > 0xFFFFFFFF or segs.segment_id.max() > 0xFFFFFFFF):
        raise DatasetFormatError("ids do not fit in 32 bits")
    rec = np.empty(len(segs), dtype=BINARY_RECORD)
    rec["traj_id"] = segs.trajectory_id
    rec["seg_id"] = segs.segment_id
    for axis, name in enumerate("xyz"):
        rec[f"{name}_start"] = segs.start[:, axis]
        rec[f"{name}_end"] = segs.end[:, axis]
    rec["t_start"] = segs.t_start
    rec["t_end"] = segs.t_end
    return rec


def write_binary(ds: TrajectoryDataset, sink) -> None:
    rec = _segments_to_records(ds.segments)
    with _open(sink, "wb") as fh:
        fh.write(BINARY_MAGIC)
        fh.write(struct.pack("<Q", len(rec)))
        fh.write(rec.tobytes())


def read_binary(source) -> TrajectoryDataset:
    with _open(source, "rb") as fh:
        data = fh.read()
    if data[:4] != BINARY_MAGIC:
        raise DatasetFormatError(f"bad magic {data[:4]!r}, expected {BINARY_MAGIC!r}")
    if len(data) < 12:
        raise DatasetFormatError("truncated header")
    (count,) = struct.unpack_from("<Q", data, 4)
    body = len(data) - 12
    if body != count * BINARY_RECORD.itemsize:
        complete = body // BINARY_RECORD.itemsize
        raise DatasetFormatError(
            f"header declares {count} segments but body holds {body} bytes",
            min(complete, count),
        )
    rec = np.frombuffer(data, dtype=BINARY_RECORD, count=count, offset=12)
    segs = _records_to_segments(rec)
    validate_segments(segs)
    return TrajectoryDataset(segs, {"source_format": "bin"})


def write_csv(ds: TrajectoryDataset, sink) -> None:
    s = ds.segments
    with _open(sink, "w") as fh:
        fh.write(",".join(CSV_HEADER) + "\n")
        for i in range(len(s)):
            vals = (*s.start[i].tolist(), float(s.t_start[i]), *s.end[i].tolist(), float(s.t_end[i]))
            fh.write(f"{int(s.trajectory_id[i])},{int(s.segment_id[i])}," + ",".join(repr(v) for v in vals) + "\n")


def read_csv(source) -> TrajectoryDataset:
    with _open(source, "r") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetFormatError("empty file: missing header") from None
        if tuple(h.strip() for h in header) != CSV_HEADER:
            raise DatasetFormatError(f"malformed header {header!r}; expected {','.join(CSV_HEADER)}")
        ids: list[tuple[int, int]] = []
        vals: list[list[float]] = []
        for rec, row in enumerate(reader):
            if not row:
                continue
            if len(row) != len(CSV_HEADER):
                raise DatasetFormatError(
                    f"line {reader.line_num}: expected {len(CSV_HEADER)} columns, got {len(row)}", rec
                )
            try:
                ids.append((int(row[0]), int(row[1])))
                vals.append([float(v) for v in row[2:]])
            except ValueError as exc:
                raise DatasetFormatError(f"line {reader.line_num}: {exc}", rec) from None
    id_arr = np.array(ids, dtype=np.int64).reshape(-1, 2)
    v = np.array(vals, dtype=np.float64).reshape(-1, 8)
    segs = Segments(id_arr[:, 0], id_arr[:, 1], v[:, 0:3], v[:, 4:7], v[:, 3], v[:, 7])
    validate_segments(segs)
    return TrajectoryDataset(segs, {"source_format": "csv"})


def read_dataset(source) -> TrajectoryDataset:
    """Read either format, sniffing the binary magic."""
    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            head = fh.read(4)
        ds = read_binary(source) if head == BINARY_MAGIC else read_csv(source)
        sidecar = Path(f"{source}.meta.json")
        if sidecar.exists():
            ds.metadata = {**json.loads(sidecar.read_text()), **ds.metadata}
        return ds
    if isinstance(source, (io.BufferedIOBase, io.RawIOBase)):
        data = source.read()
        return read_binary(io.BytesIO(data)) if data[:4] == BINARY_MAGIC else read_csv(io.StringIO(data.decode()))
    return read_csv(source)


def write_dataset(ds: TrajectoryDataset, sink, fmt: str | None = None) -> None:
    if fmt is None:
        fmt = "bin" if isinstance(sink, (str, os.PathLike)) and str(sink).endswith(".bin") else "csv"
    if fmt == "bin":
        write_binary(ds, sink)
    elif fmt == "csv":
        write_csv(ds, sink)
    else:
        raise ValueError(f"unknown format {fmt!r}")
    if isinstance(sink, (str, os.PathLike)) and ds.metadata:
        Path(f"{sink}.meta.json").write_text(json.dumps(ds.metadata, indent=2, sort_keys=True))


class _open:
    """Open a path, or pass an already-open file object through untouched."""

    def __init__(self, target, mode: str):
        self.target = target
        self.mode = mode
        self.owned = isinstance(target, (str, os.PathLike))

    def __enter__(self):
        if self.owned:
            kwargs = {} if "b" in self.mode else {"newline": "", "encoding": "ascii"}
            self.fh = open(self.target, self.mode, **kwargs)
        else:
            self.fh = self.target
        return self.fh

    def __exit__(self, *exc):
        if self.owned:
            self.fh.close()
        return False
