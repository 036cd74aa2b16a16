"""Benchmark scenarios and parameter sweeps.

Each row reports the mean and standard deviation of the search time over
a number of trials next to the result count. A sweep fails when two
configurations of the same (D, Q, d) disagree on the result count, since
timings are meaningless for an incorrect configuration.
"""

from __future__ import annotations

import csv
import io
import statistics
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .dataset import (
    DenseWalkParams, RandomWalkParams, TrajectoryDataset, generate_random_dense, generate_random_walk,
)
from .engine import PAIR_BLOCK
from .errors import ConfigurationError, TrajSearchError
from .geometry import Segments
from .search import EngineConfig, IndexParams, build_index, search_index

BENCH_COLUMNS = (
    "scenario", "index", "parameter", "value", "d", "trials", "mean_s", "std_s",
    "records", "candidates", "invocations",
)


class BenchmarkMismatch(TrajSearchError):
    """Configurations of the same search disagree on the result."""


# --------------------------------------------------------------------- distance calibration

def overlap_min_distances(entries: Segments, queries: Segments, block: int = PAIR_BLOCK) -> np.ndarray:
    """Closest approach of every (entry, query) pair that overlaps in time."""
    out = []
    n_e = len(entries)
    per = max(1, block // max(n_e, 1))
    for q_lo in range(0, len(queries), per):
        q_hi = min(len(queries), q_lo + per)
        qi = np.repeat(np.arange(q_lo, q_hi), n_e)
        ei = np.tile(np.arange(n_e), q_hi - q_lo)
        a = np.maximum(entries.t_start[ei], queries.t_start[qi])
        b = np.minimum(entries.t_end[ei], queries.t_end[qi])
        keep = a <= b
        ei, qi, a, b = ei[keep], qi[keep], a[keep], b[keep]
        e_rate = (entries.end[ei] - entries.start[ei]) / (entries.t_end[ei] - entries.t_start[ei])[:, None]
        q_rate = (queries.end[qi] - queries.start[qi]) / (queries.t_end[qi] - queries.t_start[qi])[:, None]
        e_a = entries.start[ei] + (a - entries.t_start[ei])[:, None] * e_rate
        q_a = queries.start[qi] + (a - queries.t_start[qi])[:, None] * q_rate
        delta = q_a - e_a
        w = q_rate - e_rate
        ww = (w * w).sum(axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            tau = np.where(ww > 0, -(delta * w).sum(axis=1) / ww, 0.0)
        tau = np.clip(tau, 0.0, b - a)
        closest = delta + tau[:, None] * w
        out.append(np.sqrt((closest * closest).sum(axis=1)))
    return np.concatenate(out) if out else np.empty(0)


def calibrate_distances(entries: Segments, queries: Segments, fractions: Sequence[float]) -> list[float]:
    """Thresholds at which the given fractions of time-overlapping pairs interact."""
    dist = overlap_min_distances(entries, queries)
    if dist.size == 0:
        raise ConfigurationError("no entry/query pair overlaps in time")
    return [max(float(np.quantile(dist, f)), 1e-9) for f in fractions]


# --------------------------------------------------------------------- scenarios

@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    entries: RandomWalkParams | DenseWalkParams | None
    queries: RandomWalkParams | DenseWalkParams | None
    indexes: tuple[IndexParams, ...]
    distances: tuple[float, ...]
    engine: EngineConfig = EngineConfig()
    trials: int = 3
    entries_path: str | None = None
    queries_path: str | None = None

    def __post_init__(self):
        if not self.distances or any(not d > 0 for d in self.distances):
            raise ConfigurationError("scenario needs at least one positive distance")
        if self.trials < 1:
            raise ConfigurationError("trials must be >= 1")


def _dense_queries(n: int, entries: DenseWalkParams, seed: int) -> DenseWalkParams:
    # same cube as the entry set, fewer particles
    return replace(entries, n_particles=n, density=n / entries.cube_side ** 3, seed=seed)


def _all_indexes(**overrides) -> tuple[IndexParams, ...]:
    base = dict(cells=50, bins=1000, subbins=2, mbb_segments=10)
    base.update(overrides)
    return tuple(IndexParams(kind, **base) for kind in ("fsg", "temporal", "st", "rtree"))


def preset(name: str, seed: int = 0) -> ScenarioSpec:
    """Named scenarios; ``s1``/``s3`` are full scale, ``*-desk`` are laptop-sized analogs."""
    d_s1 = tuple(float(x) for x in range(5, 55, 5))
    if name == "s1":
        return ScenarioSpec(
            "s1", RandomWalkParams(2500, 400, seed=seed), RandomWalkParams(100, 400, seed=seed + 1),
            _all_indexes(bins=10_000), d_s1,
        )
    if name == "s1-desk":
        return ScenarioSpec(
            "s1-desk", RandomWalkParams(250, 400, seed=seed), RandomWalkParams(10, 400, seed=seed + 1),
            _all_indexes(), d_s1,
        )
    dense = DenseWalkParams(seed=seed)
    if name == "s3":
        return ScenarioSpec(
            "s3", dense, _dense_queries(265, dense, seed + 1), _all_indexes(), (0.001, 0.002, 0.003, 0.004, 0.005),
        )
    if name == "s3-desk":
        small = DenseWalkParams(n_particles=4096, density=0.112, seed=seed)
        return ScenarioSpec(
            "s3-desk", small, _dense_queries(32, small, seed + 1), _all_indexes(), (1.0, 2.0, 3.0, 4.0, 5.0),
        )
    raise ConfigurationError(f"unknown scenario {name!r}; choose from s1, s1-desk, s3, s3-desk")


def generate(params: RandomWalkParams | DenseWalkParams) -> TrajectoryDataset:
    if isinstance(params, DenseWalkParams):
        return generate_random_dense(params)
    return generate_random_walk(params)


# --------------------------------------------------------------------- sweeps

@dataclass
class BenchRow:
    scenario: str
    index: str
    parameter: str
    value: int
    d: float
    trials: int
    mean_s: float
    std_s: float
    records: int
    candidates: int
    invocations: int
    times: list[float] = field(default_factory=list, repr=False)

    def as_dict(self) -> dict:
        return {c: getattr(self, c) for c in BENCH_COLUMNS}


def run_sweep(
    scenario: str,
    entries: Segments,
    queries: Segments,
    configs: Iterable[IndexParams],
    distances: Sequence[float],
    engine: EngineConfig = EngineConfig(),
    trials: int = 3,
    check: bool = True,
) -> list[BenchRow]:
    """Time every (config, d) pair; index construction is excluded from the timing."""
    rows: list[BenchRow] = []
    for params in configs:
        index = build_index(entries, params)
        name, value = params.swept
        for d in distances:
            times, result, metrics = [], None, None
            for _ in range(trials):
                result, metrics = search_index(params.kind, index, entries, queries, d, engine)
                times.append(metrics.wall_time)
            rows.append(BenchRow(
                scenario, params.kind, name, value, float(d), trials,
                statistics.fmean(times), statistics.pstdev(times) if trials > 1 else 0.0,
                len(result), metrics.candidates_refined, metrics.invocations, times,
            ))
    if check:
        check_counts(rows)
    return rows


def check_counts(rows: Sequence[BenchRow]) -> None:
    by_d: dict[float, set[int]] = {}
    for row in rows:
        by_d.setdefault(row.d, set()).add(row.records)
    bad = {d: sorted(c) for d, c in by_d.items() if len(c) > 1}
    if bad:
        raise BenchmarkMismatch(f"result counts disagree across configurations: {bad}")


def run_scenario(spec: ScenarioSpec, entries: Segments | None = None, queries: Segments | None = None) -> list[BenchRow]:
    if entries is None:
        if spec.entries is None:
            raise ConfigurationError(f"scenario {spec.name} needs an entry dataset")
        entries = generate(spec.entries).segments
    if queries is None:
        if spec.queries is None:
            raise ConfigurationError(f"scenario {spec.name} needs a query dataset")
        queries = generate(spec.queries).segments
    return run_sweep(spec.name, entries, queries, spec.indexes, spec.distances, spec.engine, spec.trials)


def rows_to_csv(rows: Sequence[BenchRow], sink=None) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=BENCH_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        out = row.as_dict()
        out["mean_s"] = f"{row.mean_s:.6f}"
        out["std_s"] = f"{row.std_s:.6f}"
        writer.writerow(out)
    text = buf.getvalue()
    if sink is not None:
        sink.write(text)
    return text
