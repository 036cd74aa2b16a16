"""One entry point over the four index kinds, shared by the CLI, the service and the benchmarks."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Any

from .engine import DEFAULT_CHUNK, DEFAULT_RESULT_CAPACITY, ResultSet, RunMetrics
from .errors import ConfigurationError
from .fsg import DEFAULT_CANDIDATE_BUFFER_BYTES, DEFAULT_CELLS, build_fsg, search_spatial
from .geometry import Segments
from .rtree import DEFAULT_FANOUT, DEFAULT_MBB_SEGMENTS, build_rtree, search_rtree
from .spatiotemporal import DEFAULT_SUBBINS, build_schedule_st, build_spatiotemporal, search_spatiotemporal
from .temporal import DEFAULT_BINS, build_schedule_temporal, build_temporal, search_temporal

INDEX_KINDS = ("fsg", "temporal", "st", "rtree")


@dataclass(frozen=True)
class IndexParams:
    kind: str
    cells: int = DEFAULT_CELLS
    bins: int = DEFAULT_BINS
    subbins: int = DEFAULT_SUBBINS
    mbb_segments: int = DEFAULT_MBB_SEGMENTS
    fanout: int = DEFAULT_FANOUT

    def __post_init__(self):
        if self.kind not in INDEX_KINDS:
            raise ConfigurationError(f"unknown index kind {self.kind!r}; choose from {', '.join(INDEX_KINDS)}")
        for name in ("cells", "bins", "subbins", "mbb_segments"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1, got {getattr(self, name)}")

    @property
    def swept(self) -> tuple[str, int]:
        """The parameter that characterizes this index kind."""
        return {
            "fsg": ("cells", self.cells),
            "temporal": ("bins", self.bins),
            "st": ("subbins", self.subbins),
            "rtree": ("mbb_segments", self.mbb_segments),
        }[self.kind]

    def describe(self) -> dict[str, Any]:
        out = {"index": self.kind}
        if self.kind == "fsg":
            out["cells"] = self.cells
        elif self.kind == "temporal":
            out["bins"] = self.bins
        elif self.kind == "st":
            out.update(bins=self.bins, subbins=self.subbins)
        else:
            out.update(mbb_segments=self.mbb_segments, fanout=self.fanout)
        return out


@dataclass(frozen=True)
class EngineConfig:
    result_capacity: int = DEFAULT_RESULT_CAPACITY
    candidate_buffer_bytes: int = DEFAULT_CANDIDATE_BUFFER_BYTES
    workers: int = 1
    chunk_size: int = DEFAULT_CHUNK

    def __post_init__(self):
        if self.result_capacity < 1:
            raise ConfigurationError("result capacity must be >= 1")
        if self.candidate_buffer_bytes < 0:
            raise ConfigurationError("candidate buffer must be >= 0 bytes")
        if self.workers < 1 or self.chunk_size < 1:
            raise ConfigurationError("workers and chunk size must be >= 1")


def build_index(entries: Segments, params: IndexParams):
    if params.kind == "fsg":
        return build_fsg(entries, params.cells)
    if params.kind == "temporal":
        return build_temporal(entries, params.bins)
    if params.kind == "st":
        return build_spatiotemporal(entries, params.bins, params.subbins)
    return build_rtree(entries, params.mbb_segments, params.fanout)


def search_index(
    kind: str, index, entries: Segments, queries: Segments, d: float,
    engine: EngineConfig = EngineConfig(),
) -> tuple[ResultSet, RunMetrics]:
    """Run one search; schedule construction counts towards the reported wall time."""
    if not d > 0:
        raise ConfigurationError(f"distance threshold must be > 0, got {d}")
    if len(queries) == 0:
        raise ConfigurationError("query set is empty")
    t0 = time.perf_counter()
    common = dict(result_capacity=engine.result_capacity, workers=engine.workers, chunk_size=engine.chunk_size)
    if kind == "fsg":
        result, metrics = search_spatial(index, entries, queries, d, engine.candidate_buffer_bytes, **common)
    elif kind == "temporal":
        result, metrics = search_temporal(index, queries, build_schedule_temporal(index, queries), d, **common)
    elif kind == "st":
        result, metrics = search_spatiotemporal(index, queries, build_schedule_st(index, queries, d), d, **common)
    elif kind == "rtree":
        result, metrics = search_rtree(index, entries, queries, d, **common)
    else:
        raise ConfigurationError(f"unknown index kind {kind!r}")
    metrics.wall_time = time.perf_counter() - t0
    return result, metrics


def run_search(entries: Segments, queries: Segments, d: float, params: IndexParams,
               engine: EngineConfig = EngineConfig()) -> tuple[ResultSet, RunMetrics]:
    return search_index(params.kind, build_index(entries, params), entries, queries, d, engine)
