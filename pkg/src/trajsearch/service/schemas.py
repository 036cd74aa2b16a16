"""Request and response models of the HTTP service."""

from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, Field

from ..engine import DEFAULT_CHUNK, DEFAULT_RESULT_CAPACITY
from ..fsg import DEFAULT_CANDIDATE_BUFFER_BYTES, DEFAULT_CELLS
from ..rtree import DEFAULT_FANOUT, DEFAULT_MBB_SEGMENTS
from ..spatiotemporal import DEFAULT_SUBBINS
from ..temporal import DEFAULT_BINS


class Health(BaseModel):
    status: str = "ok"
    version: str
    datasets: int
    indexes: int


class RandomWalkRequest(BaseModel):
    kind: Literal["random-walk"] = "random-walk"
    n_trajectories: int = Field(2500, ge=1)
    n_timesteps: int = Field(400, ge=2)
    start_window: float = Field(100.0, ge=0)
    initial_box: float = Field(1000.0, ge=0)
    step_max: float = Field(1.0, gt=0)
    seed: int = 0


class DenseWalkRequest(BaseModel):
    kind: Literal["random-dense"] = "random-dense"
    n_particles: int = Field(65536, ge=1)
    n_timesteps: int = Field(193, ge=2)
    density: float = Field(0.112, gt=0)
    step_min: float = Field(1.0, ge=0)
    step_max: float = Field(5.0, ge=0)
    escape_fraction: float = Field(0.2, ge=0)
    seed: int = 0


class GenerateRequest(BaseModel):
    params: RandomWalkRequest | DenseWalkRequest = Field(discriminator="kind")
    name: str | None = None


class RegisterRequest(BaseModel):
    path: str
    name: str | None = None


class DatasetInfo(BaseModel):
    dataset_id: str
    name: str
    n_segments: int
    n_trajectories: int
    metadata: dict


class IndexRequest(BaseModel):
    dataset_id: str
    kind: Literal["fsg", "temporal", "st", "rtree"]
    cells: int = Field(DEFAULT_CELLS, ge=1)
    bins: int = Field(DEFAULT_BINS, ge=1)
    subbins: int = Field(DEFAULT_SUBBINS, ge=1)
    mbb_segments: int = Field(DEFAULT_MBB_SEGMENTS, ge=1)
    fanout: int = Field(DEFAULT_FANOUT, ge=2)


class IndexInfo(BaseModel):
    index_id: str
    dataset_id: str
    kind: str
    params: dict
    build_time_s: float


class EngineRequest(BaseModel):
    result_capacity: int = Field(DEFAULT_RESULT_CAPACITY, ge=1)
    candidate_buffer_bytes: int = Field(DEFAULT_CANDIDATE_BUFFER_BYTES, ge=0)
    workers: int = Field(1, ge=1)
    chunk_size: int = Field(DEFAULT_CHUNK, ge=1)


class SearchRequest(BaseModel):
    index_id: str
    queries_id: str
    distance: float = Field(gt=0)
    engine: EngineRequest = EngineRequest()
    include_results: bool = True


class InteractionOut(BaseModel):
    query_traj: int
    query_seg: int
    entry_traj: int
    entry_seg: int
    t_begin: float
    t_end: float


class Metrics(BaseModel):
    invocations: int
    reserved_records: int
    unique_records: int
    dedup_ratio: float
    candidates_refined: int
    wall_time_s: float


class SearchResponse(BaseModel):
    index_id: str
    kind: str
    distance: float
    metrics: Metrics
    n_results: int
    results: list[InteractionOut] | None = None


class VerifyRequest(BaseModel):
    index_id: str
    queries_id: str
    distance: float = Field(gt=0)
    tolerance: float = Field(1e-9, ge=0)
    engine: EngineRequest = EngineRequest()


class VerifyResponse(BaseModel):
    equivalent: bool
    summary: str
    n_index: int
    n_oracle: int
    max_deviation: float
