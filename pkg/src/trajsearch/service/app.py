"""HTTP service around the search core.

Datasets and built indexes live in an in-memory registry for the lifetime
of the process; clients refer to them by the ids returned on creation.
"""

from __future__ import annotations

import itertools
import threading
import time
from dataclasses import dataclass, field

from fastapi import FastAPI, HTTPException
from fastapi.responses import JSONResponse

from .. import __version__
from ..dataset import DenseWalkParams, RandomWalkParams, TrajectoryDataset, read_dataset
from ..engine import brute_force_oracle, compare_result_sets
from ..errors import DatasetFormatError, TrajSearchError
from ..bench import generate
from ..search import EngineConfig, IndexParams, build_index, search_index
from .schemas import (
    DatasetInfo, GenerateRequest, Health, IndexInfo, IndexRequest, InteractionOut, Metrics, RegisterRequest,
    SearchRequest, SearchResponse, VerifyRequest, VerifyResponse,
)


@dataclass
class _Index:
    kind: str
    dataset_id: str
    params: IndexParams
    index: object
    build_time: float


@dataclass
class Registry:
    datasets: dict[str, tuple[str, TrajectoryDataset]] = field(default_factory=dict)
    indexes: dict[str, _Index] = field(default_factory=dict)
    _ids: itertools.count = field(default_factory=lambda: itertools.count(1))
    _lock: threading.Lock = field(default_factory=threading.Lock)

    def new_id(self, prefix: str) -> str:
        with self._lock:
            return f"{prefix}-{next(self._ids)}"

    def dataset(self, dataset_id: str) -> TrajectoryDataset:
        if dataset_id not in self.datasets:
            raise HTTPException(404, f"unknown dataset {dataset_id!r}")
        return self.datasets[dataset_id][1]

    def index(self, index_id: str) -> _Index:
        if index_id not in self.indexes:
            raise HTTPException(404, f"unknown index {index_id!r}")
        return self.indexes[index_id]


def _dataset_info(dataset_id: str, name: str, ds: TrajectoryDataset) -> DatasetInfo:
    meta = {k: v for k, v in ds.metadata.items() if isinstance(v, (int, float, str, bool)) or v is None}
    return DatasetInfo(
        dataset_id=dataset_id, name=name, n_segments=len(ds), n_trajectories=ds.n_trajectories, metadata=meta,
    )


def _engine(req) -> EngineConfig:
    return EngineConfig(**req.model_dump())


def create_app(registry: Registry | None = None) -> FastAPI:
    reg = registry or Registry()
    app = FastAPI(title="trajsearch", version=__version__)
    app.state.registry = reg

    @app.exception_handler(TrajSearchError)
    async def _domain_error(request, exc: TrajSearchError):
        return JSONResponse(status_code=422, content={"detail": str(exc), "error": type(exc).__name__})

    @app.get("/health", response_model=Health)
    def health():
        return Health(version=__version__, datasets=len(reg.datasets), indexes=len(reg.indexes))

    @app.post("/datasets/generate", response_model=DatasetInfo)
    def generate_dataset(req: GenerateRequest):
        fields = req.params.model_dump(exclude={"kind"})
        params = RandomWalkParams(**fields) if req.params.kind == "random-walk" else DenseWalkParams(**fields)
        ds = generate(params)
        dataset_id = reg.new_id("ds")
        name = req.name or req.params.kind
        reg.datasets[dataset_id] = (name, ds)
        return _dataset_info(dataset_id, name, ds)

    @app.post("/datasets", response_model=DatasetInfo)
    def register_dataset(req: RegisterRequest):
        try:
            ds = read_dataset(req.path)
        except FileNotFoundError:
            raise HTTPException(404, f"no such file: {req.path}")
        except DatasetFormatError as exc:
            raise HTTPException(400, str(exc))
        dataset_id = reg.new_id("ds")
        name = req.name or req.path
        reg.datasets[dataset_id] = (name, ds)
        return _dataset_info(dataset_id, name, ds)

    @app.get("/datasets/{dataset_id}", response_model=DatasetInfo)
    def get_dataset(dataset_id: str):
        ds = reg.dataset(dataset_id)
        return _dataset_info(dataset_id, reg.datasets[dataset_id][0], ds)

    @app.post("/indexes", response_model=IndexInfo)
    def create_index(req: IndexRequest):
        ds = reg.dataset(req.dataset_id)
        params = IndexParams(**req.model_dump(exclude={"dataset_id"}))
        t0 = time.perf_counter()
        index = build_index(ds.segments, params)
        elapsed = time.perf_counter() - t0
        index_id = reg.new_id("ix")
        reg.indexes[index_id] = _Index(params.kind, req.dataset_id, params, index, elapsed)
        return IndexInfo(
            index_id=index_id, dataset_id=req.dataset_id, kind=params.kind,
            params=params.describe(), build_time_s=elapsed,
        )

    @app.get("/indexes/{index_id}", response_model=IndexInfo)
    def get_index(index_id: str):
        ix = reg.index(index_id)
        return IndexInfo(
            index_id=index_id, dataset_id=ix.dataset_id, kind=ix.kind,
            params=ix.params.describe(), build_time_s=ix.build_time,
        )

    @app.post("/search", response_model=SearchResponse)
    def search(req: SearchRequest):
        ix = reg.index(req.index_id)
        entries = reg.dataset(ix.dataset_id).segments
        queries = reg.dataset(req.queries_id).segments
        result, metrics = search_index(ix.kind, ix.index, entries, queries, req.distance, _engine(req.engine))
        results = None
        if req.include_results:
            results = [InteractionOut(**dict(zip(result.records.dtype.names, r))) for r in result.records.tolist()]
        return SearchResponse(
            index_id=req.index_id, kind=ix.kind, distance=req.distance,
            metrics=Metrics(**metrics.as_row()), n_results=len(result), results=results,
        )

    @app.post("/verify", response_model=VerifyResponse)
    def verify(req: VerifyRequest):
        ix = reg.index(req.index_id)
        entries = reg.dataset(ix.dataset_id).segments
        queries = reg.dataset(req.queries_id).segments
        result, _ = search_index(ix.kind, ix.index, entries, queries, req.distance, _engine(req.engine))
        oracle = brute_force_oracle(entries, queries, req.distance)
        report = compare_result_sets(result, oracle, req.tolerance)
        return VerifyResponse(
            equivalent=report.equivalent, summary=report.summary(), n_index=len(result),
            n_oracle=len(oracle), max_deviation=report.max_deviation,
        )

    return app


app = create_app()
