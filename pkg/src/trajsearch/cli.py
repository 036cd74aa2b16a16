"""Command-line interface: generate, build-index, search, bench, verify, serve.

Exit codes: 0 success, 1 usage or configuration error, 2 I/O or file
format error, 3 verification failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

from . import __version__
from .bench import BenchmarkMismatch, ScenarioSpec, preset, rows_to_csv, run_scenario, run_sweep
from .dataset import DenseWalkParams, RandomWalkParams, read_dataset, write_dataset
from .engine import (
    DEFAULT_CHUNK, DEFAULT_RESULT_CAPACITY, ResultSet, RunMetrics, brute_force_oracle, compare_result_sets,
    read_results_csv, write_results_csv,
)
from .errors import ConfigurationError, DatasetFormatError, TrajSearchError
from .fsg import DEFAULT_CANDIDATE_BUFFER_BYTES, DEFAULT_CELLS
from .persist import load_index, save_index
from .rtree import DEFAULT_FANOUT, DEFAULT_MBB_SEGMENTS
from .search import INDEX_KINDS, EngineConfig, IndexParams, build_index, search_index
from .spatiotemporal import DEFAULT_SUBBINS
from .temporal import DEFAULT_BINS

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_VERIFY = 0, 1, 2, 3

METRICS_COLUMNS = (
    "index", "d", "n_entries", "n_queries", "invocations", "reserved_records", "unique_records",
    "dedup_ratio", "candidates_refined", "wall_time_s",
)

log = logging.getLogger("trajsearch")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


class VerificationFailed(Exception):
    pass


# --------------------------------------------------------------------- argument groups

def _index_args(p: argparse.ArgumentParser, multi: bool = False) -> None:
    nargs = dict(action="append") if multi else {}
    p.add_argument("--index", choices=INDEX_KINDS, default=None if multi else "temporal", **nargs,
                   help="index kind" + (" (repeatable)" if multi else ""))
    p.add_argument("--cells", type=int, default=None, **nargs, help=f"FSG cells per dimension (default {DEFAULT_CELLS})")
    p.add_argument("--bins", type=int, default=None, **nargs, help=f"temporal bins m (default {DEFAULT_BINS})")
    p.add_argument("--subbins", type=int, default=None, **nargs, help=f"spatial subbins v (default {DEFAULT_SUBBINS})")
    p.add_argument("--mbb-segments", type=int, default=None, **nargs,
                   help=f"R-tree segments per MBB r (default {DEFAULT_MBB_SEGMENTS})")
    p.add_argument("--fanout", type=int, default=DEFAULT_FANOUT, help="R-tree fanout")


def _engine_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--result-capacity", type=int, default=DEFAULT_RESULT_CAPACITY, help="result buffer records")
    p.add_argument("--candidate-buffer", type=int, default=DEFAULT_CANDIDATE_BUFFER_BYTES, metavar="BYTES",
                   help="FSG candidate buffer in bytes (4 bytes per id)")
    p.add_argument("--workers", type=int, default=1, help="worker threads")
    p.add_argument("--chunk-size", type=int, default=DEFAULT_CHUNK, help="gids per kernel chunk")


def _engine(args) -> EngineConfig:
    return EngineConfig(args.result_capacity, args.candidate_buffer, args.workers, args.chunk_size)


def _index_params(args) -> IndexParams:
    return IndexParams(
        args.index,
        cells=args.cells or DEFAULT_CELLS,
        bins=args.bins or DEFAULT_BINS,
        subbins=args.subbins or DEFAULT_SUBBINS,
        mbb_segments=args.mbb_segments or DEFAULT_MBB_SEGMENTS,
        fanout=args.fanout,
    )


def _metrics_row(kind: str, d: float, n_entries: int, n_queries: int, metrics: RunMetrics) -> dict:
    return {"index": kind, "d": d, "n_entries": n_entries, "n_queries": n_queries, **metrics.as_row()}


def _emit_metrics(rows: list[dict], path: str | None) -> None:
    if path:
        target = Path(path)
        new = not target.exists() or target.stat().st_size == 0
        with open(target, "a", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=METRICS_COLUMNS, lineterminator="\n")
            if new:
                w.writeheader()
            w.writerows(rows)
    else:
        w = csv.DictWriter(sys.stdout, fieldnames=METRICS_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def _results_path(output: str, d: float, many: bool) -> Path:
    out = Path(output)
    if not many:
        return out
    return out.with_name(f"{out.stem}.d{d:g}{out.suffix or '.csv'}")


# --------------------------------------------------------------------- commands

def cmd_generate(args) -> int:
    if args.kind in ("random-1m", "random-walk"):
        params = RandomWalkParams(
            n_trajectories=args.trajectories if args.trajectories is not None else 2500,
            n_timesteps=args.timesteps if args.timesteps is not None else 400,
            start_window=args.start_window, initial_box=args.initial_box,
            step_max=args.step_max if args.step_max is not None else 1.0, seed=args.seed,
        )
    else:
        params = DenseWalkParams(
            n_particles=args.particles if args.particles is not None else 65536,
            n_timesteps=args.timesteps if args.timesteps is not None else 193,
            density=args.density,
            step_min=args.step_min, step_max=args.step_max if args.step_max is not None else 5.0,
            escape_fraction=args.escape_fraction, seed=args.seed,
        )
    from .bench import generate
    ds = generate(params)
    fmt = args.format or ("bin" if args.output.endswith(".bin") else "csv")
    write_dataset(ds, args.output, fmt)
    summary = {"output": args.output, "format": fmt, "segments": len(ds), "trajectories": ds.n_trajectories}
    if "cube_side" in ds.metadata:
        summary["cube_side"] = round(ds.metadata["cube_side"], 6)
    print(json.dumps(summary))
    return EXIT_OK


def cmd_build_index(args) -> int:
    ds = read_dataset(args.dataset)
    params = _index_params(args)
    t0 = time.perf_counter()
    index = build_index(ds.segments, params)
    elapsed = time.perf_counter() - t0
    save_index(index, args.output)
    print(json.dumps({"output": args.output, **params.describe(), "build_time_s": round(elapsed, 6)}))
    return EXIT_OK


def _search_local(args, distances: list[float]) -> list[tuple[float, ResultSet, RunMetrics]]:
    entries = read_dataset(args.dataset).segments
    queries = read_dataset(args.queries).segments
    if args.index_file:
        kind, index = load_index(args.index_file)
        if kind != args.index:
            log.info("using %s index from %s", kind, args.index_file)
    else:
        kind, index = args.index, build_index(entries, _index_params(args))
    args.index = kind
    out = []
    for d in distances:
        result, metrics = search_index(kind, index, entries, queries, d, _engine(args))
        out.append((d, result, metrics))
    args._sizes = (len(entries), len(queries))
    return out


def _search_remote(args, distances: list[float]) -> list[tuple[float, ResultSet, RunMetrics]]:
    import httpx
    import numpy as np

    from .engine import RECORD_DTYPE, dedup_results

    base = args.server.rstrip("/")
    with httpx.Client(base_url=base, timeout=None) as client:
        def post(path, payload):
            r = client.post(path, json=payload)
            if r.status_code >= 400:
                raise ConfigurationError(f"server rejected {path}: {r.text}")
            return r.json()

        ds = post("/datasets", {"path": str(Path(args.dataset).resolve())})
        qs = post("/datasets", {"path": str(Path(args.queries).resolve())})
        params = _index_params(args)
        ix = post("/indexes", {
            "dataset_id": ds["dataset_id"], "kind": params.kind, "cells": params.cells, "bins": params.bins,
            "subbins": params.subbins, "mbb_segments": params.mbb_segments, "fanout": params.fanout,
        })
        out = []
        engine = _engine(args)
        for d in distances:
            resp = post("/search", {
                "index_id": ix["index_id"], "queries_id": qs["dataset_id"], "distance": d,
                "engine": {"result_capacity": engine.result_capacity,
                           "candidate_buffer_bytes": engine.candidate_buffer_bytes,
                           "workers": engine.workers, "chunk_size": engine.chunk_size},
            })
            rec = np.array([tuple(r.values()) for r in resp["results"]], dtype=RECORD_DTYPE)
            m = resp["metrics"]
            metrics = RunMetrics(m["invocations"], m["reserved_records"], m["unique_records"],
                                 m["candidates_refined"], m["wall_time_s"])
            out.append((d, dedup_results(rec), metrics))
        args._sizes = (ds["n_segments"], qs["n_segments"])
    return out


def cmd_search(args) -> int:
    distances = args.distance
    runs = _search_remote(args, distances) if args.server else _search_local(args, distances)
    rows = []
    for d, result, metrics in runs:
        path = _results_path(args.output, d, len(distances) > 1)
        write_results_csv(result, path)
        rows.append(_metrics_row(args.index, d, *args._sizes, metrics))
    _emit_metrics(rows, args.metrics)
    return EXIT_OK


def cmd_verify(args) -> int:
    entries = read_dataset(args.dataset).segments
    queries = read_dataset(args.queries).segments
    failed = False
    for d in args.distance:
        oracle = brute_force_oracle(entries, queries, d)
        if args.results:
            candidate = read_results_csv(_results_path(args.results, d, len(args.distance) > 1))
            label = args.results
        else:
            candidate, _ = search_index(args.index, build_index(entries, _index_params(args)), entries, queries, d,
                                        _engine(args))
            label = args.index
        report = compare_result_sets(candidate, oracle, args.tolerance)
        print(f"d={d:g} {label}: {len(candidate)} records vs oracle {len(oracle)}: {report.summary()}")
        failed |= not report.equivalent
    if failed:
        raise VerificationFailed("results differ from the brute-force oracle")
    return EXIT_OK


def _bench_configs(args) -> list[IndexParams]:
    kinds = args.index or list(INDEX_KINDS)
    configs = []
    for kind in kinds:
        if kind == "fsg":
            configs += [IndexParams("fsg", cells=c) for c in (args.cells or [DEFAULT_CELLS])]
        elif kind == "temporal":
            configs += [IndexParams("temporal", bins=m) for m in (args.bins or [DEFAULT_BINS])]
        elif kind == "st":
            configs += [IndexParams("st", bins=m, subbins=v)
                        for m in (args.bins or [DEFAULT_BINS]) for v in (args.subbins or [DEFAULT_SUBBINS])]
        else:
            configs += [IndexParams("rtree", mbb_segments=r, fanout=args.fanout)
                        for r in (args.mbb_segments or [DEFAULT_MBB_SEGMENTS])]
    return configs


def cmd_bench(args) -> int:
    spec = preset(args.scenario, args.seed) if args.scenario else None
    entries = read_dataset(args.dataset).segments if args.dataset else None
    queries = read_dataset(args.queries).segments if args.queries else None
    custom = any(getattr(args, k) for k in ("index", "cells", "bins", "subbins", "mbb_segments"))
    if spec is None:
        if entries is None or queries is None:
            raise UsageError("bench needs --scenario or both --dataset and --queries")
        if not args.distance:
            raise UsageError("bench on files needs at least one --distance")
        rows = run_sweep("custom", entries, queries, _bench_configs(args), args.distance, _engine(args), args.trials)
    else:
        spec = ScenarioSpec(
            spec.name, spec.entries, spec.queries,
            tuple(_bench_configs(args)) if custom else spec.indexes,
            tuple(args.distance) if args.distance else spec.distances,
            _engine(args), args.trials,
        )
        rows = run_scenario(spec, entries, queries)
    if args.output:
        with open(args.output, "w", newline="") as fh:
            rows_to_csv(rows, fh)
    else:
        rows_to_csv(rows, sys.stdout)
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app
    uvicorn.run(create_app(), host=args.host, port=args.port, log_level="info")
    return EXIT_OK


# --------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="trajsearch", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="generate a synthetic trajectory dataset")
    g.add_argument("kind", choices=("random-1m", "random-walk", "random-dense"))
    g.add_argument("-o", "--output", required=True)
    g.add_argument("--format", choices=("csv", "bin"))
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--trajectories", type=int, help="random walk: number of trajectories (2500)")
    g.add_argument("--particles", type=int, help="random dense: number of particles (65536)")
    g.add_argument("--timesteps", type=int, help="points per trajectory (400 walk, 193 dense)")
    g.add_argument("--start-window", type=float, default=100.0)
    g.add_argument("--initial-box", type=float, default=1000.0)
    g.add_argument("--step-max", type=float)
    g.add_argument("--step-min", type=float, default=1.0)
    g.add_argument("--density", type=float, default=0.112)
    g.add_argument("--escape-fraction", type=float, default=0.2)
    g.set_defaults(func=cmd_generate)

    b = sub.add_parser("build-index", help="build an index and save it")
    b.add_argument("--dataset", required=True)
    b.add_argument("-o", "--output", required=True)
    _index_args(b)
    b.set_defaults(func=cmd_build_index)

    s = sub.add_parser("search", help="run a distance-threshold search")
    s.add_argument("--dataset", required=True)
    s.add_argument("--queries", required=True)
    s.add_argument("--distance", type=float, action="append", required=True)
    s.add_argument("-o", "--output", required=True, help="results CSV (one file per distance if repeated)")
    s.add_argument("--metrics", help="append the metrics row here instead of printing it")
    s.add_argument("--index-file", help="prebuilt index from build-index")
    s.add_argument("--server", help="base URL of a running service; search remotely")
    _index_args(s)
    _engine_args(s)
    s.set_defaults(func=cmd_search)

    v = sub.add_parser("verify", help="compare an index (or a results file) with the brute-force oracle")
    v.add_argument("--dataset", required=True)
    v.add_argument("--queries", required=True)
    v.add_argument("--distance", type=float, action="append", required=True)
    v.add_argument("--results", help="results CSV to check instead of running an index")
    v.add_argument("--tolerance", type=float, default=1e-9)
    _index_args(v)
    _engine_args(v)
    v.set_defaults(func=cmd_verify)

    be = sub.add_parser("bench", help="time searches over a parameter sweep")
    be.add_argument("--scenario", choices=("s1", "s1-desk", "s3", "s3-desk"))
    be.add_argument("--dataset")
    be.add_argument("--queries")
    be.add_argument("--distance", type=float, action="append")
    be.add_argument("--trials", type=int, default=3)
    be.add_argument("--seed", type=int, default=0)
    be.add_argument("-o", "--output")
    _index_args(be, multi=True)
    _engine_args(be)
    be.set_defaults(func=cmd_bench)

    sv = sub.add_parser("serve", help="run the HTTP service")
    sv.add_argument("--host", default="127.0.0.1")
    sv.add_argument("--port", type=int, default=8000)
    sv.set_defaults(func=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except UsageError as exc:
        print(f"trajsearch: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigurationError, ValueError) as exc:
        print(f"trajsearch: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, DatasetFormatError) as exc:
        print(f"trajsearch: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (VerificationFailed, BenchmarkMismatch) as exc:
        print(f"trajsearch: verification failed: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except TrajSearchError as exc:
        print(f"trajsearch: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
