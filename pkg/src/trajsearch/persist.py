"""Saving and loading built indexes.

FSG indexes use their own little-endian ``FSG1`` layout; the other kinds
are stored as ``.npz`` archives with a ``kind`` field. Nothing is pickled.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import DatasetFormatError
from .fsg import FSG_MAGIC, FsgIndex, load_fsg, save_fsg
from .geometry import Segments
from .rtree import RTreeIndex, RTreeLevel
from .spatiotemporal import SpatioTemporalIndex
from .temporal import TemporalIndex

_SEGMENT_FIELDS = ("trajectory_id", "segment_id", "start", "end", "t_start", "t_end")


def index_kind(index) -> str:
    if isinstance(index, FsgIndex):
        return "fsg"
    if isinstance(index, SpatioTemporalIndex):
        return "st"
    if isinstance(index, TemporalIndex):
        return "temporal"
    if isinstance(index, RTreeIndex):
        return "rtree"
    raise TypeError(f"not an index: {type(index).__name__}")


def _temporal_arrays(t: TemporalIndex, prefix: str = "") -> dict:
    out = {f"{prefix}entries_{f}": getattr(t.entries, f) for f in _SEGMENT_FIELDS}
    out.update({
        f"{prefix}order": t.order, f"{prefix}b_start": t.b_start, f"{prefix}b_end": t.b_end,
        f"{prefix}b_first": t.b_first, f"{prefix}b_last": t.b_last,
        f"{prefix}scalars": np.array([t.t_min, t.t_max, t.b]),
    })
    return out


def _temporal_from(z, prefix: str = "") -> TemporalIndex:
    entries = Segments(*(z[f"{prefix}entries_{f}"] for f in _SEGMENT_FIELDS))
    t_min, t_max, b = z[f"{prefix}scalars"].tolist()
    return TemporalIndex(
        entries, z[f"{prefix}order"], z[f"{prefix}b_start"], z[f"{prefix}b_end"],
        z[f"{prefix}b_first"], z[f"{prefix}b_last"], t_min, t_max, b,
    )


def save_index(index, path) -> str:
    kind = index_kind(index)
    path = Path(path)
    if kind == "fsg":
        save_fsg(index, path)
        return kind
    arrays: dict = {"kind": np.array(kind)}
    if kind == "temporal":
        arrays.update(_temporal_arrays(index))
    elif kind == "st":
        arrays.update(_temporal_arrays(index.base, "base_"))
        arrays.update(v=np.array(index.v), origin=index.origin, width=index.width)
        for dim, name in enumerate("XYZ"):
            arrays[f"array_{name}"] = index.arrays[dim]
            arrays[f"offsets_{name}"] = index.offsets[dim]
    else:
        arrays.update(
            fanout=np.array(index.fanout), r=np.array(index.r), n_levels=np.array(len(index.levels)),
            leaf_lo=index.leaf_lo, leaf_hi=index.leaf_hi, seg_first=index.seg_first, seg_last=index.seg_last,
        )
        for k, level in enumerate(index.levels):
            arrays.update({
                f"level{k}_lo": level.lo, f"level{k}_hi": level.hi,
                f"level{k}_child_start": level.child_start, f"level{k}_child_count": level.child_count,
            })
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return kind


def load_index(path):
    """Return ``(kind, index)``."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == FSG_MAGIC:
        return "fsg", load_fsg(path)
    try:
        z = np.load(path, allow_pickle=False)
    except (ValueError, OSError) as exc:
        raise DatasetFormatError(f"{path} is not an index file: {exc}") from exc
    with z:
        kind = str(z["kind"])
        if kind == "temporal":
            return kind, _temporal_from(z)
        if kind == "st":
            base = _temporal_from(z, "base_")
            return kind, SpatioTemporalIndex(
                base, int(z["v"]), z["origin"], z["width"],
                [z[f"array_{n}"] for n in "XYZ"], [z[f"offsets_{n}"] for n in "XYZ"],
            )
        if kind == "rtree":
            levels = [
                RTreeLevel(z[f"level{k}_lo"], z[f"level{k}_hi"], z[f"level{k}_child_start"], z[f"level{k}_child_count"])
                for k in range(int(z["n_levels"]))
            ]
            return kind, RTreeIndex(
                int(z["fanout"]), int(z["r"]), levels, z["leaf_lo"], z["leaf_hi"], z["seg_first"], z["seg_last"],
            )
    raise DatasetFormatError(f"{path}: unknown index kind {kind!r}")
