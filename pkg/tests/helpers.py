"""Test helpers: small datasets and hypothesis strategies."""

from __future__ import annotations

import numpy as np
from hypothesis import strategies as st

from trajsearch.dataset import RandomWalkParams, generate_random_walk
from trajsearch.geometry import Segments


def walk(n_traj: int, steps: int, seed: int, box: float = 60.0, step: float = 2.0, window: float = 10.0) -> Segments:
    """Small, fairly crowded random walk so that searches return something."""
    params = RandomWalkParams(n_traj, steps, start_window=window, initial_box=box, step_max=step, seed=seed)
    return generate_random_walk(params).segments


def make_segments(rows) -> Segments:
    """``rows`` of (traj, seg, start xyz, end xyz, t0, t1)."""
    return Segments(
        np.array([r[0] for r in rows]), np.array([r[1] for r in rows]),
        np.array([r[2] for r in rows], dtype=float), np.array([r[3] for r in rows], dtype=float),
        np.array([r[4] for r in rows], dtype=float), np.array([r[5] for r in rows], dtype=float),
    )


coord = st.floats(-50, 50, allow_nan=False, allow_infinity=False)
point = st.tuples(coord, coord, coord)


@st.composite
def segment_rows(draw, traj: int = 0, seg: int = 0):
    t0 = draw(st.floats(0, 20, allow_nan=False))
    dt = draw(st.floats(0.01, 10, allow_nan=False))
    return (traj, seg, draw(point), draw(point), t0, t0 + dt)


@st.composite
def walks(draw, max_traj: int = 6, max_steps: int = 8):
    """Random continuous trajectories with distinct ids."""
    seed = draw(st.integers(0, 2 ** 31))
    rng = np.random.default_rng(seed)
    n_traj = draw(st.integers(1, max_traj))
    rows = []
    for tid in range(n_traj):
        steps = int(rng.integers(2, max_steps + 1))
        t = rng.uniform(0, 8) + np.concatenate([[0.0], np.cumsum(rng.uniform(0.2, 2.0, steps - 1))])
        p = rng.uniform(0, 30, 3) + np.concatenate([np.zeros((1, 3)), np.cumsum(rng.uniform(-4, 4, (steps - 1, 3)), 0)])
        for k in range(steps - 1):
            rows.append((tid, k, p[k], p[k + 1], t[k], t[k + 1]))
    return make_segments(rows)


FIG5_POINTS = [
    ((4, 2, 3), (5, 3, 1)), ((2, 3, 4), (1, 2, 2)), ((6, 7, 9), (4, 6, 8)), ((3, 5, 4), (4, 3, 5)),
    ((3, 3, 1), (5, 3, 7)), ((3, 6, 2), (2, 3, 2)), ((8, 9, 10), (10, 9, 8)), ((5, 5, 6), (6, 4, 5)),
    ((8, 8, 13), (7, 7, 10)), ((0, 3, 5), (2, 6, 7)),
]
FIG5_BIN = [0, 0, 0, 0, 1, 1, 1, 1, 2, 2]


def fig5_segments() -> Segments:
    """Ten entries in three unit-length temporal bins over [0, 3], one trajectory each."""
    rows = []
    for k, ((p, q), b) in enumerate(zip(FIG5_POINTS, FIG5_BIN)):
        t0 = b + 0.1 * (k - FIG5_BIN.index(b))
        rows.append((k, 0, p, q, t0, 3.0 if k == 9 else t0 + 0.5))
    return make_segments(rows)


# lines printed by the acceptance suite, repeated in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def report(criterion: int, passed: bool, detail: str) -> bool:
    line = f"{'PASS' if passed else 'FAIL'} criterion {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line, flush=True)
    return passed
