"""Distance-threshold search over spatiotemporal trajectory segments."""

from .dataset import (
    DenseWalkParams, RandomWalkParams, TrajectoryDataset, generate_random_dense,
    generate_random_walk, read_dataset, write_dataset,
)
from .engine import ResultSet, brute_force_oracle, compare_result_sets, dedup_results
from .geometry import Interaction, Mbb, Point3, SegmentST, Segments, TimeInterval, compare

__version__ = "0.1.0"
