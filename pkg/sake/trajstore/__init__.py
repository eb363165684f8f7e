"""Trajectory data: pools, synthetic generators, perturbations and file format."""

from sake.trajstore.fileformat import decode_pool, encode_pool, read_pool, write_pool
from sake.trajstore.generators import generate, generate_diffusion2d, generate_linear_lag_system
from sake.trajstore.perturb import PerturbKind, PerturbSpec, block_average, perturb
from sake.trajstore.pool import SplitPool, TrajectoryPool, split_pool, split_sizes

__all__ = [
    # Pools
    "TrajectoryPool",
    "SplitPool",
    "split_pool",
    "split_sizes",
    # Generators
    "generate",
    "generate_linear_lag_system",
    "generate_diffusion2d",
    # Perturbations
    "PerturbKind",
    "PerturbSpec",
    "block_average",
    "perturb",
    # File format
    "encode_pool",
    "decode_pool",
    "read_pool",
    "write_pool",
]
