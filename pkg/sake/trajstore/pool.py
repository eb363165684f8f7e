"""Trajectory pools and trajectory-level splitting."""

import json
import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

from sake.errors import ShapeError, SplitError
from sake.rng import derive_rng


def _normalize_meta(meta: Optional[dict[str, Any]]) -> dict[str, Any]:
    """Canonicalize meta through JSON so it survives a file round trip unchanged."""
    return json.loads(json.dumps(meta or {}, sort_keys=True))


@dataclass(frozen=True, eq=False)
class TrajectoryPool:
    """Multichannel spatiotemporal trajectories indexed [traj][time][channel][h][w].

    Values are stored as float32 so the on-disk format is lossless. The optional mask
    is an (H, W) boolean array of sites that were zeroed by observation masking.
    """

    data: np.ndarray
    meta: dict[str, Any] = field(default_factory=dict)
    mask: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        if data.ndim != 5:
            raise ShapeError(f"pool data must be 5-D [traj][time][channel][h][w], got {data.shape}")
        n_traj, T = data.shape[:2]
        if n_traj < 1 or T < 2:
            raise ShapeError(f"pool needs n_traj >= 1 and T >= 2, got n_traj={n_traj}, T={T}")
        if not np.all(np.isfinite(data)):
            raise ShapeError("pool data contains non-finite values")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "meta", _normalize_meta(self.meta))

        if self.mask is not None:
            mask = np.ascontiguousarray(self.mask, dtype=bool)
            if mask.shape != data.shape[3:]:
                raise ShapeError(f"mask shape {mask.shape} does not match spatial shape {data.shape[3:]}")
            mask.setflags(write=False)
            object.__setattr__(self, "mask", mask)

    @property
    def n_traj(self) -> int:
        return self.data.shape[0]

    @property
    def T(self) -> int:
        return self.data.shape[1]

    @property
    def C(self) -> int:
        return self.data.shape[2]

    @property
    def H(self) -> int:
        return self.data.shape[3]

    @property
    def W(self) -> int:
        return self.data.shape[4]

    @property
    def frame_shape(self) -> tuple[int, int, int]:
        return self.data.shape[2:]

    def subset(self, indices: Sequence[int]) -> "TrajectoryPool":
        """Return a pool holding the given trajectories, in the given order."""
        idx = np.asarray(indices, dtype=np.int64)
        return TrajectoryPool(data=self.data[idx], meta=self.meta, mask=self.mask)

    def with_data(
        self, data: np.ndarray, meta: Optional[dict[str, Any]] = None, mask: Optional[np.ndarray] = None
    ) -> "TrajectoryPool":
        """Return a new pool with replaced data; meta and mask default to this pool's."""
        return TrajectoryPool(
            data=data,
            meta=self.meta if meta is None else meta,
            mask=self.mask if mask is None else mask,
        )

    def equals(self, other: "TrajectoryPool") -> bool:
        """Bit-exact equality of data, mask and meta."""
        if self.data.shape != other.data.shape:
            return False
        if self.data.tobytes() != other.data.tobytes():
            return False
        if (self.mask is None) != (other.mask is None):
            return False
        if self.mask is not None and not np.array_equal(self.mask, other.mask):
            return False
        return self.meta == other.meta


@dataclass(frozen=True, eq=False)
class SplitPool:
    """Train/val/test partition of a pool at trajectory granularity."""

    train: Optional[TrajectoryPool]
    val: Optional[TrajectoryPool]
    test: Optional[TrajectoryPool]
    fractions: tuple[float, float, float]
    indices: dict[str, tuple[int, ...]]

    def part(self, name: str) -> TrajectoryPool:
        """Return the named split, raising if it is empty."""
        pool = getattr(self, name)
        if pool is None:
            raise SplitError(f"split {name!r} is empty")
        return pool


SPLIT_NAMES = ("train", "val", "test")


def split_sizes(n_traj: int, fractions: Sequence[float]) -> tuple[int, int, int]:
    """Floor-allocate val/test sizes; the remainder goes to train.

    A split with a nonzero fraction always receives at least one trajectory.
    """
    if len(fractions) != 3:
        raise SplitError(f"expected three fractions, got {len(fractions)}")
    if any(f < 0 for f in fractions):
        raise SplitError(f"fractions must be non-negative, got {tuple(fractions)}")
    if abs(math.fsum(fractions) - 1.0) > 1e-9:
        raise SplitError(f"fractions must sum to 1, got {tuple(fractions)}")
    nonzero = sum(1 for f in fractions if f > 0)
    if n_traj < nonzero:
        raise SplitError(f"{n_traj} trajectories cannot fill {nonzero} nonzero splits")

    sizes = [0, 0, 0]
    for i in (1, 2):
        if fractions[i] > 0:
            sizes[i] = max(1, math.floor(n_traj * fractions[i]))
    sizes[0] = n_traj - sizes[1] - sizes[2]
    if sizes[0] < 0 or (fractions[0] > 0 and sizes[0] < 1):
        raise SplitError(
            f"cannot allocate train trajectories: n_traj={n_traj}, fractions={tuple(fractions)}"
        )
    return sizes[0], sizes[1], sizes[2]


def split_pool(pool: TrajectoryPool, fractions: Sequence[float], seed: int) -> SplitPool:
    """Deterministic shuffled partition of trajectory indices.

    Membership depends only on (n_traj, fractions, seed).
    """
    sizes = split_sizes(pool.n_traj, fractions)
    order = derive_rng(seed, "split", pool.n_traj).permutation(pool.n_traj)

    parts: dict[str, Optional[TrajectoryPool]] = {}
    indices: dict[str, tuple[int, ...]] = {}
    start = 0
    for name, size in zip(SPLIT_NAMES, sizes):
        idx = sorted(int(i) for i in order[start : start + size])
        start += size
        indices[name] = tuple(idx)
        parts[name] = pool.subset(idx) if idx else None

    return SplitPool(
        train=parts["train"],
        val=parts["val"],
        test=parts["test"],
        fractions=(float(fractions[0]), float(fractions[1]), float(fractions[2])),
        indices=indices,
    )
