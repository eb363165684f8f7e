"""Observation perturbations applied to anchor-extraction pools."""

from dataclasses import asdict, dataclass
from enum import Enum
from typing import Any

import numpy as np

from sake.errors import ConfigurationError, ShapeError
from sake.rng import derive_rng
from sake.trajstore.pool import TrajectoryPool


class PerturbKind(str, Enum):
    """Perturbation kinds."""

    IDENTITY = "identity"
    GAUSSIAN_NOISE = "gaussian_noise"
    DOWNSAMPLE = "downsample"
    RANDOM_MASK = "random_mask"
    SPARSE_PROBE = "sparse_probe"


ALLOWED_FACTORS = (1, 2, 4)


@dataclass(frozen=True)
class PerturbSpec:
    """One perturbation condition."""

    kind: str = PerturbKind.IDENTITY.value
    sigma: float = 0.0
    factor: int = 1
    mask_fraction: float = 0.0
    probes: int = 16
    seed: int = 0

    def __post_init__(self) -> None:
        try:
            PerturbKind(self.kind)
        except ValueError:
            valid = [k.value for k in PerturbKind]
            raise ConfigurationError(f"invalid perturbation kind {self.kind!r}; expected one of {valid}")
        if self.sigma < 0:
            raise ConfigurationError(f"sigma must be >= 0, got {self.sigma}")
        if self.factor not in ALLOWED_FACTORS:
            raise ConfigurationError(
                f"downsample factor must be one of {ALLOWED_FACTORS}, got {self.factor}"
            )
        if not 0.0 <= self.mask_fraction < 1.0:
            raise ConfigurationError(f"mask_fraction must lie in [0, 1), got {self.mask_fraction}")
        if self.probes < 1:
            raise ConfigurationError(f"probes must be >= 1, got {self.probes}")

    @property
    def label(self) -> str:
        """Short human-readable label used as a report key."""
        kind = PerturbKind(self.kind)
        if kind is PerturbKind.GAUSSIAN_NOISE:
            return f"noise{self.sigma:g}"
        if kind is PerturbKind.DOWNSAMPLE:
            return f"down{self.factor}"
        if kind is PerturbKind.RANDOM_MASK:
            return f"mask{self.mask_fraction:g}"
        if kind is PerturbKind.SPARSE_PROBE:
            return f"probe{self.probes}"
        return "clean"

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def block_average(data: np.ndarray, factor: int) -> np.ndarray:
    """Average factor x factor spatial patches of [..., H, W] data."""
    if factor == 1:
        return data
    *lead, H, W = data.shape
    if H % factor or W % factor:
        raise ShapeError(f"downsample factor {factor} does not divide spatial shape ({H}, {W})")
    blocks = data.reshape(*lead, H // factor, factor, W // factor, factor)
    return blocks.mean(axis=(-3, -1))


def probe_indices(size: int, probes: int) -> np.ndarray:
    """Evenly strided probe positions along one spatial axis."""
    if probes >= size:
        return np.arange(size)
    return np.round(np.linspace(0, size - 1, probes)).astype(np.int64)


def _history(pool: TrajectoryPool, spec: PerturbSpec) -> dict[str, Any]:
    meta = dict(pool.meta)
    meta["perturbations"] = [*pool.meta.get("perturbations", []), spec.to_dict()]
    return meta


def perturb(pool: TrajectoryPool, spec: PerturbSpec) -> TrajectoryPool:
    """Apply one observation perturbation and return a new pool."""
    kind = PerturbKind(spec.kind)
    meta = _history(pool, spec)

    if kind is PerturbKind.IDENTITY:
        return pool.with_data(pool.data.copy())

    if kind is PerturbKind.GAUSSIAN_NOISE:
        if spec.sigma == 0:
            return pool.with_data(pool.data.copy())
        rng = derive_rng(spec.seed, "gaussian_noise")
        noise = rng.normal(0.0, spec.sigma, size=pool.data.shape)
        return pool.with_data(pool.data.astype(np.float64) + noise, meta=meta)

    if kind is PerturbKind.DOWNSAMPLE:
        data = block_average(pool.data.astype(np.float64), spec.factor)
        mask = None
        if pool.mask is not None:
            # a coarse site stays masked only if its whole block was masked
            mask = block_average(pool.mask.astype(np.float64), spec.factor) == 1.0
        return TrajectoryPool(data=data, meta=meta, mask=mask)

    if kind is PerturbKind.RANDOM_MASK:
        sites = pool.H * pool.W
        n_masked = int(round(spec.mask_fraction * sites))
        rng = derive_rng(spec.seed, "random_mask", pool.H, pool.W)
        flat = np.zeros(sites, dtype=bool)
        flat[rng.permutation(sites)[:n_masked]] = True
        mask = flat.reshape(pool.H, pool.W)
        if pool.mask is not None:
            mask = mask | pool.mask
        data = pool.data.copy()
        data[..., mask] = 0.0
        return TrajectoryPool(data=data, meta=meta, mask=mask)

    rows = probe_indices(pool.H, spec.probes)
    cols = probe_indices(pool.W, spec.probes)
    data = pool.data[..., rows[:, None], cols[None, :]]
    mask = pool.mask[rows[:, None], cols[None, :]] if pool.mask is not None else None
    return TrajectoryPool(data=data, meta=meta, mask=mask)
