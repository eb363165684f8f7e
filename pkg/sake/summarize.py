"""Low-dimensional per-timestep state summaries for system-risk estimation."""

import hashlib
import json
import logging
import struct
from dataclasses import asdict, dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np
from sklearn.decomposition import PCA
from sklearn.random_projection import GaussianRandomProjection
from sklearn.utils.extmath import randomized_svd

from sake.errors import (
    BadMagicError,
    ConfigurationError,
    PoolFormatError,
    ShapeError,
    TruncatedPayloadError,
    UnsupportedVersionError,
)
from sake.rng import derive_rng, derive_seed
from sake.trajstore.perturb import block_average
from sake.trajstore.pool import TrajectoryPool

logger = logging.getLogger(__name__)

SCALE_FLOOR = 1e-8


class ProjectionMethod(str, Enum):
    """Representation families for state summaries."""

    PCA = "pca"
    SVD = "svd"
    RANDOM_PROJECTION = "random_projection"
    IDENTITY = "identity"


class PreprocessOrder(str, Enum):
    """Whether frames are coarsened before or after per-feature normalization."""

    COARSEN_FIRST = "coarsen_first"
    NORMALIZE_FIRST = "normalize_first"


@dataclass(frozen=True)
class ProjectorSpec:
    """How to build a Projector."""

    method: str = ProjectionMethod.PCA.value
    variance_target: float = 0.99
    max_components: int = 64
    fit_samples: int = 800
    coarsen_factor: int = 1
    order: str = PreprocessOrder.COARSEN_FIRST.value
    seed: int = 0

    def __post_init__(self) -> None:
        try:
            ProjectionMethod(self.method)
        except ValueError:
            valid = [m.value for m in ProjectionMethod]
            raise ConfigurationError(f"invalid projection method {self.method!r}; expected one of {valid}")
        try:
            PreprocessOrder(self.order)
        except ValueError:
            valid = [o.value for o in PreprocessOrder]
            raise ConfigurationError(f"invalid preprocessing order {self.order!r}; expected one of {valid}")
        if self.max_components < 1:
            raise ConfigurationError(f"max_components must be >= 1, got {self.max_components}")
        if self.fit_samples < self.max_components:
            raise ConfigurationError(
                f"fit_samples ({self.fit_samples}) must be >= max_components ({self.max_components})"
            )
        if not 0.0 < self.variance_target <= 1.0:
            raise ConfigurationError(f"variance_target must lie in (0, 1], got {self.variance_target}")
        if self.coarsen_factor < 1:
            raise ConfigurationError(f"coarsen_factor must be >= 1, got {self.coarsen_factor}")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def digest(self) -> str:
        """Stable short hash used as SummarySet provenance."""
        text = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class Projector:
    """Fitted affine map from frames to k-dimensional summaries."""

    spec: ProjectorSpec
    frame_shape: tuple[int, int, int]
    mean: np.ndarray
    scale: np.ndarray
    basis: np.ndarray
    explained: Optional[float] = None
    degenerate: bool = False

    @property
    def k(self) -> int:
        return self.basis.shape[0]

    @property
    def d(self) -> int:
        """Dimension of the vector the basis acts on."""
        return self.basis.shape[1]

    @property
    def input_dim(self) -> int:
        C, H, W = self.frame_shape
        return C * H * W


@dataclass(frozen=True, eq=False)
class SummarySet:
    """Per-trajectory summary sequences, shape (n_traj, T, k)."""

    values: np.ndarray
    provenance: str

    @property
    def n_traj(self) -> int:
        return self.values.shape[0]

    @property
    def T(self) -> int:
        return self.values.shape[1]

    @property
    def k(self) -> int:
        return self.values.shape[2]

    def subset(self, indices) -> "SummarySet":
        rows = np.asarray(indices, dtype=np.int64)
        return SummarySet(values=self.values[rows], provenance=self.provenance)


# ============================================================================
# Preprocessing
# ============================================================================


def _coarsen(frames: np.ndarray, factor: int) -> np.ndarray:
    """Block-average (N, C, H, W) frames and flatten to (N, d)."""
    coarse = block_average(frames, factor)
    return coarse.reshape(coarse.shape[0], -1)


def _features(frames: np.ndarray, mean: np.ndarray, scale: np.ndarray, spec: ProjectorSpec) -> np.ndarray:
    """Normalized feature rows for (N, C, H, W) frames."""
    if spec.order == PreprocessOrder.COARSEN_FIRST.value:
        return (_coarsen(frames, spec.coarsen_factor) - mean) / scale
    n = frames.shape[0]
    normalized = (frames.reshape(n, -1) - mean) / scale
    return _coarsen(normalized.reshape(frames.shape), spec.coarsen_factor)


def _frames(pool: TrajectoryPool) -> np.ndarray:
    return pool.data.reshape(pool.n_traj * pool.T, *pool.frame_shape).astype(np.float64)


# ============================================================================
# Fit / project
# ============================================================================


def _retained(cumulative: np.ndarray, target: float) -> int:
    """Smallest k whose cumulative explained fraction reaches the target."""
    hits = np.nonzero(cumulative >= target - 1e-12)[0]
    return int(hits[0]) + 1 if hits.size else int(cumulative.size)


def fit_projector(pool: TrajectoryPool, spec: ProjectorSpec) -> Projector:
    """Fit a projector on a seeded uniform sample of the pool's frames."""
    C, H, W = pool.frame_shape
    if spec.coarsen_factor > 1 and (H % spec.coarsen_factor or W % spec.coarsen_factor):
        raise ShapeError(f"coarsen_factor {spec.coarsen_factor} does not divide spatial shape ({H}, {W})")

    frames = _frames(pool)
    n_frames = frames.shape[0]
    n_samples = min(spec.fit_samples, n_frames)
    rng = derive_rng(spec.seed, "projector-sample", n_frames)
    sample = frames[np.sort(rng.choice(n_frames, size=n_samples, replace=False))]

    if spec.order == PreprocessOrder.COARSEN_FIRST.value:
        raw = _coarsen(sample, spec.coarsen_factor)
    else:
        raw = sample.reshape(n_samples, -1)
    mean = raw.mean(axis=0)
    std = raw.std(axis=0)
    scale = np.maximum(std, SCALE_FLOOR)
    Z = _features(sample, mean, scale, spec)
    d = Z.shape[1]
    if d < 1:
        raise ShapeError("feature dimension after coarsening is zero")

    centered = Z - Z.mean(axis=0)
    total = float(np.sum(centered**2))
    if total <= 0.0:
        logger.warning("zero-variance pool: projector collapsed to one component")
        basis = np.zeros((1, d))
        basis[0, 0] = 1.0
        return Projector(spec, (C, H, W), mean, scale, basis, explained=0.0, degenerate=True)

    method = ProjectionMethod(spec.method)
    random_state = derive_seed(spec.seed, "projector-basis") % (2**32)

    if method is ProjectionMethod.IDENTITY:
        return Projector(spec, (C, H, W), mean, scale, np.eye(d))

    if method is ProjectionMethod.RANDOM_PROJECTION:
        k = min(spec.max_components, d)
        rp = GaussianRandomProjection(n_components=k, random_state=random_state).fit(Z)
        return Projector(spec, (C, H, W), mean, scale, np.asarray(rp.components_, dtype=np.float64))

    n_comp = min(spec.max_components, n_samples, d)
    if method is ProjectionMethod.PCA:
        pca = PCA(n_components=n_comp, svd_solver="randomized", random_state=random_state).fit(Z)
        cumulative = np.cumsum(pca.explained_variance_ratio_)
        components = pca.components_
    else:
        _, singular, vt = randomized_svd(centered, n_components=n_comp, random_state=random_state)
        cumulative = np.cumsum(singular**2) / total
        components = vt

    k = _retained(cumulative, spec.variance_target)
    logger.debug("%s projector keeps k=%d of d=%d (explained %.4f)", method.value, k, d, cumulative[k - 1])
    return Projector(
        spec,
        (C, H, W),
        mean,
        scale,
        np.ascontiguousarray(components[:k], dtype=np.float64),
        explained=float(cumulative[k - 1]),
    )


def project(projector: Projector, pool: TrajectoryPool) -> SummarySet:
    """summary[t] = basis . normalize(coarsen(frame_t))."""
    if pool.frame_shape != projector.frame_shape:
        C, H, W = pool.frame_shape
        raise ShapeError(
            f"pool feature dimension {C * H * W} {pool.frame_shape} does not match "
            f"projector dimension {projector.input_dim} {projector.frame_shape}"
        )
    Z = _features(_frames(pool), projector.mean, projector.scale, projector.spec)
    values = (Z @ projector.basis.T).reshape(pool.n_traj, pool.T, projector.k)
    return SummarySet(values=values, provenance=projector.spec.digest())


def reconstruct(projector: Projector, summaries: np.ndarray) -> np.ndarray:
    """Map summaries back to (coarsened) feature space via the transposed basis."""
    Z = summaries @ projector.basis
    if projector.spec.order == PreprocessOrder.COARSEN_FIRST.value:
        return Z * projector.scale + projector.mean
    return Z


# ============================================================================
# Persistence
# ============================================================================

PROJECTOR_MAGIC = b"SKPJ"
PROJECTOR_VERSION = 1
_PJ_HEADER = struct.Struct("<4sBxxxI")
_U32 = struct.Struct("<I")
_F64 = np.dtype("<f8")


def encode_projector(projector: Projector) -> bytes:
    """Serialize a projector as a length-prefixed little-endian record."""
    header = {
        "spec": projector.spec.to_dict(),
        "frame_shape": list(projector.frame_shape),
        "k": projector.k,
        "d": projector.d,
        "n_norm": int(projector.mean.size),
        "explained": projector.explained,
        "degenerate": projector.degenerate,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    body = b"".join(
        [
            _U32.pack(len(blob)),
            blob,
            projector.mean.astype(_F64).tobytes(),
            projector.scale.astype(_F64).tobytes(),
            projector.basis.astype(_F64).tobytes(order="C"),
        ]
    )
    return _PJ_HEADER.pack(PROJECTOR_MAGIC, PROJECTOR_VERSION, len(body)) + body


def decode_projector(buf: bytes) -> Projector:
    """Parse bytes produced by encode_projector."""
    if buf[:4] != PROJECTOR_MAGIC:
        raise BadMagicError(f"bad magic: expected {PROJECTOR_MAGIC!r}, got {bytes(buf[:4])!r}")
    if len(buf) < _PJ_HEADER.size:
        raise TruncatedPayloadError("truncated projector header")
    _, version, length = _PJ_HEADER.unpack(buf[: _PJ_HEADER.size])
    if version != PROJECTOR_VERSION:
        raise UnsupportedVersionError(f"unsupported projector version {version}")
    body = buf[_PJ_HEADER.size :]
    if len(body) != length:
        raise TruncatedPayloadError(f"projector record promises {length} bytes, found {len(body)}")

    (blob_len,) = _U32.unpack(body[:4])
    header = json.loads(body[4 : 4 + blob_len].decode("utf-8"))
    arrays = np.frombuffer(body[4 + blob_len :], dtype=_F64)
    n, k, d = header["n_norm"], header["k"], header["d"]
    if arrays.size != 2 * n + k * d:
        raise PoolFormatError(f"projector arrays hold {arrays.size} values, expected {2 * n + k * d}")
    return Projector(
        spec=ProjectorSpec(**header["spec"]),
        frame_shape=tuple(header["frame_shape"]),
        mean=arrays[:n].copy(),
        scale=arrays[n : 2 * n].copy(),
        basis=arrays[2 * n :].reshape(k, d).copy(),
        explained=header["explained"],
        degenerate=header["degenerate"],
    )


def write_projector(projector: Projector, path: Union[str, Path]) -> Path:
    filepath = Path(path)
    filepath.parent.mkdir(parents=True, exist_ok=True)
    filepath.write_bytes(encode_projector(projector))
    return filepath


def read_projector(path: Union[str, Path]) -> Projector:
    return decode_projector(Path(path).read_bytes())
