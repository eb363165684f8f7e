"""Backbone-independent system risk: ridge VAR(L) validation error per window."""

import logging
from collections.abc import Iterable
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
import pandas as pd
from sklearn.linear_model import Ridge

from sake.errors import ConfigurationError, FitError, ShapeError
from sake.rng import derive_rng
from sake.summarize import SummarySet

logger = logging.getLogger(__name__)

DEFAULT_RIDGE = 1e-3


# ============================================================================
# Types
# ============================================================================


@dataclass(frozen=True)
class CandidateGrid:
    """Strictly increasing candidate window lengths."""

    windows: tuple[int, ...]

    def __post_init__(self) -> None:
        windows = tuple(int(w) for w in self.windows)
        if not windows:
            raise ConfigurationError("candidate grid is empty")
        if windows[0] < 1:
            raise ConfigurationError(f"windows must be >= 1, got {windows[0]}")
        if any(b <= a for a, b in zip(windows, windows[1:])):
            raise ConfigurationError(f"candidate grid must be strictly increasing: {windows}")
        object.__setattr__(self, "windows", windows)

    @classmethod
    def span(cls, lo: int, hi: int) -> "CandidateGrid":
        return cls(tuple(range(lo, hi + 1)))

    @classmethod
    def parse(cls, text: str) -> "CandidateGrid":
        """Parse "1..16" or "1,2,4,8"."""
        text = text.strip()
        try:
            if ".." in text:
                lo, hi = text.split("..", 1)
                return cls.span(int(lo), int(hi))
            return cls(tuple(int(part) for part in text.split(",") if part.strip()))
        except ValueError as exc:
            raise ConfigurationError(f"cannot parse candidate grid {text!r}") from exc

    @property
    def L_min(self) -> int:
        return self.windows[0]

    @property
    def L_max(self) -> int:
        return self.windows[-1]

    def __len__(self) -> int:
        return len(self.windows)

    def __iter__(self):
        return iter(self.windows)

    def __contains__(self, L: object) -> bool:
        return L in self.windows

    def position(self, L: int) -> int:
        """Index of L on the ordered grid."""
        try:
            return self.windows.index(L)
        except ValueError:
            raise ConfigurationError(f"window {L} is not on the grid {self.windows}")

    def successor(self, L: int) -> Optional[int]:
        i = self.position(L)
        return self.windows[i + 1] if i + 1 < len(self.windows) else None

    def nearest(self, value: float) -> int:
        """Grid member nearest to value; ties go to the larger member."""
        return min(self.windows, key=lambda w: (abs(w - value), -w))

    def label(self) -> str:
        if self.windows == tuple(range(self.L_min, self.L_max + 1)):
            return f"{self.L_min}..{self.L_max}"
        return ",".join(str(w) for w in self.windows)


@dataclass(frozen=True)
class BootstrapSpec:
    """Bootstrap settings for one-sided upper confidence bounds."""

    resamples: int = 300
    level: float = 0.95
    seed: int = 0

    def __post_init__(self) -> None:
        if self.resamples < 2:
            raise ConfigurationError(f"bootstrap resamples must be >= 2, got {self.resamples}")
        if not 0.5 < self.level < 1.0:
            raise ConfigurationError(f"bootstrap level must lie in (0.5, 1), got {self.level}")


@dataclass(frozen=True, eq=False)
class RiskCurve:
    """Point-estimate and bootstrap validation risks over a candidate grid.

    replicates has shape (len(grid), B); row i belongs to grid.windows[i]. All rows
    were computed from the same resample_indices, so differences across windows are
    paired.
    """

    grid: CandidateGrid
    risk: np.ndarray
    replicates: np.ndarray
    ridge: float
    level: float = 0.95
    resample_indices: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        risk = np.asarray(self.risk, dtype=np.float64)
        reps = np.asarray(self.replicates, dtype=np.float64)
        if risk.shape != (len(self.grid),):
            raise ShapeError(f"risk has shape {risk.shape}, expected ({len(self.grid)},)")
        if reps.ndim != 2 or reps.shape[0] != len(self.grid):
            raise ShapeError(f"replicates have shape {reps.shape}, expected ({len(self.grid)}, B)")
        if not (np.all(np.isfinite(risk)) and np.all(np.isfinite(reps))):
            raise ShapeError("risk curve contains non-finite values")
        if np.any(risk < 0) or np.any(reps < 0):
            raise ShapeError("risk curve contains negative values")
        object.__setattr__(self, "risk", risk)
        object.__setattr__(self, "replicates", reps)

    @property
    def B(self) -> int:
        return self.replicates.shape[1]

    def at(self, L: int) -> float:
        return float(self.risk[self.grid.position(L)])

    def replicates_at(self, L: int) -> np.ndarray:
        return self.replicates[self.grid.position(L)]

    def ucb_at(self, L: int) -> float:
        return ucb(self.replicates_at(L), self.level)


# ============================================================================
# Ridge VAR fits
# ============================================================================


def lagged_design(values: np.ndarray, L: int, first_target: int) -> tuple[np.ndarray, np.ndarray]:
    """Stack windows of L frames (oldest first) and their next-frame targets.

    values has shape (n_traj, T, k). Targets are frames first_target..T-1 of every
    trajectory; rows are ordered trajectory-major.
    """
    n, T, k = values.shape
    if first_target < L:
        raise ShapeError(f"first target {first_target} leaves fewer than L={L} context frames")
    targets = np.arange(first_target, T)
    if targets.size == 0:
        return np.empty((0, L * k)), np.empty((0, k))
    X = np.concatenate([values[:, targets - L + j] for j in range(L)], axis=2)
    Y = values[:, targets]
    return X.reshape(-1, L * k), Y.reshape(-1, k)


@dataclass(frozen=True, eq=False)
class RidgeFit:
    """Ridge regression Y ~ X @ coef.T + intercept with an unpenalized intercept."""

    coef: np.ndarray
    intercept: np.ndarray

    def predict(self, X: np.ndarray) -> np.ndarray:
        return X @ self.coef.T + self.intercept


def fit_ridge(X: np.ndarray, Y: np.ndarray, ridge: float) -> RidgeFit:
    """Ridge regression on centered data; the intercept is recovered from the means."""
    if X.shape[0] < 1:
        raise FitError("degenerate design: no training positions")
    x_mean = X.mean(axis=0)
    y_mean = Y.mean(axis=0)
    Xc = X - x_mean
    Yc = Y - y_mean
    model = Ridge(alpha=ridge, fit_intercept=False, solver="cholesky").fit(Xc, Yc)
    coef = np.atleast_2d(model.coef_)
    return RidgeFit(coef=coef, intercept=y_mean - coef @ x_mean)


def _check_lengths(summaries: SummarySet, L: int, what: str) -> None:
    if summaries.T <= L:
        raise FitError(f"{what} trajectories have T={summaries.T}, need more than L={L}")


def fit_var_risk(
    train: SummarySet,
    val: SummarySet,
    L: int,
    ridge: float = DEFAULT_RIDGE,
    first_target: Optional[int] = None,
) -> float:
    """Mean squared one-step residual norm of a ridge VAR(L) on validation positions.

    first_target aligns target positions across windows; it defaults to L.
    """
    if ridge <= 0:
        raise ConfigurationError(f"ridge must be > 0, got {ridge}")
    _check_lengths(train, L, "train")
    _check_lengths(val, L, "val")
    start = L if first_target is None else first_target
    fit = fit_ridge(*lagged_design(train.values, L, start), ridge)
    X_val, Y_val = lagged_design(val.values, L, start)
    if X_val.shape[0] == 0:
        raise FitError(f"no validation positions for L={L}")
    residual = Y_val - fit.predict(X_val)
    return float(np.mean(np.sum(residual**2, axis=1)))


def _per_trajectory_sse(
    fit: RidgeFit, values: np.ndarray, L: int, first_target: int
) -> tuple[np.ndarray, int]:
    """Per-trajectory sum of squared residual norms and positions per trajectory."""
    X, Y = lagged_design(values, L, first_target)
    residual = Y - fit.predict(X)
    per_position = np.sum(residual**2, axis=1)
    positions = values.shape[1] - first_target
    return per_position.reshape(values.shape[0], positions).sum(axis=1), positions


def bootstrap_indices(n_val: int, boot: BootstrapSpec) -> np.ndarray:
    """(B, n_val) trajectory resample indices, shared across every window."""
    rng = derive_rng(boot.seed, "risk-bootstrap", n_val)
    return rng.integers(0, n_val, size=(boot.resamples, n_val))


def risk_curve(
    train: SummarySet,
    val: SummarySet,
    grid: CandidateGrid,
    ridge: float = DEFAULT_RIDGE,
    boot: Optional[BootstrapSpec] = None,
) -> RiskCurve:
    """Fit ridge VAR(L) once per window and bootstrap validation trajectories.

    Targets are aligned across windows (target frames L_max..T-1) so every window is
    scored on the same positions.
    """
    boot = boot or BootstrapSpec()
    if ridge <= 0:
        raise ConfigurationError(f"ridge must be > 0, got {ridge}")
    for what, s in (("train", train), ("val", val)):
        if s.T <= grid.L_max:
            raise FitError(f"{what} trajectories have T={s.T}, need more than L_max={grid.L_max}")

    first_target = grid.L_max
    indices = bootstrap_indices(val.n_traj, boot)
    risk = np.empty(len(grid))
    replicates = np.empty((len(grid), boot.resamples))

    for i, L in enumerate(grid):
        try:
            fit = fit_ridge(*lagged_design(train.values, L, first_target), ridge)
            sse, positions = _per_trajectory_sse(fit, val.values, L, first_target)
        except (FitError, np.linalg.LinAlgError) as exc:
            raise FitError(f"risk fit failed at L={L}: {exc}") from exc
        risk[i] = sse.sum() / (val.n_traj * positions)
        replicates[i] = sse[indices].sum(axis=1) / (val.n_traj * positions)
        logger.debug("R_sys(%d) = %.6g", L, risk[i])

    return RiskCurve(
        grid=grid,
        risk=risk,
        replicates=replicates,
        ridge=ridge,
        level=boot.level,
        resample_indices=indices,
    )


def ucb(values: Iterable[float], level: float) -> float:
    """One-sided upper bound: the empirical quantile with higher interpolation."""
    arr = np.asarray(values if isinstance(values, np.ndarray) else list(values), dtype=np.float64)
    if arr.size == 0:
        raise ConfigurationError("ucb of an empty replicate list")
    return float(np.quantile(arr, level, method="higher"))


def export_curve_csv(curve: RiskCurve, path: Union[str, Path]) -> Path:
    """Write L, risk, ucb and every replicate column."""
    filepath = Path(path)
    filepath.parent.mkdir(parents=True, exist_ok=True)
    table = pd.DataFrame(curve.replicates, columns=[f"replicate_{b}" for b in range(curve.B)])
    table.insert(0, "L", list(curve.grid))
    table.insert(1, "risk", curve.risk)
    table.insert(2, "ucb", [curve.ucb_at(L) for L in curve.grid])
    table.to_csv(filepath, index=False)
    return filepath
