"""Full-sweep oracle, knee location and selection-quality metrics."""

import logging
from collections.abc import Iterable, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Optional

import numpy as np
import pandas as pd

from sake.anchors import AnchorReport
from sake.errors import ConfigurationError, SakeError, SweepError
from sake.pilots import FullProtocol, PilotEvaluator
from sake.selector import SelectionResult
from sake.sysrisk import CandidateGrid

logger = logging.getLogger(__name__)


# ============================================================================
# Oracle
# ============================================================================


def best_window(M: Mapping[int, float]) -> int:
    """Smallest minimizer of M."""
    lowest = min(M.values())
    return min(L for L, value in M.items() if value == lowest)


def oracle_knee(M: Mapping[int, float], eps: float) -> int:
    """Smallest window within a (1 + eps) factor of the best error."""
    if eps < 0:
        raise ConfigurationError(f"knee tolerance must be >= 0, got {eps}")
    threshold = (1.0 + eps) * M[best_window(M)]
    return min(L for L, value in M.items() if value <= threshold)


@dataclass(frozen=True)
class OracleReference:
    """Full-protocol rollout error per window, per seed and averaged over seeds."""

    grid: CandidateGrid
    per_seed: dict[int, dict[int, float]]
    seeds: tuple[int, ...]
    M: dict[int, float] = field(init=False)

    def __post_init__(self) -> None:
        if not self.seeds:
            raise ConfigurationError("oracle needs at least one seed")
        M = {}
        for L in self.grid:
            values = [self.per_seed[s][L] for s in self.seeds]
            if not all(np.isfinite(values)) or min(values) < 0:
                raise SweepError(f"oracle error at L={L} is not finite and non-negative")
            M[L] = float(np.mean(values))
        object.__setattr__(self, "M", M)

    @property
    def L_best(self) -> int:
        return best_window(self.M)

    def knee(self, eps: float) -> int:
        return oracle_knee(self.M, eps)

    def to_dict(self) -> dict[str, Any]:
        return {
            "grid": list(self.grid),
            "seeds": list(self.seeds),
            "per_seed": {
                str(s): {str(L): v for L, v in curve.items()} for s, curve in self.per_seed.items()
            },
            "M": {str(L): v for L, v in self.M.items()},
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "OracleReference":
        return cls(
            grid=CandidateGrid(tuple(data["grid"])),
            per_seed={
                int(s): {int(L): v for L, v in curve.items()} for s, curve in data["per_seed"].items()
            },
            seeds=tuple(data["seeds"]),
        )


def full_sweep(
    evaluator: PilotEvaluator,
    grid: CandidateGrid,
    full: FullProtocol,
    seeds: Sequence[int],
    workers: int = 1,
) -> OracleReference:
    """Train every window at the full budget for every seed."""

    def run(L: int, seed: int) -> float:
        try:
            return evaluator.evaluate(L, full.as_budget(L), "full", seed).diagnostics.m
        except SakeError as exc:
            raise SweepError(f"full training failed at L={L}, seed={seed}: {exc}") from exc

    tasks = [(seed, L) for seed in seeds for L in grid]
    if workers <= 1:
        values = [run(L, seed) for seed, L in tasks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            values = list(pool.map(lambda task: run(task[1], task[0]), tasks))

    per_seed: dict[int, dict[int, float]] = {seed: {} for seed in seeds}
    for (seed, L), value in zip(tasks, values):
        per_seed[seed][L] = value
    oracle = OracleReference(grid=grid, per_seed=per_seed, seeds=tuple(seeds))
    logger.info("full sweep: %d trainings, L_best=%d", len(tasks), oracle.L_best)
    return oracle


# ============================================================================
# Per-selection metrics
# ============================================================================


def regret(M: Mapping[int, float], L_sel: int, L_ref: int) -> Optional[float]:
    """(M(L_sel) - M(L_ref)) / M(L_ref); None when undefined."""
    reference = M[L_ref]
    if reference == 0:
        return 0.0 if M[L_sel] == 0 else None
    return (M[L_sel] - reference) / reference


@dataclass(frozen=True)
class MetricsRow:
    L_sel: int
    L_knee: int
    L_best: int
    eps: float
    exact: int
    within1: int
    abs_dL: int
    regret_knee: Optional[float]
    regret_best: Optional[float]
    cost_ratio: float
    saving: float
    unique_evals: int
    knee_in_band: Optional[bool] = None
    knee_in_S0: Optional[bool] = None
    knee_in_S1: Optional[bool] = None

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def evaluate_selection(
    result: SelectionResult,
    oracle: OracleReference,
    eps: float,
    anchor_report: Optional[AnchorReport] = None,
) -> MetricsRow:
    """Compare one selection to the oracle knee and best window."""
    if result.L_sel not in oracle.grid:
        raise ConfigurationError(f"selected window {result.L_sel} is not on the oracle grid")
    L_knee = oracle.knee(eps)
    L_best = oracle.L_best
    abs_dL = abs(result.L_sel - L_knee)
    cost_ratio = result.cost / len(oracle.grid)

    band = anchor_report.band if anchor_report is not None else None
    return MetricsRow(
        L_sel=result.L_sel,
        L_knee=L_knee,
        L_best=L_best,
        eps=eps,
        exact=int(abs_dL == 0),
        within1=int(abs_dL <= 1),
        abs_dL=abs_dL,
        regret_knee=regret(oracle.M, result.L_sel, L_knee),
        regret_best=regret(oracle.M, result.L_sel, L_best),
        cost_ratio=cost_ratio,
        saving=1.0 - cost_ratio,
        unique_evals=result.unique_evals,
        knee_in_band=(L_knee in band) if band is not None else None,
        knee_in_S0=(L_knee in result.S0) if result.S0 else None,
        knee_in_S1=(L_knee in result.S1) if result.S1 else None,
    )


PERCENT_COLUMNS = ("exact", "within1", "knee_in_band", "knee_in_S0", "knee_in_S1")
DEFAULT_KEYS = ("system", "method")
METRIC_COLUMNS = (
    "L_sel",
    "exact",
    "within1",
    "abs_dL",
    "regret_knee",
    "regret_best",
    "cost_ratio",
    "saving",
    "unique_evals",
    "knee_in_band",
    "knee_in_S0",
    "knee_in_S1",
)


def _as_float(value: Any) -> float:
    return np.nan if value is None else float(value)


def aggregate(rows: Iterable[Mapping[str, Any]], keys: Sequence[str] = DEFAULT_KEYS) -> pd.DataFrame:
    """Mean of every numeric metric per group; rates are reported as percentages.

    Regrets are averaged with their sign; undefined regrets are skipped.
    """
    frame = pd.DataFrame(list(rows))
    if frame.empty:
        raise ConfigurationError("cannot aggregate an empty row set")
    keys = [k for k in keys if k in frame.columns]
    if not keys:
        raise ConfigurationError("aggregate rows carry none of the grouping keys")
    metrics = [c for c in METRIC_COLUMNS if c in frame.columns]
    numeric = frame[keys].copy()
    for column in metrics:
        numeric[column] = frame[column].map(_as_float)

    grouped = numeric.groupby(keys, sort=True, dropna=False)
    summary = grouped[metrics].mean()
    summary.insert(0, "n", grouped.size())
    for column in PERCENT_COLUMNS:
        if column in summary.columns:
            summary[column] = summary[column] * 100.0
    return summary.reset_index()
