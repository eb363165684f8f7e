"""Alternative selectors: System-core, uniform Direct-k shortlists and ASHA-style halving."""

import logging
import math
from dataclasses import asdict, dataclass, replace
from fractions import Fraction
from typing import Any

from sake.anchors import AnchorReport
from sake.errors import ConfigurationError
from sake.pilots import LedgerEntry, PilotBudget, PilotEvaluator, StageBudgets, evaluate_many
from sake.selector import Method, SelectionResult, SelectorSpec, direct_spec, run_shortlist
from sake.sysrisk import CandidateGrid

logger = logging.getLogger(__name__)


def run_system_core(anchor_report: AnchorReport) -> SelectionResult:
    """Return L_core directly; no pilots are trained."""
    return SelectionResult(
        method=Method.SYSTEM_CORE.value,
        L_sel=anchor_report.L_core,
        S0=anchor_report.S0,
    )


# ============================================================================
# Direct-k shortlists
# ============================================================================


def _round_half_up(value: Fraction) -> int:
    return math.floor(value + Fraction(1, 2))


def direct_shortlist(grid: CandidateGrid, k: int) -> tuple[int, ...]:
    """Uniformly spaced shortlist of k members including both grid ends."""
    if k not in (3, 4):
        raise ConfigurationError(f"direct shortlist size must be 3 or 4, got {k}")
    if len(grid) < k:
        raise ConfigurationError(f"grid {grid.label()} has fewer than {k} members")
    width = grid.L_max - grid.L_min
    points = [Fraction(i, k - 1) for i in range(1, k - 1)]
    inner = {grid.nearest(_round_half_up(grid.L_min + p * width)) for p in points}
    return tuple(sorted({grid.L_min, *inner, grid.L_max}))


def run_direct_shortlist(
    k: int,
    evaluator: PilotEvaluator,
    grid: CandidateGrid,
    budgets: StageBudgets,
    selector_spec: SelectorSpec,
    seed: int,
    workers: int = 1,
) -> SelectionResult:
    """Same pilot pipeline as SAKE, started from a uniform shortlist."""
    method = Method.DIRECT3 if k == 3 else Method.DIRECT4
    return run_shortlist(
        method.value,
        evaluator,
        grid,
        direct_shortlist(grid, k),
        budgets,
        direct_spec(selector_spec),
        seed,
        workers,
    )


# ============================================================================
# ASHA-style successive halving
# ============================================================================


@dataclass(frozen=True)
class AshaSpec:
    rungs: int = 2
    reduction: int = 4

    def __post_init__(self) -> None:
        if self.rungs < 1:
            raise ConfigurationError(f"asha rungs must be >= 1, got {self.rungs}")
        if self.reduction < 2:
            raise ConfigurationError(f"asha reduction must be >= 2, got {self.reduction}")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def rung_budget(base: PilotBudget, budgets: StageBudgets, factor: int) -> PilotBudget:
    """Scale epochs, pairs and training trajectories by factor, capped by the full protocol."""
    full = budgets.full
    train_trajs = base.train_trajs * factor
    if full.bound:
        train_trajs = min(train_trajs, full.train_trajs)
    return replace(
        base,
        epochs=min(base.epochs * factor, full.epochs),
        max_pairs=base.max_pairs * factor,
        train_trajs=train_trajs,
    )


def run_asha(
    evaluator: PilotEvaluator,
    grid: CandidateGrid,
    asha: AshaSpec,
    budgets: StageBudgets,
    seed: int,
    workers: int = 1,
) -> SelectionResult:
    """Train every window cheaply, promote the best 1/reduction per rung, return the survivor."""
    survivors = list(grid)
    ledger: list[LedgerEntry] = []
    scores: dict[int, float] = {}

    for rung in range(asha.rungs):
        budget = rung_budget(budgets.stage1, budgets, asha.reduction**rung)
        results = evaluate_many(evaluator, survivors, budget, f"rung{rung}", seed, workers)
        ledger.extend(results.values())
        ranked = sorted(survivors, key=lambda L: (results[L].diagnostics.m, L))
        scores = {L: results[L].diagnostics.m for L in ranked}
        logger.debug("asha rung %d: %d candidates", rung, len(survivors))
        keep = max(1, len(survivors) // asha.reduction)
        survivors = ranked[:keep] if rung + 1 < asha.rungs else ranked[:1]
        if len(survivors) == 1:
            break

    logger.info("asha: L_sel=%d after %d trainings", survivors[0], len(ledger))
    return SelectionResult(
        method=Method.ASHA.value,
        L_sel=survivors[0],
        S0=tuple(grid),
        q_scores=scores,
        ledger=tuple(ledger),
    )
