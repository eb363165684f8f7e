"""Stage two of SAKE: coarse ranking, local refinement and the knee-aware final rule."""

import logging
import math
from collections.abc import Mapping, Sequence
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from typing import Any, Optional

import numpy as np

from sake.anchors import AnchorReport, AnchorSpec, extract_anchors
from sake.errors import ConfigurationError, PipelineError, SakeError, SelectionError
from sake.pilots import (
    Diagnostics,
    LedgerEntry,
    LinearPilotEvaluator,
    PilotEvaluator,
    StageBudgets,
    evaluate_many,
)
from sake.summarize import Projector, project
from sake.sysrisk import CandidateGrid, risk_curve
from sake.trajstore.pool import SplitPool

logger = logging.getLogger(__name__)

SPAN_FLOOR = 1e-12


class Method(str, Enum):
    """Selector methods."""

    SAKE = "sake"
    SYSTEM_CORE = "system-core"
    DIRECT3 = "direct3"
    DIRECT4 = "direct4"
    ASHA = "asha"


@dataclass(frozen=True)
class SelectorSpec:
    """Refinement, scoring and final-rule settings."""

    top_k: int = 2
    hop: int = 1
    cap: int = 6
    w_mean: float = 0.75
    w_term: float = 0.25
    w_worst: float = 0.0
    w_std: float = 0.20
    alpha: float = 0.25
    local_frac: float = 0.15
    remain_frac: float = 0.15
    consecutive_small: int = 1
    kappa: float = 1.5

    def __post_init__(self) -> None:
        weights = (self.w_mean, self.w_term, self.w_worst, self.w_std)
        if any(w < 0 for w in weights) or sum(weights) <= 0:
            raise ConfigurationError(f"score weights must be >= 0 with a positive sum, got {weights}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigurationError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.kappa <= 0:
            raise ConfigurationError(f"kappa must be > 0, got {self.kappa}")
        if self.top_k < 1 or self.hop < 0 or self.cap < 1 or self.consecutive_small < 1:
            raise ConfigurationError("top_k, cap and consecutive_small must be >= 1 and hop >= 0")
        if self.local_frac < 0 or self.remain_frac < 0:
            raise ConfigurationError("frontier fractions must be >= 0")

    @property
    def weights(self) -> tuple[float, float, float, float]:
        """(w_mean, w_term, w_worst, w_std) renormalized to sum to 1."""
        raw = (self.w_mean, self.w_term, self.w_worst, self.w_std)
        total = sum(raw)
        return tuple(w / total for w in raw)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def direct_spec(base: SelectorSpec) -> SelectorSpec:
    """Score weights and kappa used by the uniform-shortlist baselines."""
    return replace(base, w_mean=0.0, w_term=0.25, w_worst=0.75, w_std=0.0, alpha=1.0, kappa=1.0)


@dataclass(frozen=True)
class SelectionResult:
    """Outcome of one selector run."""

    method: str
    L_sel: int
    S0: tuple[int, ...] = ()
    S1: tuple[int, ...] = ()
    s1_scores: dict[int, float] = field(default_factory=dict)
    q_scores: dict[int, float] = field(default_factory=dict)
    r: Optional[int] = None
    fallback_used: bool = False
    se: Optional[float] = None
    ledger: tuple[LedgerEntry, ...] = ()

    @property
    def cost(self) -> float:
        return math.fsum(entry.cost for entry in self.ledger)

    @property
    def unique_evals(self) -> int:
        return len({entry.L for entry in self.ledger})

    def to_dict(self) -> dict[str, Any]:
        return {
            "method": self.method,
            "l_sel": self.L_sel,
            "s0": list(self.S0),
            "s1": list(self.S1),
            "s1_scores": {str(L): v for L, v in self.s1_scores.items()},
            "q_scores": {str(L): v for L, v in self.q_scores.items()},
            "r": self.r,
            "fallback_used": self.fallback_used,
            "se": self.se,
            "cost": self.cost,
            "ledger": [entry.to_dict() for entry in self.ledger],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "SelectionResult":
        return cls(
            method=data["method"],
            L_sel=data["l_sel"],
            S0=tuple(data.get("s0", [])),
            S1=tuple(data.get("s1", [])),
            s1_scores={int(L): v for L, v in data.get("s1_scores", {}).items()},
            q_scores={int(L): v for L, v in data.get("q_scores", {}).items()},
            r=data.get("r"),
            fallback_used=data.get("fallback_used", False),
            se=data.get("se"),
            ledger=tuple(LedgerEntry.from_dict(e) for e in data.get("ledger", [])),
        )


# ============================================================================
# Ranking and refinement
# ============================================================================


def coarse_rank(S0: Sequence[int], diagnostics: Mapping[int, Diagnostics]) -> list[tuple[int, float]]:
    """Rank S0 by stage-one mean rollout error; ties go to the smaller window."""
    scores = []
    for L in S0:
        if L not in diagnostics:
            raise SelectionError(f"missing stage-one diagnostics for L={L}")
        scores.append((L, diagnostics[L].m))
    return sorted(scores, key=lambda item: (item[1], item[0]))


def refine(
    grid: CandidateGrid, S0: Sequence[int], ranking: Sequence[int], spec: SelectorSpec
) -> tuple[int, ...]:
    """Union of h-hop neighborhoods of the top-ranked windows plus the S0 extremes, capped.

    Over the cap, the non-anchor window farthest in grid positions from the top-ranked
    window is dropped first; on equal distance the larger window goes.
    """
    if not ranking:
        raise SelectionError("cannot refine an empty ranking")
    keep = {min(S0), max(S0)}
    members = set(keep)
    for L in ranking[: spec.top_k]:
        i = grid.position(L)
        lo, hi = max(0, i - spec.hop), min(len(grid) - 1, i + spec.hop)
        members.update(grid.windows[lo : hi + 1])

    best = grid.position(ranking[0])
    while len(members) > spec.cap:
        removable = [L for L in members if L not in keep]
        if not removable:
            break
        victim = max(removable, key=lambda L: (abs(grid.position(L) - best), L))
        members.discard(victim)
    return tuple(sorted(members))


# ============================================================================
# Stage-two score and final rule
# ============================================================================


def min_max(values: Sequence[float]) -> np.ndarray:
    """Scale to [0, 1]; a constant array maps to zeros."""
    arr = np.asarray(values, dtype=np.float64)
    lo, hi = arr.min(), arr.max()
    if hi - lo <= 0:
        return np.zeros_like(arr)
    return (arr - lo) / (hi - lo)


def blend_scores(
    m: np.ndarray,
    u: np.ndarray,
    worst: np.ndarray,
    v: np.ndarray,
    a: np.ndarray,
    spec: SelectorSpec,
) -> np.ndarray:
    """q = alpha * (weighted normalized m, u, worst, v) + (1 - alpha) * normalized a."""
    w_mean, w_term, w_worst, w_std = spec.weights
    rollout = w_mean * m + w_term * u + w_worst * worst + w_std * v
    return spec.alpha * rollout + (1.0 - spec.alpha) * a


def _column(S1: Sequence[int], diagnostics: Mapping[int, Diagnostics], name: str) -> list[float]:
    values = []
    for L in S1:
        value = getattr(diagnostics[L], name)
        values.append(0.0 if value is None else value)
    return values


def stage2_scores(
    S1: Sequence[int], diagnostics: Mapping[int, Diagnostics], spec: SelectorSpec
) -> dict[int, float]:
    """Stage-two score per window; lower is better."""
    if not S1:
        raise SelectionError("empty refined shortlist")
    for L in S1:
        if L not in diagnostics:
            raise SelectionError(f"missing stage-two diagnostics for L={L}")
        d = diagnostics[L]
        fields = (d.m, d.u, d.v, d.worst, 0.0 if d.a is None else d.a)
        if not all(math.isfinite(x) for x in fields):
            raise SelectionError(f"non-finite stage-two diagnostics for L={L}")
    q = blend_scores(
        min_max(_column(S1, diagnostics, "m")),
        min_max(_column(S1, diagnostics, "u")),
        min_max(_column(S1, diagnostics, "worst")),
        min_max(_column(S1, diagnostics, "v")),
        min_max(_column(S1, diagnostics, "a")),
        spec,
    )
    return {L: float(score) for L, score in zip(S1, q)}


def saturation_frontier(q: Sequence[float], spec: SelectorSpec) -> int:
    """0-based index where the score curve (ascending L) has saturated."""
    values = np.asarray(q, dtype=np.float64)
    if values.size == 0:
        raise SelectionError("saturation frontier of an empty score curve")
    best = values.min()
    span = max(values.max() - best, SPAN_FLOOR)
    local = np.append(values[:-1] - values[1:], 0.0) / span
    remain = (values - best) / span
    small = (local <= spec.local_frac) & (remain <= spec.remain_frac)

    run = spec.consecutive_small
    for j in range(values.size - run + 1):
        if small[j : j + run].all():
            return j
    return values.size - 1


def standard_error(per_anchor: Sequence[float], span: float, weight: float = 1.0) -> float:
    """Standard error of a per-anchor mean, mapped onto the stage-two score scale.

    The score carries normalized m with coefficient weight (alpha times the renormalized
    w_mean), so the error is divided by the m span and multiplied by that weight.
    """
    if weight == 0:
        return 0.0
    arr = np.asarray(per_anchor, dtype=np.float64)
    return float(weight * arr.std() / math.sqrt(arr.size) / max(span, SPAN_FLOOR))


def one_se_select(
    S1: Sequence[int], q: Sequence[float], r: int, se: float, kappa: float
) -> tuple[int, bool]:
    """Smallest window at or before the frontier within kappa standard errors of the best."""
    threshold = min(q) + kappa * se
    for j in range(r + 1):
        if q[j] <= threshold:
            return S1[j], False
    return S1[r], True


@dataclass(frozen=True)
class LocalDecision:
    q: dict[int, float]
    r: int
    se: float
    L_sel: int
    fallback_used: bool


def local_rule(
    S1: Sequence[int], diagnostics: Mapping[int, Diagnostics], spec: SelectorSpec
) -> LocalDecision:
    """Score S1, locate the frontier and apply the one-standard-error rule."""
    S1 = sorted(S1)
    q = stage2_scores(S1, diagnostics, spec)
    ordered = [q[L] for L in S1]
    r = saturation_frontier(ordered, spec)
    star = S1[int(np.argmin(ordered))]
    m = [diagnostics[L].m for L in S1]
    weight = spec.alpha * spec.weights[0]
    se = standard_error(diagnostics[star].per_anchor, max(m) - min(m), weight)
    L_sel, fallback = one_se_select(S1, ordered, r, se, spec.kappa)
    return LocalDecision(q=q, r=r, se=se, L_sel=L_sel, fallback_used=fallback)


# ============================================================================
# Shortlist pipeline
# ============================================================================


def _stage(name: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except SakeError as exc:
        raise PipelineError(name, exc) from exc


def run_shortlist(
    method: str,
    evaluator: PilotEvaluator,
    grid: CandidateGrid,
    S0: Sequence[int],
    budgets: StageBudgets,
    spec: SelectorSpec,
    seed: int,
    workers: int = 1,
) -> SelectionResult:
    """Stage-one pilots on S0, refinement, stage-two pilots on S1 and the local rule."""
    S0 = tuple(sorted(set(S0)))
    if spec.cap < len(S0):
        raise PipelineError("refine", SelectionError(f"cap {spec.cap} is below |S0| = {len(S0)}"))

    stage1 = _stage("stage1", evaluate_many, evaluator, S0, budgets.stage1, "stage1", seed, workers)
    ranked = _stage("refine", coarse_rank, S0, {L: e.diagnostics for L, e in stage1.items()})
    S1 = _stage("refine", refine, grid, S0, [L for L, _ in ranked], spec)
    stage2 = _stage("stage2", evaluate_many, evaluator, S1, budgets.stage2, "stage2", seed, workers)
    decision = _stage("select", local_rule, S1, {L: e.diagnostics for L, e in stage2.items()}, spec)

    logger.info("%s: S0=%s S1=%s r=%d L_sel=%d", method, S0, S1, decision.r, decision.L_sel)
    return SelectionResult(
        method=method,
        L_sel=decision.L_sel,
        S0=S0,
        S1=S1,
        s1_scores=dict(ranked),
        q_scores=decision.q,
        r=decision.r,
        fallback_used=decision.fallback_used,
        se=decision.se,
        ledger=(*stage1.values(), *stage2.values()),
    )


def anchors_from_split(
    split: SplitPool, projector: Projector, grid: CandidateGrid, anchor_spec: AnchorSpec
) -> AnchorReport:
    """Anchors from the risk curve of the split's own train and val summaries."""
    curve = risk_curve(
        project(projector, split.part("train")),
        project(projector, split.part("val")),
        grid,
        ridge=anchor_spec.ridge,
        boot=anchor_spec.boot,
    )
    return extract_anchors(curve, anchor_spec)


def run_sake(
    split: SplitPool,
    projector: Projector,
    grid: CandidateGrid,
    anchor_spec: AnchorSpec,
    budgets: StageBudgets,
    selector_spec: SelectorSpec,
    seed: int,
    anchor_report: Optional[AnchorReport] = None,
    evaluator: Optional[PilotEvaluator] = None,
    workers: int = 1,
) -> SelectionResult:
    """Anchors, S0, stage-one ranking, refinement, stage-two scoring and final rule.

    Errors are re-raised as PipelineError tagged with the failing stage.
    """
    if anchor_report is None:
        anchor_report = _stage("anchors", anchors_from_split, split, projector, grid, anchor_spec)
    if evaluator is None:
        evaluator = LinearPilotEvaluator(split, projector, budgets.full)
    return run_shortlist(
        Method.SAKE.value, evaluator, grid, anchor_report.S0, budgets, selector_spec, seed, workers
    )
