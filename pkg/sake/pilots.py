"""Cheap linear pilots in summary space, their rollout diagnostics and normalized cost."""

import logging
import math
import threading
from collections.abc import Iterable
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Optional, Protocol

import numpy as np

from sake.errors import ConfigurationError, DiagnosticsError, FitError
from sake.rng import derive_rng, derive_seed
from sake.summarize import Projector, SummarySet, project
from sake.sysrisk import RidgeFit, fit_ridge, lagged_design
from sake.trajstore.pool import SplitPool

logger = logging.getLogger(__name__)

PILOT_RIDGE = 1e-6
ERROR_FLOOR = 1e-12


# ============================================================================
# Budgets
# ============================================================================


@dataclass(frozen=True)
class PilotBudget:
    """Training and rollout budget for one pilot."""

    epochs: int
    max_pairs: int
    train_trajs: int
    val_trajs: int
    rollout_train_h: int
    rollout_val_h: int
    max_val_rollouts: int
    anchors: int = 1

    def __post_init__(self) -> None:
        for name, value in asdict(self).items():
            if value < 1:
                raise ConfigurationError(f"budget field {name} must be >= 1, got {value}")

    def to_dict(self) -> dict[str, int]:
        return asdict(self)


STAGE1_BUDGET = PilotBudget(
    epochs=2,
    max_pairs=1024,
    train_trajs=8,
    val_trajs=4,
    rollout_train_h=8,
    rollout_val_h=4,
    max_val_rollouts=4,
    anchors=1,
)

STAGE2_BUDGET = PilotBudget(
    epochs=6,
    max_pairs=4096,
    train_trajs=24,
    val_trajs=16,
    rollout_train_h=32,
    rollout_val_h=16,
    max_val_rollouts=8,
    anchors=4,
)


@dataclass(frozen=True)
class FullProtocol:
    """Reference full-training protocol that pilot costs are normalized against.

    train_trajs and T describe the training split; bind() fills them in when they
    are left unset in configuration.
    """

    epochs: int = 20
    train_trajs: Optional[int] = None
    T: Optional[int] = None
    rollout_h: int = 16
    max_rollouts: int = 16
    anchors: int = 4

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ConfigurationError(f"full-protocol epochs must be >= 1, got {self.epochs}")
        for name in ("rollout_h", "max_rollouts", "anchors"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"full-protocol {name} must be >= 1")

    @property
    def bound(self) -> bool:
        return self.train_trajs is not None and self.T is not None

    def bind(self, train_trajs: int, T: int) -> "FullProtocol":
        return replace(self, train_trajs=train_trajs, T=T)

    def N_full(self, L: int) -> int:
        """Training pairs available to a full training at window L."""
        if not self.bound:
            raise ConfigurationError("full protocol is not bound to a training split")
        pairs = self.train_trajs * (self.T - L)
        if pairs < 1:
            raise ConfigurationError(f"window L={L} leaves no training pairs at T={self.T}")
        return pairs

    def as_budget(self, L: int) -> PilotBudget:
        """The full protocol expressed as a pilot budget; its cost is exactly 1."""
        return PilotBudget(
            epochs=self.epochs,
            max_pairs=self.N_full(L),
            train_trajs=self.train_trajs,
            val_trajs=self.max_rollouts,
            rollout_train_h=self.rollout_h,
            rollout_val_h=self.rollout_h,
            max_val_rollouts=self.max_rollouts,
            anchors=self.anchors,
        )

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class StageBudgets:
    """Stage budgets handed unchanged to SAKE and the shortlist baselines."""

    stage1: PilotBudget = STAGE1_BUDGET
    stage2: PilotBudget = STAGE2_BUDGET
    full: FullProtocol = field(default_factory=FullProtocol)

    def bind(self, train_trajs: int, T: int) -> "StageBudgets":
        if self.full.bound:
            return self
        return replace(self, full=self.full.bind(train_trajs, T))


def cost_of(budget: PilotBudget, full: FullProtocol, L: int) -> float:
    """Normalized cost (E_pilot / E_full) * (N_pilot / N_full(L))."""
    n_full = full.N_full(L)
    realized = min(budget.max_pairs, min(budget.train_trajs, full.train_trajs) * (full.T - L))
    return (budget.epochs * realized) / (full.epochs * n_full)


# ============================================================================
# Models and diagnostics
# ============================================================================


@dataclass(frozen=True, eq=False)
class PilotModel:
    """Linear next-frame map from L stacked summary frames (oldest first)."""

    L: int
    fit: RidgeFit
    k: int
    budget: PilotBudget
    seed: int
    realized_pairs: int
    underdetermined: bool = False

    def predict(self, context: np.ndarray) -> np.ndarray:
        """Next frame for contexts of shape (n, L, k)."""
        return self.fit.predict(context.reshape(context.shape[0], self.L * self.k))


@dataclass(frozen=True)
class Diagnostics:
    """Rollout error statistics of one pilot."""

    m: float
    u: float
    v: float
    a: Optional[float]
    worst: float
    per_anchor: tuple[float, ...]

    def __post_init__(self) -> None:
        values = [self.m, self.u, self.v, self.worst, *self.per_anchor]
        if self.a is not None:
            values.append(self.a)
        if not all(math.isfinite(x) and x >= 0 for x in values):
            raise DiagnosticsError(f"diagnostics must be finite and non-negative: {self}")

    @property
    def A(self) -> int:
        return len(self.per_anchor)

    def to_dict(self) -> dict[str, Any]:
        return {
            "m": self.m,
            "u": self.u,
            "v": self.v,
            "a": self.a,
            "worst": self.worst,
            "per_anchor": list(self.per_anchor),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Diagnostics":
        return cls(
            m=data["m"],
            u=data["u"],
            v=data["v"],
            a=data.get("a"),
            worst=data["worst"],
            per_anchor=tuple(data["per_anchor"]),
        )


@dataclass(frozen=True)
class LedgerEntry:
    """One pilot training: the audit record behind the cost ratio."""

    stage: str
    L: int
    budget: PilotBudget
    realized_pairs: int
    cost: float
    diagnostics: Diagnostics

    def to_dict(self) -> dict[str, Any]:
        return {
            "stage": self.stage,
            "L": self.L,
            "budget": self.budget.to_dict(),
            "realized_pairs": self.realized_pairs,
            "cost": self.cost,
            "diagnostics": self.diagnostics.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "LedgerEntry":
        return cls(
            stage=data["stage"],
            L=data["L"],
            budget=PilotBudget(**data["budget"]),
            realized_pairs=data["realized_pairs"],
            cost=data["cost"],
            diagnostics=Diagnostics.from_dict(data["diagnostics"]),
        )


# ============================================================================
# Training
# ============================================================================


def _refine(fit: RidgeFit, X: np.ndarray, Y: np.ndarray, ridge: float, steps: int) -> RidgeFit:
    """Full-batch gradient steps on the ridge objective with an unpenalized intercept."""
    if steps <= 0:
        return fit
    x_mean = X.mean(axis=0)
    y_mean = Y.mean(axis=0)
    Xc = X - x_mean
    Yc = Y - y_mean
    lipschitz = np.linalg.norm(Xc, 2) ** 2 + ridge
    step = 1.0 / lipschitz
    coef = fit.coef.copy()
    for _ in range(steps):
        grad = (coef @ Xc.T - Yc.T) @ Xc + ridge * coef
        coef -= step * grad
    return RidgeFit(coef=coef, intercept=y_mean - coef @ x_mean)


def fit_pilot(train: SummarySet, L: int, budget: PilotBudget, seed: int) -> PilotModel:
    """Train a linear pilot on summary trajectories."""
    if L > train.T - budget.rollout_train_h - 1:
        raise FitError(
            f"window L={L} too long for T={train.T} with rollout_train_h={budget.rollout_train_h}"
        )
    rng = derive_rng(seed, "pilot-data", L)
    n_use = min(budget.train_trajs, train.n_traj)
    chosen = np.sort(rng.choice(train.n_traj, size=n_use, replace=False))
    X, Y = lagged_design(train.values[chosen].astype(np.float64), L, L)
    if X.shape[0] > budget.max_pairs:
        keep = np.sort(rng.choice(X.shape[0], size=budget.max_pairs, replace=False))
        X, Y = X[keep], Y[keep]
    if X.shape[0] == 0:
        raise FitError(f"no training pairs for L={L}")

    underdetermined = X.shape[0] < L * train.k
    if underdetermined:
        logger.warning("underdetermined pilot fit: %d pairs for %d features", X.shape[0], L * train.k)

    fit = fit_ridge(X, Y, PILOT_RIDGE)
    fit = _refine(fit, X, Y, PILOT_RIDGE, budget.epochs - 1)
    return PilotModel(
        L=L,
        fit=fit,
        k=train.k,
        budget=budget,
        seed=seed,
        realized_pairs=int(X.shape[0]),
        underdetermined=underdetermined,
    )


def rollout_errors(model: PilotModel, values: np.ndarray, horizon: int, anchors: int) -> np.ndarray:
    """Relative L2 errors of autoregressive rollouts, shape (n_traj, anchors, horizon).

    Start indices are evenly spaced over [L, T - horizon].
    """
    n, T, k = values.shape
    L = model.L
    last_start = T - horizon
    if last_start < L:
        raise DiagnosticsError(f"no admissible rollout anchor: T={T}, L={L}, horizon={horizon}")
    starts = np.round(np.linspace(L, last_start, anchors)).astype(np.int64)

    context = np.stack([values[:, s - L : s] for s in starts], axis=1)
    truth = np.stack([values[:, s : s + horizon] for s in starts], axis=1)
    context = context.reshape(n * anchors, L, k).astype(np.float64)
    truth = truth.reshape(n * anchors, horizon, k).astype(np.float64)

    errors = np.empty((n * anchors, horizon))
    for step in range(horizon):
        pred = model.predict(context)
        target = truth[:, step]
        errors[:, step] = np.linalg.norm(pred - target, axis=1) / np.maximum(
            np.linalg.norm(target, axis=1), ERROR_FLOOR
        )
        context = np.concatenate([context[:, 1:], pred[:, None, :]], axis=1)
    return errors.reshape(n, anchors, horizon)


def summarize_errors(errors: np.ndarray) -> Diagnostics:
    """Reduce (n_traj, anchors, horizon) errors to m, u, v, a and per-anchor means."""
    horizon = errors.shape[2]
    per_anchor = errors.mean(axis=(0, 2))
    tail = math.ceil(horizon / 4)
    return Diagnostics(
        m=float(errors.mean()),
        u=float(errors[:, :, -1].mean()),
        v=float(per_anchor.std()),
        a=float(errors[:, :, horizon - tail :].mean()),
        worst=float(per_anchor.max()),
        per_anchor=tuple(float(x) for x in per_anchor),
    )


def diagnose(model: PilotModel, val: SummarySet, budget: PilotBudget, seed: int) -> Diagnostics:
    """Roll a pilot out on a seeded subset of held-out trajectories."""
    if val.n_traj < 1:
        raise DiagnosticsError("no held-out trajectories for rollout diagnostics")
    n_use = min(budget.val_trajs, budget.max_val_rollouts, val.n_traj)
    rng = derive_rng(seed, "rollout", model.L)
    chosen = np.sort(rng.choice(val.n_traj, size=n_use, replace=False))
    errors = rollout_errors(model, val.values[chosen], budget.rollout_val_h, budget.anchors)
    return summarize_errors(errors)


def train_pilot(
    split: SplitPool, projector: Projector, L: int, budget: PilotBudget, seed: int
) -> PilotModel:
    return fit_pilot(project(projector, split.part("train")), L, budget, seed)


def rollout_diagnostics(
    model: PilotModel,
    split: SplitPool,
    projector: Projector,
    budget: PilotBudget,
    seed: int,
    part: str = "val",
) -> Diagnostics:
    return diagnose(model, project(projector, split.part(part)), budget, seed)


# ============================================================================
# Evaluators
# ============================================================================


class PilotEvaluator(Protocol):
    """Anything that trains and diagnoses a pilot at a window under a budget."""

    def evaluate(self, L: int, budget: PilotBudget, stage: str, seed: int) -> LedgerEntry: ...


class LinearPilotEvaluator:
    """Linear pilots over a fixed split and projector, with cached summaries.

    part selects the held-out split used for diagnostics ("val" for selection,
    "test" for the oracle sweep).
    """

    def __init__(
        self, split: SplitPool, projector: Projector, full: FullProtocol, part: str = "val"
    ) -> None:
        self.split = split
        self.projector = projector
        self.part = part
        train = split.part("train")
        self.full = full if full.bound else full.bind(train.n_traj, train.T)
        self._summaries: dict[str, SummarySet] = {}
        self._lock = threading.Lock()
        self.trainings = 0

    def summaries(self, name: str) -> SummarySet:
        with self._lock:
            if name not in self._summaries:
                self._summaries[name] = project(self.projector, self.split.part(name))
            return self._summaries[name]

    def evaluate(self, L: int, budget: PilotBudget, stage: str, seed: int) -> LedgerEntry:
        task_seed = derive_seed(seed, stage, L)
        model = fit_pilot(self.summaries("train"), L, budget, task_seed)
        diagnostics = diagnose(model, self.summaries(self.part), budget, task_seed)
        cost = cost_of(budget, self.full, L)
        with self._lock:
            self.trainings += 1
        logger.debug(
            "pilot %s L=%d pairs=%d cost=%.4g m=%.4g",
            stage, L, model.realized_pairs, cost, diagnostics.m,
        )
        return LedgerEntry(
            stage=stage,
            L=L,
            budget=budget,
            realized_pairs=model.realized_pairs,
            cost=cost,
            diagnostics=diagnostics,
        )


def evaluate_many(
    evaluator: PilotEvaluator,
    windows: Iterable[int],
    budget: PilotBudget,
    stage: str,
    seed: int,
    workers: int = 1,
) -> dict[int, LedgerEntry]:
    """Evaluate several windows, optionally in parallel; results are keyed by L."""
    windows = sorted(set(windows))
    if workers <= 1 or len(windows) <= 1:
        return {L: evaluator.evaluate(L, budget, stage, seed) for L in windows}
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = {L: pool.submit(evaluator.evaluate, L, budget, stage, seed) for L in windows}
        return {L: futures[L].result() for L in windows}
