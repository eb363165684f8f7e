"""Pytest fixtures for sake tests."""

import numpy as np
import pytest

from sake.db.session import reset_engine
from sake.pilots import Diagnostics, FullProtocol, LedgerEntry, cost_of
from sake.summarize import SummarySet
from sake.sysrisk import CandidateGrid, RiskCurve
from sake.trajstore import generate_diffusion2d, generate_linear_lag_system


@pytest.fixture(autouse=True)
def _reset_run_store():
    yield
    reset_engine()


# ============================================================================
# Pools and summaries
# ============================================================================


@pytest.fixture
def linear_pool():
    """Small VAR(2) pool: 3 channels, 20 trajectories of 48 steps."""
    return generate_linear_lag_system(
        dim=3, true_lag=2, n_traj=20, T=48, noise_sigma=0.05, stability_margin=0.2, seed=0
    )


@pytest.fixture
def diffusion_pool():
    return generate_diffusion2d(grid=8, n_traj=4, T=12, diffusivity=0.1, seed=0)


def var_summaries(coefs: np.ndarray, n_traj: int, T: int, noise: float, seed: int) -> SummarySet:
    """Simulate x_t = sum_j coefs[j] @ x_{t-1-j} + noise directly in summary space."""
    p, k, _ = coefs.shape
    rng = np.random.default_rng(seed)
    x = np.zeros((n_traj, T, k))
    x[:, :p] = rng.normal(size=(n_traj, p, k))
    for t in range(p, T):
        x[:, t] = sum(x[:, t - 1 - j] @ coefs[j].T for j in range(p))
        x[:, t] += noise * rng.normal(size=(n_traj, k))
    return SummarySet(values=x, provenance="test")


@pytest.fixture
def lag3_coefs():
    """Stable scalar VAR(3) coefficients with strong partial autocorrelation at lags 2 and 3."""
    return np.array([[[0.2]], [[0.3]], [[0.4]]])


@pytest.fixture
def lag3_summaries(lag3_coefs):
    """Noise-driven VAR(3) train and val summaries."""
    train = var_summaries(lag3_coefs, n_traj=40, T=60, noise=0.1, seed=1)
    val = var_summaries(lag3_coefs, n_traj=20, T=60, noise=0.1, seed=2)
    return train, val


# ============================================================================
# Hand-built curves and diagnostics
# ============================================================================


@pytest.fixture
def make_curve():
    """RiskCurve from point risks; replicates default to the risks themselves."""

    def build(risk, replicates=None, windows=None, level=0.95):
        risk = np.asarray(risk, dtype=np.float64)
        grid = CandidateGrid(tuple(windows or range(1, len(risk) + 1)))
        if replicates is None:
            replicates = np.repeat(risk[:, None], 4, axis=1)
        return RiskCurve(grid=grid, risk=risk, replicates=np.asarray(replicates), ridge=1e-3, level=level)

    return build


def diagnostics(m, u=None, v=0.0, a=None, per_anchor=None):
    per_anchor = tuple(per_anchor) if per_anchor is not None else (m,)
    return Diagnostics(
        m=m,
        u=m if u is None else u,
        v=v,
        a=a,
        worst=max(per_anchor),
        per_anchor=per_anchor,
    )


@pytest.fixture
def make_diagnostics():
    return diagnostics


@pytest.fixture
def full_protocol():
    """Full protocol of 20 epochs over 64 trajectories of 129 steps."""
    return FullProtocol(epochs=20, train_trajs=64, T=129)


class TableEvaluator:
    """Pilot evaluator whose mean error per window comes from a fixed table.

    Per-anchor errors spread symmetrically around m by the relative amount spread.
    """

    def __init__(self, errors: dict[int, float], full: FullProtocol, spread: float = 0.0):
        self.errors = errors
        self.full = full
        self.spread = spread
        self.calls: list[tuple[str, int]] = []

    def evaluate(self, L, budget, stage, seed):
        m = self.errors[L]
        offsets = np.arange(budget.anchors) - (budget.anchors - 1) / 2
        per_anchor = tuple(float(m * (1 + self.spread * o)) for o in offsets)
        self.calls.append((stage, L))
        realized = min(budget.max_pairs, min(budget.train_trajs, self.full.train_trajs) * (self.full.T - L))
        return LedgerEntry(
            stage=stage,
            L=L,
            budget=budget,
            realized_pairs=realized,
            cost=cost_of(budget, self.full, L),
            diagnostics=Diagnostics(
                m=m,
                u=m,
                v=float(np.std(per_anchor)),
                a=m,
                worst=max(per_anchor),
                per_anchor=per_anchor,
            ),
        )


@pytest.fixture
def knee_errors():
    """Error table on 1..16 that falls steeply to L=3 and is flat from L=6."""
    errors = {1: 1.0, 2: 0.5, 3: 0.2, 4: 0.19, 5: 0.189}
    errors.update({L: 0.188 for L in range(6, 17)})
    return errors


@pytest.fixture
def table_evaluator(knee_errors, full_protocol):
    return TableEvaluator(knee_errors, full_protocol, spread=0.1)
