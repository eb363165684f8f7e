"""Tests for linear pilots, rollout diagnostics and the cost model."""

import logging

import numpy as np
import pytest

from sake.errors import ConfigurationError, DiagnosticsError, FitError
from sake.pilots import (
    STAGE1_BUDGET,
    STAGE2_BUDGET,
    Diagnostics,
    FullProtocol,
    LedgerEntry,
    LinearPilotEvaluator,
    PilotBudget,
    StageBudgets,
    cost_of,
    diagnose,
    evaluate_many,
    fit_pilot,
    rollout_diagnostics,
    rollout_errors,
    summarize_errors,
    train_pilot,
)
from sake.summarize import ProjectorSpec, fit_projector
from sake.trajstore import split_pool
from tests.conftest import var_summaries

SMALL_BUDGET = PilotBudget(
    epochs=3,
    max_pairs=10_000,
    train_trajs=20,
    val_trajs=5,
    rollout_train_h=4,
    rollout_val_h=4,
    max_val_rollouts=5,
    anchors=2,
)


@pytest.fixture
def linear_split(linear_pool):
    split = split_pool(linear_pool, (0.7, 0.15, 0.15), seed=0)
    projector = fit_projector(split.part("train"), ProjectorSpec(max_components=3, fit_samples=200))
    return split, projector


class TestBudgets:
    def test_stage_defaults(self):
        s1, s2 = STAGE1_BUDGET, STAGE2_BUDGET
        assert (s1.epochs, s1.max_pairs, s1.anchors) == (2, 1024, 1)
        assert (s2.epochs, s2.max_pairs, s2.anchors) == (6, 4096, 4)

    def test_fields_must_be_positive(self):
        with pytest.raises(ConfigurationError, match="epochs"):
            PilotBudget(0, 1, 1, 1, 1, 1, 1)

    def test_bind_fills_protocol(self):
        budgets = StageBudgets().bind(train_trajs=10, T=50)
        assert budgets.full.bound
        assert budgets.full.N_full(2) == 480

    def test_bind_keeps_explicit_protocol(self):
        budgets = StageBudgets(full=FullProtocol(train_trajs=64, T=129))
        assert budgets.bind(train_trajs=10, T=50).full.train_trajs == 64


class TestCostModel:
    def test_stage_one_fraction(self, full_protocol):
        assert full_protocol.N_full(1) == 8192
        assert cost_of(STAGE1_BUDGET, full_protocol, 1) == pytest.approx(0.0125)

    def test_full_budget_costs_one(self, full_protocol):
        for L in (1, 8, 16):
            assert cost_of(full_protocol.as_budget(L), full_protocol, L) == 1.0

    def test_pairs_limited_by_data(self):
        full = FullProtocol(epochs=10, train_trajs=4, T=11)
        budget = PilotBudget(5, 1000, 8, 1, 1, 1, 1)
        # 4 trajectories * 9 pairs available, far under the 1000-pair cap
        assert cost_of(budget, full, 2) == pytest.approx(0.5)

    def test_unbound_protocol(self):
        with pytest.raises(ConfigurationError, match="not bound"):
            cost_of(STAGE1_BUDGET, FullProtocol(), 1)

    def test_window_without_pairs(self):
        with pytest.raises(ConfigurationError, match="no training pairs"):
            FullProtocol(train_trajs=2, T=5).N_full(5)


class TestFitPilot:
    def test_noiseless_system_is_recovered_at_true_lag(self, lag3_coefs):
        train = var_summaries(lag3_coefs, n_traj=20, T=30, noise=0.0, seed=5)
        val = var_summaries(lag3_coefs, n_traj=5, T=30, noise=0.0, seed=6)
        exact = diagnose(fit_pilot(train, 3, SMALL_BUDGET, seed=0), val, SMALL_BUDGET, seed=0)
        short = diagnose(fit_pilot(train, 1, SMALL_BUDGET, seed=0), val, SMALL_BUDGET, seed=0)
        assert exact.m < 1e-3
        assert short.m > 10 * exact.m

    def test_window_too_long(self, lag3_summaries):
        train, _ = lag3_summaries
        with pytest.raises(FitError, match="too long"):
            fit_pilot(train, 56, SMALL_BUDGET, seed=0)

    def test_pair_cap(self, lag3_summaries):
        train, _ = lag3_summaries
        budget = PilotBudget(1, 50, 40, 1, 1, 1, 1)
        assert fit_pilot(train, 2, budget, seed=0).realized_pairs == 50

    def test_underdetermined_fit_warns(self, lag3_summaries, caplog):
        train, _ = lag3_summaries
        budget = PilotBudget(1, 2, 1, 1, 1, 1, 1)
        with caplog.at_level(logging.WARNING, logger="sake.pilots"):
            model = fit_pilot(train, 4, budget, seed=0)
        assert model.underdetermined
        assert "underdetermined" in caplog.text

    def test_deterministic(self, lag3_summaries):
        train, _ = lag3_summaries
        budget = PilotBudget(2, 100, 10, 1, 1, 1, 1)
        a = fit_pilot(train, 3, budget, seed=9)
        b = fit_pilot(train, 3, budget, seed=9)
        assert np.array_equal(a.fit.coef, b.fit.coef)


class TestRolloutDiagnostics:
    def test_error_shape(self, lag3_summaries):
        train, val = lag3_summaries
        model = fit_pilot(train, 3, SMALL_BUDGET, seed=0)
        errors = rollout_errors(model, val.values[:4], horizon=6, anchors=3)
        assert errors.shape == (4, 3, 6)
        assert np.all(errors >= 0)

    def test_no_admissible_anchor(self, lag3_summaries):
        train, val = lag3_summaries
        model = fit_pilot(train, 3, SMALL_BUDGET, seed=0)
        with pytest.raises(DiagnosticsError, match="no admissible"):
            rollout_errors(model, val.values[:, :10], horizon=8, anchors=1)

    def test_summary_statistics(self):
        errors = np.array([[[1.0, 1.0, 1.0, 1.0], [3.0, 3.0, 3.0, 3.0]]])
        d = summarize_errors(errors)
        assert (d.m, d.u, d.worst) == (2.0, 2.0, 3.0)
        assert d.v == pytest.approx(1.0)
        assert d.a == pytest.approx(2.0)
        assert d.per_anchor == (1.0, 3.0)
        assert d.A == 2

    def test_single_anchor_has_zero_spread(self):
        d = summarize_errors(np.ones((2, 1, 4)))
        assert d.v == 0.0

    def test_tail_covers_last_quarter(self):
        errors = np.array([[[0.0, 0.0, 0.0, 0.0, 0.0, 4.0, 8.0, 12.0]]])
        assert summarize_errors(errors).a == pytest.approx(10.0)

    def test_diagnostics_must_be_finite(self):
        with pytest.raises(DiagnosticsError):
            Diagnostics(m=float("nan"), u=0.0, v=0.0, a=None, worst=0.0, per_anchor=(0.0,))
        with pytest.raises(DiagnosticsError):
            Diagnostics(m=-1.0, u=0.0, v=0.0, a=None, worst=0.0, per_anchor=(0.0,))

    def test_split_wrappers(self, linear_split):
        split, projector = linear_split
        model = train_pilot(split, projector, 2, STAGE1_BUDGET, seed=0)
        d = rollout_diagnostics(model, split, projector, STAGE1_BUDGET, seed=0)
        assert d.A == 1
        assert d.m > 0


class TestLinearPilotEvaluator:
    def test_ledger_entry(self, linear_split):
        split, projector = linear_split
        evaluator = LinearPilotEvaluator(split, projector, FullProtocol())
        entry = evaluator.evaluate(2, STAGE1_BUDGET, "stage1", seed=0)
        assert entry.stage == "stage1"
        assert entry.L == 2
        assert entry.budget == STAGE1_BUDGET
        assert 0 < entry.cost < 1
        assert evaluator.trainings == 1
        assert evaluator.full.train_trajs == split.part("train").n_traj

    def test_ledger_round_trip(self, linear_split):
        split, projector = linear_split
        evaluator = LinearPilotEvaluator(split, projector, FullProtocol())
        entry = evaluator.evaluate(1, STAGE2_BUDGET, "stage2", 3)
        assert LedgerEntry.from_dict(entry.to_dict()) == entry

    def test_parallel_matches_serial(self, linear_split):
        split, projector = linear_split
        serial_eval = LinearPilotEvaluator(split, projector, FullProtocol())
        parallel_eval = LinearPilotEvaluator(split, projector, FullProtocol())
        serial = evaluate_many(serial_eval, [1, 2, 3, 4], STAGE1_BUDGET, "stage1", 0)
        parallel = evaluate_many(parallel_eval, [4, 3, 2, 1], STAGE1_BUDGET, "stage1", 0, workers=3)
        assert list(parallel) == [1, 2, 3, 4]
        for L in serial:
            assert serial[L].diagnostics == parallel[L].diagnostics

    def test_test_split_diagnostics(self, linear_split):
        split, projector = linear_split
        entries = {
            part: LinearPilotEvaluator(split, projector, FullProtocol(), part=part).evaluate(
                2, STAGE1_BUDGET, "stage1", 0
            )
            for part in ("val", "test")
        }
        assert entries["val"].diagnostics != entries["test"].diagnostics
