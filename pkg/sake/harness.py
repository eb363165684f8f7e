"""Experiment orchestration: pools, cached oracle sweeps, selector cells and the manifest."""

import hashlib
import json
import logging
import threading
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Optional, Union

import numpy as np

from sake.anchors import AnchorReport, AnchorSpec, anchors_from_pool
from sake.baselines import run_asha, run_direct_shortlist, run_system_core
from sake.config import CONFIG_NAME, ExperimentConfig, SystemConfig, to_plain
from sake.db import crud
from sake.db.models import CellStatus
from sake.db.session import get_session, init_db
from sake.errors import PipelineError, SakeError
from sake.export import append_jsonl, envelope, write_json_atomic
from sake.metrics import OracleReference, evaluate_selection, full_sweep
from sake.pilots import LinearPilotEvaluator, StageBudgets
from sake.rng import derive_seed
from sake.selector import Method, SelectionResult, SelectorSpec, run_sake
from sake.summarize import Projector, fit_projector
from sake.sysrisk import CandidateGrid
from sake.trajstore.fileformat import read_pool
from sake.trajstore.generators import generate
from sake.trajstore.perturb import PerturbSpec, perturb
from sake.trajstore.pool import SplitPool, TrajectoryPool, split_pool

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
LEDGER_NAME = "ledger.jsonl"
CELLS_DIR = "cells"
DEFAULT_VARIANT = "default"
FAIL_FAST_SKIP = "not run (fail-fast)"

ANCHOR_METHODS = (Method.SAKE.value, Method.SYSTEM_CORE.value)


# ============================================================================
# Cells
# ============================================================================


@dataclass(frozen=True, order=True)
class CellKey:
    system: str
    method: str
    seed: int
    perturbation: str = "clean"
    representation: str = "pca"
    variant: str = DEFAULT_VARIANT

    @property
    def slug(self) -> str:
        parts = (
            self.system,
            self.method,
            f"seed{self.seed}",
            self.perturbation,
            self.representation,
            self.variant.replace("=", "-"),
        )
        return "__".join(parts)

    @property
    def filename(self) -> str:
        return f"{CELLS_DIR}/{self.slug}.json"

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class Variant:
    """A named setting of anchor spec, selector spec and knee tolerances."""

    label: str
    anchors: AnchorSpec
    selector: SelectorSpec
    eps: tuple[float, ...]
    axis: Optional[str] = None


@dataclass(frozen=True)
class CellPlan:
    key: CellKey
    perturbation: PerturbSpec
    variant: Variant


def variants(config: ExperimentConfig) -> list[Variant]:
    """The default setting followed by one-at-a-time sensitivity settings."""
    result = [Variant(DEFAULT_VARIANT, config.anchors, config.selector, config.eps)]
    for axis, value in config.sensitivity.variants():
        anchors, selector, eps = config.anchors, config.selector, config.eps
        if axis == "rho":
            anchors = replace(anchors, rho=value)
        elif axis == "tau_pl":
            anchors = replace(anchors, tau_pl=value)
        elif axis == "resamples":
            anchors = replace(anchors, boot=replace(anchors.boot, resamples=int(value)))
        elif axis == "kappa":
            selector = replace(selector, kappa=value)
        elif axis == "eps":
            eps = (value,)
        result.append(Variant(f"{axis}={value:g}", anchors, selector, eps, axis=axis))
    return result


def plan_cells(config: ExperimentConfig) -> list[CellPlan]:
    """Every cell of the experiment in a fixed order.

    Perturbation, representation and sensitivity conditions only change anchors, so
    the anchor-free selectors run once per seed under the reference condition.
    Sensitivity variants run under the reference condition only.
    """
    perturbations = config.perturbations
    representations = config.representation_list
    reference = (perturbations[0], representations[0])
    all_variants = variants(config)

    plans: list[CellPlan] = []
    for system in config.systems:
        for method in config.methods:
            for seed in config.seeds:
                if method not in ANCHOR_METHODS:
                    conditions = [(reference, all_variants[0])]
                else:
                    conditions = [
                        ((p, rep), all_variants[0]) for p in perturbations for rep in representations
                    ]
                    conditions += [
                        (reference, v)
                        for v in all_variants[1:]
                        if not (method == Method.SYSTEM_CORE.value and v.axis == "kappa")
                    ]
                for (p, rep), variant in conditions:
                    key = CellKey(system.name, method, seed, p.label, rep, variant.label)
                    plans.append(CellPlan(key=key, perturbation=p, variant=variant))
    return plans


# ============================================================================
# Per-system context
# ============================================================================


def load_system_pool(config: ExperimentConfig, system: SystemConfig) -> TrajectoryPool:
    if system.generator is not None:
        return generate(system.generator, system.params, system.seed)
    return read_pool(config.resolve(system.input))


def anchor_base_pool(config: ExperimentConfig, system: SystemConfig, split: SplitPool) -> TrajectoryPool:
    """Pool anchors are extracted from before any perturbation."""
    if config.anchor_source == "same_data":
        return split.part("train")
    if system.generator is None:
        logger.warning("system %s has no generator; clean anchors use its training split", system.name)
        return split.part("train")
    return generate(system.generator, system.params, derive_seed(system.seed, "anchor-pool"))


def oracle_key(config: ExperimentConfig, system: SystemConfig, budgets: StageBudgets) -> str:
    """Hash of everything the full sweep depends on."""
    payload = {
        "system": to_plain(system),
        "grid": list(config.candidate_grid),
        "seeds": list(config.seeds),
        "full": budgets.full.to_dict(),
        "summary": config.summary.to_dict(),
        "split": to_plain(config.split),
    }
    text = json.dumps(payload, sort_keys=True)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:32]


@dataclass
class SystemContext:
    system: SystemConfig
    grid: CandidateGrid
    split: SplitPool
    projector: Projector
    budgets: StageBudgets
    anchor_pool: TrajectoryPool
    oracle: Optional[OracleReference] = None
    oracle_key: str = ""
    oracle_trainings: int = 0
    oracle_cached: bool = False


def build_oracle(ctx: SystemContext, seeds: tuple[int, ...], workers: int) -> None:
    """Load the full sweep from the run store, or compute and cache it."""
    with get_session() as session:
        cached = crud.load_oracle(session, ctx.oracle_key)
    if cached and all(s in cached and all(L in cached[s] for L in ctx.grid) for s in seeds):
        ctx.oracle = OracleReference(grid=ctx.grid, per_seed={s: cached[s] for s in seeds}, seeds=seeds)
        ctx.oracle_cached = True
        logger.info("oracle for %s reused from cache", ctx.system.name)
        return

    evaluator = LinearPilotEvaluator(ctx.split, ctx.projector, ctx.budgets.full, part="test")
    ctx.oracle = full_sweep(evaluator, ctx.grid, ctx.budgets.full, seeds, workers)
    ctx.oracle_trainings = evaluator.trainings
    with get_session() as session:
        crud.save_oracle(session, ctx.oracle_key, ctx.system.name, ctx.oracle.per_seed)


def prepare_system(
    config: ExperimentConfig, system: SystemConfig, with_oracle: bool = True
) -> SystemContext:
    pool = load_system_pool(config, system)
    split = split_pool(pool, config.split.fractions, config.split.seed)
    train = split.part("train")
    projector = fit_projector(train, config.summary)
    budgets = config.budgets.bind(train.n_traj, train.T)
    ctx = SystemContext(
        system=system,
        grid=config.candidate_grid,
        split=split,
        projector=projector,
        budgets=budgets,
        anchor_pool=anchor_base_pool(config, system, split),
        oracle_key=oracle_key(config, system, budgets),
    )
    if with_oracle:
        build_oracle(ctx, tuple(config.seeds), config.workers)
    return ctx


class AnchorCache:
    """Anchor reports per (system, perturbation, representation, anchor spec)."""

    def __init__(self, config: ExperimentConfig) -> None:
        self.config = config
        self._lock = threading.Lock()
        self._reports: dict[tuple, AnchorReport] = {}

    def get(
        self, ctx: SystemContext, perturbation: PerturbSpec, representation: str, spec: AnchorSpec
    ) -> AnchorReport:
        key = (ctx.system.name, perturbation, representation, spec)
        with self._lock:
            cached = self._reports.get(key)
        if cached is not None:
            return cached
        # computed unlocked; concurrent misses on one key race and the first insert wins
        pool = perturb(ctx.anchor_pool, perturbation)
        projector_spec = replace(self.config.summary, method=representation)
        report, _ = anchors_from_pool(
            pool,
            ctx.grid,
            spec,
            projector_spec,
            val_fraction=self.config.anchor_val_fraction,
            seed=self.config.split.seed,
        )
        with self._lock:
            return self._reports.setdefault(key, report)


# ============================================================================
# Running
# ============================================================================


def select_window(
    config: ExperimentConfig,
    ctx: SystemContext,
    method: str,
    seed: int,
    variant: Variant,
    perturbation: PerturbSpec,
    representation: str,
    anchors: AnchorCache,
) -> tuple[SelectionResult, AnchorReport]:
    """Run one selector under one condition and return it with the anchors it saw."""
    try:
        report = anchors.get(ctx, perturbation, representation, variant.anchors)
    except SakeError as exc:
        raise PipelineError("anchors", exc) from exc

    evaluator = LinearPilotEvaluator(ctx.split, ctx.projector, ctx.budgets.full)
    kind = Method(method)
    if kind is Method.SAKE:
        result = run_sake(
            ctx.split,
            ctx.projector,
            ctx.grid,
            variant.anchors,
            ctx.budgets,
            variant.selector,
            seed,
            anchor_report=report,
            evaluator=evaluator,
        )
    elif kind is Method.SYSTEM_CORE:
        result = run_system_core(report)
    elif kind in (Method.DIRECT3, Method.DIRECT4):
        k = 3 if kind is Method.DIRECT3 else 4
        result = run_direct_shortlist(k, evaluator, ctx.grid, ctx.budgets, variant.selector, seed)
    else:
        result = run_asha(evaluator, ctx.grid, config.asha, ctx.budgets, seed)
    return result, report


def run_cell(
    config: ExperimentConfig, ctx: SystemContext, plan: CellPlan, anchors: AnchorCache
) -> dict[str, Any]:
    """Run one cell and return its JSON payload with one metrics row per eps."""
    key = plan.key
    result, report = select_window(
        config,
        ctx,
        key.method,
        key.seed,
        plan.variant,
        plan.perturbation,
        key.representation,
        anchors,
    )
    rows = [
        {**key.to_dict(), **evaluate_selection(result, ctx.oracle, eps, report).to_dict()}
        for eps in plan.variant.eps
    ]
    return envelope(
        "cell",
        {
            "key": key.to_dict(),
            "status": CellStatus.OK.value,
            "anchors": report.to_dict(),
            "selection": result.to_dict(),
            "metrics": rows,
        },
    )


@dataclass
class RunOutcome:
    run_dir: Path
    ok: list[CellKey] = field(default_factory=list)
    failed: dict[CellKey, str] = field(default_factory=dict)

    @property
    def success(self) -> bool:
        return not self.failed


def _write_run_config(config: ExperimentConfig, run_dir: Path) -> ExperimentConfig:
    """Copy the config into the run directory with input paths made absolute."""
    systems = [
        replace(s, input=str(config.resolve(s.input).resolve())) if s.input is not None else s
        for s in config.systems
    ]
    resolved = replace(config, systems=systems, output_dir=str(run_dir), base_dir=run_dir)
    resolved.save(run_dir / CONFIG_NAME)
    return resolved


def run_experiment(
    config: ExperimentConfig,
    out_dir: Union[str, Path, None] = None,
    fail_fast: Optional[bool] = None,
    on_cell: Optional[Callable[[CellKey, str], None]] = None,
) -> RunOutcome:
    """Run every planned cell and write cells, ledger, manifest and report tables."""
    from sake.reports import write_reports

    run_dir = Path(out_dir) if out_dir is not None else config.resolve(config.output_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    fail_fast = config.fail_fast if fail_fast is None else fail_fast
    resolved = _write_run_config(config, run_dir)
    config_hash = resolved.config_hash()
    init_db(run_dir)
    (run_dir / LEDGER_NAME).unlink(missing_ok=True)

    plans = plan_cells(config)
    outcome = RunOutcome(run_dir=run_dir)
    contexts: dict[str, SystemContext] = {}
    context_errors: dict[str, str] = {}
    for system in config.systems:
        if fail_fast and context_errors:
            context_errors[system.name] = FAIL_FAST_SKIP
            continue
        try:
            contexts[system.name] = prepare_system(config, system)
        except SakeError as exc:
            logger.error("system %s failed before any cell ran: %s", system.name, exc)
            context_errors[system.name] = f"[prepare] {exc}"

    anchors = AnchorCache(config)
    futures: dict[CellKey, Future] = {}
    with ThreadPoolExecutor(max_workers=config.workers) as executor:
        for plan in plans:
            ctx = contexts.get(plan.key.system)
            if ctx is not None:
                futures[plan.key] = executor.submit(run_cell, config, ctx, plan, anchors)

        stop = False
        for plan in plans:
            key = plan.key
            error: Optional[str] = context_errors.get(key.system)
            payload = None
            future = futures.get(key)
            if stop and future is not None:
                future.cancel()
            if future is None and error is None:
                error = FAIL_FAST_SKIP
            elif future is not None and future.cancelled():
                error = FAIL_FAST_SKIP
            elif future is not None:
                try:
                    payload = future.result()
                except (SakeError, np.linalg.LinAlgError) as exc:
                    error = str(exc)
            _record_cell(run_dir, key, payload, error, outcome)
            if on_cell is not None:
                on_cell(key, "ok" if error is None else "failed")
            if error is not None and fail_fast and not stop:
                stop = True
                for pending in futures.values():
                    pending.cancel()

    _write_manifest(run_dir, resolved, config_hash, plans, contexts, context_errors, outcome)
    write_reports(run_dir)
    logger.info("run finished: %d ok, %d failed", len(outcome.ok), len(outcome.failed))
    return outcome


def _record_cell(
    run_dir: Path,
    key: CellKey,
    payload: Optional[dict[str, Any]],
    error: Optional[str],
    outcome: RunOutcome,
) -> None:
    cell_file = run_dir / key.filename
    if error is None:
        write_json_atomic(cell_file, payload)
        ledger = payload["selection"]["ledger"]
        append_jsonl(run_dir / LEDGER_NAME, ({"cell": key.slug, **entry} for entry in ledger))
        outcome.ok.append(key)
    else:
        logger.warning("cell %s failed: %s", key.slug, error)
        cell_file.unlink(missing_ok=True)
        outcome.failed[key] = error
    with get_session() as session:
        crud.upsert_cell(
            session,
            key.slug,
            system=key.system,
            method=key.method,
            seed=key.seed,
            perturbation=key.perturbation,
            representation=key.representation,
            variant=key.variant,
            status=CellStatus.OK.value if error is None else CellStatus.FAILED.value,
            error_message=error,
            cell_file=key.filename if error is None else None,
        )


def _write_manifest(
    run_dir: Path,
    config: ExperimentConfig,
    config_hash: str,
    plans: list[CellPlan],
    contexts: dict[str, SystemContext],
    context_errors: dict[str, str],
    outcome: RunOutcome,
) -> Path:
    systems = {}
    for name, ctx in contexts.items():
        systems[name] = {
            "oracle_key": ctx.oracle_key,
            "oracle_trainings": ctx.oracle_trainings,
            "oracle_cached": ctx.oracle_cached,
            "l_best": ctx.oracle.L_best,
            "l_knee": {f"{eps:g}": ctx.oracle.knee(eps) for eps in _all_eps(config)},
            "oracle": ctx.oracle.to_dict(),
            "projector_k": ctx.projector.k,
        }
    for name, error in context_errors.items():
        systems[name] = {"error": error}

    cells = []
    for plan in plans:
        key = plan.key
        entry = {**key.to_dict(), "slug": key.slug, "file": key.filename}
        if key in outcome.failed:
            entry.update(status=CellStatus.FAILED.value, error=outcome.failed[key])
        else:
            entry["status"] = CellStatus.OK.value
        cells.append(entry)

    manifest = envelope(
        "manifest",
        {
            "config_hash": config_hash,
            "config_file": CONFIG_NAME,
            "primary_eps": config.eps[0],
            "systems": systems,
            "expected_cells": cells,
            "failed": len(outcome.failed),
        },
    )
    return write_json_atomic(run_dir / MANIFEST_NAME, manifest)


def _all_eps(config: ExperimentConfig) -> list[float]:
    values = list(config.eps)
    if config.sensitivity.enabled:
        values += [e for e in config.sensitivity.eps if e not in values]
    return values
