"""CLI entry points for sake."""

import functools
import json
import logging
import os
import sys

import click

from sake.errors import SakeError

LOG_LEVELS = ["DEBUG", "INFO", "WARNING", "ERROR"]


def _handle_errors(fn):
    """Turn library errors into click errors with exit status 1."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except SakeError as exc:
            raise click.ClickException(str(exc)) from exc

    return wrapper


def _parse_params(pairs: tuple[str, ...]) -> dict:
    params = {}
    for pair in pairs:
        if "=" not in pair:
            raise click.BadParameter(f"expected KEY=VALUE, got {pair!r}", param_hint="--param")
        key, raw = pair.split("=", 1)
        try:
            params[key] = json.loads(raw)
        except json.JSONDecodeError:
            params[key] = raw
    return params


def _seeds(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise click.BadParameter(f"seeds must be comma-separated integers, got {text!r}")


def _write_or_echo(payload: dict, out) -> None:
    from sake.export import dumps, write_json_atomic

    if out:
        path = write_json_atomic(out, payload)
        click.echo(f"Wrote {path}")
    else:
        click.echo(dumps(payload))


@click.group()
@click.option(
    "--log-level",
    type=click.Choice(LOG_LEVELS, case_sensitive=False),
    default=lambda: os.environ.get("SAKE_LOG_LEVEL", "WARNING"),
    show_default="WARNING or $SAKE_LOG_LEVEL",
    help="Logging verbosity.",
)
def main(log_level):
    """sake - system-anchored context-window selection for learned dynamics."""
    logging.basicConfig(
        level=getattr(logging, log_level.upper()),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


# ============================================================================
# Data
# ============================================================================


@main.command()
@click.option("--system", "system", type=click.Choice(["linear", "diffusion2d"]), required=True)
@click.option("--param", "params", multiple=True, help="Generator parameter KEY=VALUE.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "-o", type=click.Path(), required=True, help="Output trajectory file.")
@_handle_errors
def gen(system, params, seed, out):
    """Generate a synthetic trajectory pool."""
    from sake.trajstore import generate, write_pool

    pool = generate(system, _parse_params(params), seed)
    path = write_pool(pool, out)
    click.echo(f"Wrote {pool.n_traj} trajectories of shape {pool.frame_shape} x {pool.T} to {path}")


@main.command("perturb")
@click.option(
    "--in", "in_file", type=click.Path(exists=True), required=True, help="Input trajectory file."
)
@click.option(
    "--kind",
    type=click.Choice(["identity", "gaussian_noise", "downsample", "random_mask", "sparse_probe"]),
    required=True,
)
@click.option("--sigma", type=float, default=0.0)
@click.option("--factor", type=int, default=1)
@click.option("--mask-fraction", type=float, default=0.0)
@click.option("--probes", type=int, default=16)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "-o", type=click.Path(), required=True)
@_handle_errors
def perturb_command(in_file, kind, sigma, factor, mask_fraction, probes, seed, out):
    """Apply an observation perturbation to a trajectory pool."""
    from sake.trajstore import PerturbSpec, perturb, read_pool, write_pool

    spec = PerturbSpec(
        kind=kind, sigma=sigma, factor=factor, mask_fraction=mask_fraction, probes=probes, seed=seed
    )
    pool = perturb(read_pool(in_file), spec)
    path = write_pool(pool, out)
    click.echo(f"Wrote {spec.label} pool to {path}")


# ============================================================================
# Stages
# ============================================================================


def _projector_spec(summary: dict, seed: int = 0):
    from sake.summarize import ProjectorSpec

    return ProjectorSpec(**summary, seed=seed)


summary_options = [
    click.option(
        "--summary.method",
        "summary_method",
        type=click.Choice(["pca", "svd", "random_projection", "identity"]),
        default="pca",
        show_default=True,
    ),
    click.option(
        "--summary.var-target",
        "variance_target",
        type=float,
        default=0.99,
        show_default=True,
        help="Explained-variance fraction that sets the component count.",
    ),
    click.option(
        "--summary.max-k",
        "max_components",
        type=int,
        default=64,
        show_default=True,
        help="Upper bound on summary components.",
    ),
    click.option(
        "--summary.samples",
        "fit_samples",
        type=int,
        default=800,
        show_default=True,
        help="Frames sampled to fit the projector.",
    ),
]
SUMMARY_FIELDS = {
    "summary_method": "method",
    "variance_target": "variance_target",
    "max_components": "max_components",
    "fit_samples": "fit_samples",
}


def with_summary_options(fn):
    """Attach the --summary.* flags and pass them to the command as one summary dict."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        summary = {field: kwargs.pop(name) for name, field in SUMMARY_FIELDS.items()}
        return fn(*args, summary=summary, **kwargs)

    for option in reversed(summary_options):
        wrapper = option(wrapper)
    return wrapper


@main.command()
@click.argument("pool_file", type=click.Path(exists=True))
@click.option("--grid", default="1..16", show_default=True)
@click.option("--rho", type=float, default=0.05, show_default=True)
@click.option("--tau-pl", type=float, default=0.05, show_default=True)
@click.option("--resamples", type=int, default=300, show_default=True)
@click.option("--level", type=float, default=0.95, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--curve-csv", type=click.Path(), help="Also write the risk curve as CSV.")
@click.option("--out", "-o", type=click.Path())
@with_summary_options
@_handle_errors
def anchors(
    pool_file, grid, rho, tau_pl, resamples, level, seed, curve_csv, out, summary
):
    """Extract L_core, L_plateau and S0 from a trajectory pool."""
    from sake.anchors import AnchorSpec, anchors_from_pool
    from sake.export import curve_to_dict, envelope
    from sake.sysrisk import BootstrapSpec, CandidateGrid, export_curve_csv
    from sake.trajstore import read_pool

    spec = AnchorSpec(rho=rho, tau_pl=tau_pl, boot=BootstrapSpec(resamples, level, seed))
    report, curve = anchors_from_pool(
        read_pool(pool_file),
        CandidateGrid.parse(grid),
        spec,
        _projector_spec(summary, seed),
        seed=seed,
    )
    if curve_csv:
        export_curve_csv(curve, curve_csv)
    _write_or_echo(envelope("anchors", {**report.to_dict(), "curve": curve_to_dict(curve)}), out)


def _pool_config(pool_file, grid, seeds, summary, epochs):
    from sake.config import ExperimentConfig, SystemConfig
    from sake.pilots import FullProtocol, StageBudgets

    return ExperimentConfig(
        systems=[SystemConfig(name="pool", input=str(pool_file))],
        grid=grid,
        seeds=seeds,
        summary=_projector_spec(summary),
        budgets=StageBudgets(full=FullProtocol(epochs=epochs)),
    )


@main.command()
@click.argument("pool_file", type=click.Path(exists=True))
@click.option("--grid", default="1..16", show_default=True)
@click.option("--seeds", default="0,1,2", show_default=True)
@click.option("--epochs", type=int, default=20, show_default=True, help="Full-protocol epochs.")
@click.option("--eps", type=float, default=0.05, show_default=True)
@click.option("--workers", type=int, default=1, show_default=True)
@click.option("--out", "-o", type=click.Path())
@with_summary_options
@_handle_errors
def sweep(pool_file, grid, seeds, epochs, eps, workers, out, summary):
    """Full-sweep oracle over every window on the test split."""
    from sake.export import envelope
    from sake.harness import prepare_system
    from sake.metrics import full_sweep
    from sake.pilots import LinearPilotEvaluator

    config = _pool_config(pool_file, grid, _seeds(seeds), summary, epochs)
    ctx = prepare_system(config, config.systems[0], with_oracle=False)
    evaluator = LinearPilotEvaluator(ctx.split, ctx.projector, ctx.budgets.full, part="test")
    oracle = full_sweep(evaluator, ctx.grid, ctx.budgets.full, config.seeds, workers)
    click.echo(f"L_best={oracle.L_best} L_knee(eps={eps:g})={oracle.knee(eps)}", err=True)
    _write_or_echo(envelope("oracle", oracle.to_dict()), out)


@main.command()
@click.argument("pool_file", type=click.Path(exists=True), required=False)
@click.option(
    "--method",
    type=click.Choice(["sake", "system-core", "direct3", "direct4", "asha"]),
    default="sake",
    show_default=True,
)
@click.option("--config", "config_file", type=click.Path(exists=True), help="Experiment config.")
@click.option("--system", "system_name", help="System name in the config (default: first).")
@click.option("--grid", default="1..16", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "-o", type=click.Path())
@with_summary_options
@_handle_errors
def select(
    pool_file, method, config_file, system_name, grid, seed, out, summary
):
    """Select a context window with one method."""
    from sake.config import ExperimentConfig
    from sake.export import envelope
    from sake.harness import AnchorCache, prepare_system, select_window, variants

    if config_file:
        config = ExperimentConfig.load(config_file)
    elif pool_file:
        config = _pool_config(pool_file, grid, (seed,), summary, 20)
    else:
        raise click.UsageError("give a POOL_FILE or --config")

    systems = {s.name: s for s in config.systems}
    if system_name is not None and system_name not in systems:
        raise click.BadParameter(f"no system {system_name!r} in config", param_hint="--system")
    system = systems[system_name] if system_name else config.systems[0]

    ctx = prepare_system(config, system, with_oracle=False)
    result, report = select_window(
        config,
        ctx,
        method,
        seed,
        variants(config)[0],
        config.perturbations[0],
        config.representation_list[0],
        AnchorCache(config),
    )
    click.echo(f"{method}: L_sel={result.L_sel} cost={result.cost:.4f}", err=True)
    _write_or_echo(envelope("selection", {**result.to_dict(), "anchors": report.to_dict()}), out)


@main.command("eval")
@click.option("--result", "result_file", type=click.Path(exists=True), required=True)
@click.option("--oracle", "oracle_file", type=click.Path(exists=True), required=True)
@click.option("--eps", type=float, multiple=True, default=[0.05], show_default=True)
@click.option("--out", "-o", type=click.Path())
@_handle_errors
def eval_command(result_file, oracle_file, eps, out):
    """Score a saved selection against a saved oracle."""
    from sake.anchors import AnchorReport
    from sake.export import envelope, read_json
    from sake.metrics import OracleReference, evaluate_selection
    from sake.selector import SelectionResult

    data = read_json(result_file)
    result = SelectionResult.from_dict(data)
    report = AnchorReport.from_dict(data["anchors"]) if "anchors" in data else None
    oracle = OracleReference.from_dict(read_json(oracle_file))
    rows = [evaluate_selection(result, oracle, e, report).to_dict() for e in eps]
    _write_or_echo(envelope("metrics", {"rows": rows}), out)


# ============================================================================
# Experiments
# ============================================================================


@main.command()
@click.option("--config", "config_file", type=click.Path(exists=True), required=True)
@click.option("--out", "-o", type=click.Path(), help="Run directory (default: config output_dir).")
@click.option("--workers", type=int, default=None, help="Override config workers.")
@click.option("--fail-fast", is_flag=True, default=False, help="Stop at the first failed cell.")
@_handle_errors
def run(config_file, out, workers, fail_fast):
    """Run a whole experiment and write its report tables."""
    from dataclasses import replace

    from sake.config import ExperimentConfig
    from sake.harness import run_experiment

    config = ExperimentConfig.load(config_file)
    if workers is not None:
        config = replace(config, workers=workers)

    def progress(key, status):
        click.echo(f"  {status:6s} {key.slug}")

    outcome = run_experiment(config, out_dir=out, fail_fast=fail_fast or None, on_cell=progress)
    click.echo(f"Run directory: {outcome.run_dir}")
    click.echo(f"Cells: {len(outcome.ok)} ok, {len(outcome.failed)} failed")
    if not outcome.success:
        sys.exit(1)


@main.command()
@click.argument("run_dir", type=click.Path(exists=True, file_okay=False))
@_handle_errors
def aggregate(run_dir):
    """Rewrite the aggregate tables of a run directory."""
    from sake.reports import aggregate_table, load_run, write_reports

    written = write_reports(run_dir)
    click.echo(aggregate_table(load_run(run_dir)).to_string(index=False))
    click.echo(f"Wrote {written['aggregate']}")


@main.command()
@click.argument("run_dir", type=click.Path(exists=True, file_okay=False))
@_handle_errors
def report(run_dir):
    """Render every report table of a run directory."""
    from sake.reports import render_report, write_reports

    write_reports(run_dir)
    click.echo(render_report(run_dir))


if __name__ == "__main__":
    main()
