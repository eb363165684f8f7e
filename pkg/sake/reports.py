"""Report tables for a run directory: CSV files plus aligned plain text."""

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np
import pandas as pd

from sake.errors import ConfigurationError
from sake.export import read_json
from sake.harness import MANIFEST_NAME
from sake.metrics import aggregate

REPORTS_DIR = "reports"
MISSING = "MISSING"
NOT_PLANNED = "-"

CONDITION_KEYS = ["system", "perturbation", "representation", "variant"]
GROUP_KEYS = ["system", "method", "perturbation", "representation", "variant", "eps"]


@dataclass
class RunData:
    run_dir: Path
    manifest: dict[str, Any]
    cells: list[tuple[dict[str, Any], Optional[dict[str, Any]]]]

    @property
    def primary_eps(self) -> float:
        return self.manifest["primary_eps"]


def load_run(run_dir: Union[str, Path]) -> RunData:
    """Manifest plus every expected cell; absent or failed cells pair with None."""
    run_dir = Path(run_dir)
    manifest_path = run_dir / MANIFEST_NAME
    if not manifest_path.exists():
        raise ConfigurationError(f"no manifest in {run_dir}")
    manifest = read_json(manifest_path)
    cells = []
    for entry in manifest["expected_cells"]:
        path = run_dir / entry["file"]
        payload = read_json(path) if entry["status"] == "ok" and path.exists() else None
        cells.append((entry, payload))
    return RunData(run_dir=run_dir, manifest=manifest, cells=cells)


def metric_rows(run: RunData) -> list[dict[str, Any]]:
    """All metric rows of completed cells."""
    return [row for _, payload in run.cells if payload is not None for row in payload["metrics"]]


def _primary_row(run: RunData, payload: dict[str, Any]) -> dict[str, Any]:
    rows = payload["metrics"]
    return next((r for r in rows if r["eps"] == run.primary_eps), rows[0])


def _wide(run: RunData, value) -> pd.DataFrame:
    """One row per (condition, seed), one column per method; gaps are explicit."""
    records = []
    for entry, payload in run.cells:
        record = {k: entry[k] for k in (*CONDITION_KEYS, "seed", "method")}
        record["value"] = MISSING if payload is None else value(_primary_row(run, payload))
        records.append(record)
    frame = pd.DataFrame(records)
    table = frame.set_index([*CONDITION_KEYS, "seed", "method"])["value"].unstack("method")
    table = table.astype(object).fillna(NOT_PLANNED).reset_index()
    table.columns.name = None

    oracle = run.manifest["systems"]
    eps_key = f"{run.primary_eps:g}"
    systems = table["system"].map(lambda s: oracle.get(s, {}))
    table.insert(5, "L_knee", systems.map(lambda o: o.get("l_knee", {}).get(eps_key, MISSING)))
    table.insert(6, "L_best", systems.map(lambda o: o.get("l_best", MISSING)))
    return table


def _percent(value: Optional[float]) -> str:
    return "n/a" if value is None else f"{100.0 * value:.1f}"


def selected_window_table(run: RunData) -> pd.DataFrame:
    return _wide(run, lambda row: row["L_sel"])


def regret_table(run: RunData) -> pd.DataFrame:
    """Knee regret in percent per method."""
    return _wide(run, lambda row: _percent(row["regret_knee"]))


def aggregate_table(run: RunData) -> pd.DataFrame:
    """Metric means per group with the count of missing cells."""
    rows = metric_rows(run)
    expected = pd.DataFrame([entry for entry, _ in run.cells])
    missing = (
        expected.assign(absent=[payload is None for _, payload in run.cells])
        .groupby(GROUP_KEYS[:-1], sort=True)["absent"]
        .sum()
        .astype(int)
        .rename("missing")
        .reset_index()
    )
    if not rows:
        return missing
    summary = aggregate(rows, keys=GROUP_KEYS)
    merged = summary.merge(missing, on=GROUP_KEYS[:-1], how="outer")
    merged["missing"] = merged["missing"].fillna(0).astype(int)
    return merged.sort_values(GROUP_KEYS, na_position="last").reset_index(drop=True)


def anchor_table(run: RunData) -> pd.DataFrame:
    """Anchors per condition, their shift from the clean condition and knee coverage."""
    oracle = run.manifest["systems"]
    eps_key = f"{run.primary_eps:g}"
    groups: dict[tuple, dict[str, Any]] = {}
    coverage: dict[tuple, list[dict[str, Any]]] = {}
    for entry, payload in run.cells:
        if entry["method"] not in ("sake", "system-core"):
            continue
        key = tuple(entry[k] for k in CONDITION_KEYS)
        groups.setdefault(key, {})
        if payload is not None:
            groups[key] = groups[key] or payload["anchors"]
            if entry["method"] == "sake":
                coverage.setdefault(key, []).append(_primary_row(run, payload))

    records = []
    for key, anchors in groups.items():
        record = dict(zip(CONDITION_KEYS, key))
        knee = oracle.get(record["system"], {}).get("l_knee", {}).get(eps_key)
        if not anchors:
            record.update(L_core=MISSING, L_plateau=MISSING, band=MISSING, S0=MISSING, L_knee=knee)
            records.append(record)
            continue
        band = anchors["band"]
        record.update(
            L_core=anchors["l_core"],
            L_plateau=anchors["l_plateau"],
            band=f"{band[0]}-{band[-1]}" if band else "",
            S0=",".join(str(L) for L in anchors["s0"]),
            L_knee=knee,
            knee_in_band=(knee in band) if knee is not None else None,
        )
        clean = groups.get((record["system"], "clean", record["representation"], record["variant"]))
        if clean:
            record["dL_core"] = abs(anchors["l_core"] - clean["l_core"])
            record["dL_plateau"] = abs(anchors["l_plateau"] - clean["l_plateau"])
        rows = coverage.get(key, [])
        for flag in ("knee_in_S0", "knee_in_S1"):
            values = [r[flag] for r in rows if r.get(flag) is not None]
            record[f"{flag}_pct"] = 100.0 * float(np.mean(values)) if values else None
        records.append(record)
    return pd.DataFrame(records)


# ============================================================================
# Output
# ============================================================================

TABLES = {
    "selected_windows": selected_window_table,
    "regrets": regret_table,
    "aggregate": aggregate_table,
    "anchors": anchor_table,
}


def write_reports(run_dir: Union[str, Path]) -> dict[str, Path]:
    """Write every table as CSV and aligned text under <run_dir>/reports."""
    run = load_run(run_dir)
    out = run.run_dir / REPORTS_DIR
    out.mkdir(parents=True, exist_ok=True)
    written = {}
    for name, build in TABLES.items():
        table = build(run)
        csv_path = out / f"{name}.csv"
        table.to_csv(csv_path, index=False, float_format="%.6g")
        (out / f"{name}.txt").write_text(_text(table) + "\n")
        written[name] = csv_path
    return written


def _text(table: pd.DataFrame) -> str:
    if table.empty:
        return "(no rows)"
    return table.to_string(index=False, na_rep="", float_format=lambda v: f"{v:.4g}")


def render_report(run_dir: Union[str, Path]) -> str:
    """All tables as one plain-text report."""
    run = load_run(run_dir)
    titles = {
        "selected_windows": "SELECTED WINDOWS",
        "regrets": f"KNEE REGRET (%) AT EPS={run.primary_eps:g}",
        "aggregate": "AGGREGATE",
        "anchors": "SYSTEM ANCHORS",
    }
    lines = ["=" * 60, f"SAKE RUN REPORT - {run.run_dir}", "=" * 60]
    failed = run.manifest.get("failed", 0)
    if failed:
        lines.append(f"\n{failed} cell(s) failed; see {MANIFEST_NAME}")
    for name, build in TABLES.items():
        lines.append(f"\n{titles[name]}")
        lines.append("-" * 40)
        lines.append(_text(build(run)))
    lines.append("\n" + "=" * 60)
    return "\n".join(lines)
