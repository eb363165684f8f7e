"""Stage one: system anchors L_core and L_plateau and the initial shortlist S0."""

import logging
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

from sake.errors import ConfigurationError
from sake.summarize import ProjectorSpec, fit_projector, project
from sake.sysrisk import DEFAULT_RIDGE, BootstrapSpec, CandidateGrid, RiskCurve, risk_curve, ucb
from sake.trajstore.pool import TrajectoryPool, split_pool

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AnchorSpec:
    """Tolerances for anchor extraction."""

    rho: float = 0.05
    tau_pl: float = 0.05
    boot: BootstrapSpec = field(default_factory=BootstrapSpec)
    denom_floor: float = 1e-12
    ridge: float = DEFAULT_RIDGE

    def __post_init__(self) -> None:
        if not 0.0 < self.rho < 1.0:
            raise ConfigurationError(f"rho must lie in (0, 1), got {self.rho}")
        if not 0.0 < self.tau_pl < 1.0:
            raise ConfigurationError(f"tau_pl must lie in (0, 1), got {self.tau_pl}")
        if self.ridge <= 0:
            raise ConfigurationError(f"ridge must be > 0, got {self.ridge}")


@dataclass(frozen=True)
class WindowDiagnostics:
    """Per-window anchor statistics; gain fields are None at L_max."""

    L: int
    tail_gap: float
    tail_gap_ucb: float
    gain: Optional[float] = None
    gain_ucb: Optional[float] = None


@dataclass(frozen=True)
class CoreResult:
    L_core: int
    epsilon_sys: float
    tail_gap: dict[int, float]
    tail_gap_ucb: dict[int, float]
    degenerate: bool = False


@dataclass(frozen=True)
class PlateauResult:
    L_plateau: int
    gain: dict[int, float]
    gain_ucb: dict[int, float]
    fallback: bool = False


@dataclass(frozen=True)
class AnchorReport:
    """Anchors, the band between them, S0 and the statistics behind them."""

    L_core: int
    L_plateau: int
    band: tuple[int, ...]
    S0: tuple[int, ...]
    epsilon_sys: float
    diagnostics: tuple[WindowDiagnostics, ...]
    degenerate: bool = False
    plateau_fallback: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {
            "l_core": self.L_core,
            "l_plateau": self.L_plateau,
            "band": list(self.band),
            "s0": list(self.S0),
            "epsilon_sys": self.epsilon_sys,
            "degenerate": self.degenerate,
            "plateau_fallback": self.plateau_fallback,
            "diagnostics": [
                {
                    "L": d.L,
                    "t_sys": d.tail_gap,
                    "t_sys_ucb": d.tail_gap_ucb,
                    "g_rel": d.gain,
                    "g_rel_ucb": d.gain_ucb,
                }
                for d in self.diagnostics
            ],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "AnchorReport":
        return cls(
            L_core=data["l_core"],
            L_plateau=data["l_plateau"],
            band=tuple(data["band"]),
            S0=tuple(data["s0"]),
            epsilon_sys=data["epsilon_sys"],
            degenerate=data.get("degenerate", False),
            plateau_fallback=data.get("plateau_fallback", False),
            diagnostics=tuple(
                WindowDiagnostics(
                    L=d["L"],
                    tail_gap=d["t_sys"],
                    tail_gap_ucb=d["t_sys_ucb"],
                    gain=d.get("g_rel"),
                    gain_ucb=d.get("g_rel_ucb"),
                )
                for d in data.get("diagnostics", [])
            ),
        )


# ============================================================================
# Anchor extraction
# ============================================================================


def estimate_core(curve: RiskCurve, spec: AnchorSpec) -> CoreResult:
    """Earliest window whose UCB-bounded gap to the L_max risk is within epsilon_sys."""
    grid = curve.grid
    reference = curve.replicates_at(grid.L_max)
    epsilon = spec.rho * (curve.at(grid.L_min) - curve.at(grid.L_max))

    tail_gap: dict[int, float] = {}
    tail_gap_ucb: dict[int, float] = {}
    for L in grid:
        paired = curve.replicates_at(L) - reference
        tail_gap[L] = curve.at(L) - curve.at(grid.L_max)
        tail_gap_ucb[L] = ucb(paired, curve.level)

    if epsilon <= 0:
        logger.warning("non-improving risk curve (epsilon_sys=%.3g); L_core set to L_min", epsilon)
        return CoreResult(grid.L_min, epsilon, tail_gap, tail_gap_ucb, degenerate=True)

    L_core = next((L for L in grid if tail_gap_ucb[L] <= epsilon), grid.L_max)
    return CoreResult(L_core, epsilon, tail_gap, tail_gap_ucb)


def estimate_plateau(curve: RiskCurve, spec: AnchorSpec, L_core: int) -> PlateauResult:
    """Earliest window at or after L_core whose UCB-bounded relative gain is <= tau_pl."""
    grid = curve.grid
    start = grid.position(L_core)

    gain: dict[int, float] = {}
    gain_ucb: dict[int, float] = {}
    for L in grid:
        nxt = grid.successor(L)
        if nxt is None:
            continue
        here, there = curve.replicates_at(L), curve.replicates_at(nxt)
        gain[L] = (curve.at(L) - curve.at(nxt)) / max(curve.at(L), spec.denom_floor)
        gain_ucb[L] = ucb((here - there) / np.maximum(here, spec.denom_floor), curve.level)

    for L in grid.windows[start:]:
        if L in gain_ucb and gain_ucb[L] <= spec.tau_pl:
            return PlateauResult(L, gain, gain_ucb)
    return PlateauResult(grid.L_max, gain, gain_ucb, fallback=True)


def initial_shortlist(grid: CandidateGrid, L_core: int, L_plateau: int) -> tuple[int, ...]:
    """S0 = sorted, deduplicated {L_min, L_core, L_plateau}."""
    for L in (L_core, L_plateau):
        grid.position(L)
    return tuple(sorted({grid.L_min, L_core, L_plateau}))


def extract_anchors(curve: RiskCurve, spec: AnchorSpec) -> AnchorReport:
    """Run estimate_core, estimate_plateau and initial_shortlist on one curve."""
    core = estimate_core(curve, spec)
    plateau = estimate_plateau(curve, spec, core.L_core)
    grid = curve.grid
    band = tuple(L for L in grid if core.L_core <= L <= plateau.L_plateau)

    diagnostics = tuple(
        WindowDiagnostics(
            L=L,
            tail_gap=core.tail_gap[L],
            tail_gap_ucb=core.tail_gap_ucb[L],
            gain=plateau.gain.get(L),
            gain_ucb=plateau.gain_ucb.get(L),
        )
        for L in grid
    )
    report = AnchorReport(
        L_core=core.L_core,
        L_plateau=plateau.L_plateau,
        band=band,
        S0=initial_shortlist(grid, core.L_core, plateau.L_plateau),
        epsilon_sys=core.epsilon_sys,
        diagnostics=diagnostics,
        degenerate=core.degenerate,
        plateau_fallback=plateau.fallback,
    )
    logger.info("anchors: L_core=%d L_plateau=%d S0=%s", report.L_core, report.L_plateau, report.S0)
    return report


def anchors_from_pool(
    pool: TrajectoryPool,
    grid: CandidateGrid,
    spec: AnchorSpec,
    projector_spec: Optional[ProjectorSpec] = None,
    val_fraction: float = 0.2,
    seed: int = 0,
) -> tuple[AnchorReport, RiskCurve]:
    """Summarize a pool, split it by trajectory, and extract anchors from its risk curve."""
    projector_spec = projector_spec or ProjectorSpec()
    parts = split_pool(pool, (1.0 - val_fraction, val_fraction, 0.0), seed)
    projector = fit_projector(parts.part("train"), projector_spec)
    curve = risk_curve(
        project(projector, parts.part("train")),
        project(projector, parts.part("val")),
        grid,
        ridge=spec.ridge,
        boot=spec.boot,
    )
    return extract_anchors(curve, spec), curve
