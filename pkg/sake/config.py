"""Experiment configuration: TOML (or JSON) documents mapped onto the domain dataclasses."""

import dataclasses
import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

import tomli_w

from sake.anchors import AnchorSpec
from sake.baselines import AshaSpec
from sake.errors import ConfigurationError
from sake.pilots import STAGE1_BUDGET, STAGE2_BUDGET, FullProtocol, PilotBudget, StageBudgets
from sake.selector import Method, SelectorSpec
from sake.summarize import ProjectionMethod, ProjectorSpec
from sake.sysrisk import BootstrapSpec, CandidateGrid
from sake.trajstore.generators import GENERATORS
from sake.trajstore.perturb import PerturbSpec

SCHEMA_VERSION = 1
CONFIG_NAME = "config.toml"

ANCHOR_SOURCES = ("clean", "same_data")


def _check_keys(data: dict[str, Any], allowed: set[str], where: str) -> None:
    unknown = sorted(set(data) - allowed)
    if unknown:
        dotted = ", ".join(f"{where}.{k}" if where else k for k in unknown)
        raise ConfigurationError(f"unknown configuration key(s): {dotted}")


def _section(cls, data: Optional[dict[str, Any]], where: str, **overrides):
    """Build a flat dataclass from a table, rejecting unknown keys."""
    data = dict(data or {})
    names = {f.name for f in dataclasses.fields(cls)}
    _check_keys(data, names - set(overrides), where)
    for f in dataclasses.fields(cls):
        if isinstance(data.get(f.name), list):
            data[f.name] = tuple(data[f.name])
    try:
        return cls(**data, **overrides)
    except TypeError as exc:
        raise ConfigurationError(f"invalid [{where}] section: {exc}") from exc


def to_plain(obj: Any) -> Any:
    """Dataclass tree to TOML-safe plain data (None dropped, tuples as lists)."""
    if dataclasses.is_dataclass(obj):
        obj = {f.name: getattr(obj, f.name) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): to_plain(v) for k, v in obj.items() if v is not None}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    return obj


@dataclass(frozen=True)
class SystemConfig:
    """A dynamical system: a registered generator with params, or a trajectory file."""

    name: str
    generator: Optional[str] = None
    params: dict[str, Any] = field(default_factory=dict)
    input: Optional[str] = None
    seed: int = 0

    def __post_init__(self) -> None:
        if (self.generator is None) == (self.input is None):
            raise ConfigurationError(f"system {self.name!r} needs exactly one of generator or input")
        if self.generator is not None and self.generator not in GENERATORS:
            raise ConfigurationError(
                f"system {self.name!r}: unknown generator {self.generator!r}; "
                f"expected one of {sorted(GENERATORS)}"
            )


@dataclass(frozen=True)
class SplitConfig:
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = 0


@dataclass(frozen=True)
class SensitivityConfig:
    """One-at-a-time sweeps over anchor, selector and metric tolerances."""

    enabled: bool = False
    rho: tuple[float, ...] = (0.02, 0.05, 0.10)
    tau_pl: tuple[float, ...] = (0.02, 0.05, 0.10)
    kappa: tuple[float, ...] = (1.0, 1.5, 2.0)
    resamples: tuple[int, ...] = (100, 300, 500)
    eps: tuple[float, ...] = (0.02, 0.05, 0.10, 0.15)

    def variants(self) -> list[tuple[str, Union[int, float]]]:
        if not self.enabled:
            return []
        axes = ("rho", "tau_pl", "kappa", "resamples", "eps")
        return [(axis, value) for axis in axes for value in getattr(self, axis)]


@dataclass
class ExperimentConfig:
    """A whole experiment: systems, methods, seeds, budgets and batteries."""

    systems: list[SystemConfig]
    output_dir: str = "runs/default"
    grid: str = "1..16"
    methods: tuple[str, ...] = tuple(m.value for m in Method)
    seeds: tuple[int, ...] = (0, 1, 2)
    eps: tuple[float, ...] = (0.05,)
    workers: int = 1
    fail_fast: bool = False
    anchor_source: str = "clean"
    anchor_val_fraction: float = 0.2
    split: SplitConfig = field(default_factory=SplitConfig)
    summary: ProjectorSpec = field(default_factory=ProjectorSpec)
    anchors: AnchorSpec = field(default_factory=AnchorSpec)
    budgets: StageBudgets = field(default_factory=StageBudgets)
    selector: SelectorSpec = field(default_factory=SelectorSpec)
    asha: AshaSpec = field(default_factory=AshaSpec)
    perturbations: tuple[PerturbSpec, ...] = (PerturbSpec(),)
    representations: tuple[str, ...] = ()
    sensitivity: SensitivityConfig = field(default_factory=SensitivityConfig)
    schema_version: int = SCHEMA_VERSION
    base_dir: Path = field(default=Path("."), compare=False, repr=False)

    def __post_init__(self) -> None:
        self.validate()

    @property
    def candidate_grid(self) -> CandidateGrid:
        return CandidateGrid.parse(self.grid)

    @property
    def representation_list(self) -> tuple[str, ...]:
        return self.representations or (self.summary.method,)

    def validate(self) -> None:
        """Raise ConfigurationError on the first invalid value."""
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigurationError(
                f"unsupported schema_version {self.schema_version}; expected {SCHEMA_VERSION}"
            )
        if not self.systems:
            raise ConfigurationError("at least one [[systems]] entry is required")
        names = [s.name for s in self.systems]
        if len(set(names)) != len(names):
            raise ConfigurationError(f"duplicate system names: {names}")
        for system in self.systems:
            if system.input is not None and not self.resolve(system.input).exists():
                raise ConfigurationError(f"system {system.name!r}: input file {system.input} not found")
        valid_methods = [m.value for m in Method]
        for method in self.methods:
            if method not in valid_methods:
                raise ConfigurationError(f"unknown method {method!r}; expected one of {valid_methods}")
        if not self.methods:
            raise ConfigurationError("methods must not be empty")
        if not self.seeds:
            raise ConfigurationError("seeds must not be empty")
        if not self.eps or any(e < 0 for e in self.eps):
            raise ConfigurationError(f"eps must be a nonempty list of values >= 0, got {self.eps}")
        if self.workers < 1:
            raise ConfigurationError(f"workers must be >= 1, got {self.workers}")
        if self.anchor_source not in ANCHOR_SOURCES:
            raise ConfigurationError(
                f"anchor_source must be one of {ANCHOR_SOURCES}, got {self.anchor_source!r}"
            )
        if not 0.0 < self.anchor_val_fraction < 1.0:
            raise ConfigurationError("anchor_val_fraction must lie in (0, 1)")
        valid_repr = [m.value for m in ProjectionMethod]
        for rep in self.representations:
            if rep not in valid_repr:
                raise ConfigurationError(f"unknown representation {rep!r}; expected one of {valid_repr}")
        CandidateGrid.parse(self.grid)

    def resolve(self, path: str) -> Path:
        candidate = Path(path)
        return candidate if candidate.is_absolute() else self.base_dir / candidate

    # ------------------------------------------------------------------------
    # Loading and saving
    # ------------------------------------------------------------------------

    @classmethod
    def from_dict(cls, data: dict[str, Any], base_dir: Path = Path(".")) -> "ExperimentConfig":
        data = dict(data)
        top = {f.name for f in dataclasses.fields(cls)} - {"base_dir"}
        _check_keys(data, top, "")

        systems = []
        for i, raw in enumerate(data.pop("systems", [])):
            _check_keys(raw, {"name", "generator", "params", "input", "seed"}, f"systems[{i}]")
            systems.append(SystemConfig(**raw))

        anchors_raw = dict(data.pop("anchors", {}))
        boot = _section(BootstrapSpec, anchors_raw.pop("bootstrap", None), "anchors.bootstrap")
        anchors = _section(AnchorSpec, anchors_raw, "anchors", boot=boot)

        budgets_raw = dict(data.pop("budgets", {}))
        _check_keys(budgets_raw, {"stage1", "stage2", "full"}, "budgets")
        budgets = StageBudgets(
            stage1=_section(
                PilotBudget, {**STAGE1_BUDGET.to_dict(), **budgets_raw.get("stage1", {})}, "budgets.stage1"
            ),
            stage2=_section(
                PilotBudget, {**STAGE2_BUDGET.to_dict(), **budgets_raw.get("stage2", {})}, "budgets.stage2"
            ),
            full=_section(FullProtocol, budgets_raw.get("full"), "budgets.full"),
        )

        perturbations = tuple(
            _section(PerturbSpec, raw, f"perturbations[{i}]")
            for i, raw in enumerate(data.pop("perturbations", [{}]))
        )

        for key in ("methods", "seeds", "eps", "representations"):
            if key in data:
                data[key] = tuple(data[key])

        return cls(
            systems=systems,
            split=_section(SplitConfig, data.pop("split", None), "split"),
            summary=_section(ProjectorSpec, data.pop("summary", None), "summary"),
            anchors=anchors,
            budgets=budgets,
            selector=_section(SelectorSpec, data.pop("selector", None), "selector"),
            asha=_section(AshaSpec, data.pop("asha", None), "asha"),
            perturbations=perturbations,
            sensitivity=_section(SensitivityConfig, data.pop("sensitivity", None), "sensitivity"),
            base_dir=base_dir,
            **data,
        )

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ExperimentConfig":
        """Load a .toml or .json experiment file."""
        filepath = Path(path)
        if not filepath.exists():
            raise ConfigurationError(f"config file {filepath} not found")
        if filepath.suffix == ".json":
            data = json.loads(filepath.read_text())
        else:
            with open(filepath, "rb") as f:
                data = tomllib.load(f)
        return cls.from_dict(data, base_dir=filepath.parent)

    def to_dict(self) -> dict[str, Any]:
        data = to_plain(self)
        data.pop("base_dir", None)
        data["anchors"]["bootstrap"] = data["anchors"].pop("boot")
        return data

    def save(self, path: Union[str, Path]) -> Path:
        filepath = Path(path)
        filepath.parent.mkdir(parents=True, exist_ok=True)
        with open(filepath, "wb") as f:
            tomli_w.dump(self.to_dict(), f)
        return filepath

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON form."""
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
