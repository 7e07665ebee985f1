"""Experiment configuration: a YAML file validated by pydantic models.

Unknown keys anywhere in the file are rejected. Every experiment has an
optional section named after it holding its own knobs; sections belonging to
other experiments may be present and are validated but ignored.
"""

from __future__ import annotations

from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from ..errors import ConfigError
from ..estimates import CombinationSpec
from ..lattice import ModelParams

EXPERIMENTS = (
    "spectrum", "lyapunov", "dos", "gradient_floor", "level_stats",
    "sign_scan", "moments", "decay", "renorm",
)
ExperimentName = Literal[
    "spectrum", "lyapunov", "dos", "gradient_floor", "level_stats",
    "sign_scan", "moments", "decay", "renorm",
]
NEEDS_SPEC = {"gradient_floor", "sign_scan", "moments"}


class Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ModelSection(Strict):
    size: int = Field(100, ge=2)
    disorder: float = Field(1.0, ge=0.0)
    boundary: Literal["open"] = "open"

    def params(self, size: int | None = None) -> ModelParams:
        return ModelParams(size or self.size, self.disorder, self.boundary)


class SpecSection(Strict):
    terms: list[tuple[int, int]]

    @field_validator("terms")
    @classmethod
    def _valid(cls, terms):
        CombinationSpec(tuple(terms))
        return terms

    def combination(self) -> CombinationSpec:
        return CombinationSpec(tuple(self.terms))


class RenormSection(Strict):
    beta: float = Field(0.0, ge=0.0)
    center: Optional[int] = None   # default: box center
    const: float = Field(1.0, gt=0.0)


class CurveSection(Strict):
    """Transfer-matrix gamma(E) grid used to look up gamma at eigenvalues."""
    energy_step: float = Field(0.1, gt=0.0)
    steps: int = Field(200_000, ge=10_000)
    renorm_every: int = Field(32, ge=1)


class SpectrumSection(Strict):
    solver: Literal["mrrr", "ql"] = "mrrr"
    tol: Optional[float] = Field(None, gt=0.0)
    list_energies: int = Field(10, ge=0)
    bin_width: float = Field(0.02, gt=0.0)


class LyapunovSection(Strict):
    energies: list[float] = [-1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5]
    steps: int = Field(1_000_000, ge=10_000)
    bin_width: float = Field(0.02, gt=0.0)
    renorm_every: int = Field(32, ge=1)


class DosSection(Strict):
    bin_width: float = Field(0.02, gt=0.0)


class GradientFloorSection(Strict):
    offsets: list[int] = [10, 20, 30]
    epsilon_slack: float = Field(0.1, gt=0.0)
    C: Optional[float] = Field(None, ge=0.0)


class LevelStatsSection(Strict):
    interval_lengths: Optional[list[float]] = None
    decade_points: int = Field(6, ge=2)
    bin_width: float = Field(0.02, gt=0.0)


class SignScanSection(Strict):
    site: Optional[int] = None     # default: 20 sites beyond the rightmost center
    points: int = Field(200, ge=2)
    refine: int = Field(4, ge=1)


class MomentsSection(Strict):
    s: float = Field(0.5, gt=0.0, lt=1.0)
    delta: float = Field(0.05, ge=0.0, lt=1.0)
    sizes: Optional[list[int]] = None


class DecaySection(Strict):
    epsilon_slack: float = Field(0.1, gt=0.0)
    thresholds: list[int] = [10, 20, 30]
    rank_window: tuple[float, float] = (0.25, 0.75)


class RenormExperimentSection(Strict):
    distances: list[int] = [5, 10, 15, 20]
    s: float = Field(0.5, gt=0.0, lt=1.0)
    delta: float = Field(0.05, ge=0.0, lt=1.0)
    x_delta: int = Field(10, ge=1)
    floor_delta: float = Field(0.05, gt=0.0, lt=1.0)
    chebyshev_thresholds: list[float] = [1e-4, 1e-3, 1e-2, 1e-1]


class OutputSection(Strict):
    path: Optional[str] = None
    csv: Optional[str] = None


class ExperimentConfig(Strict):
    experiment: ExperimentName
    model: ModelSection = ModelSection()
    realizations: int = Field(100, ge=1)
    master_seed: int = Field(0, ge=0, lt=2**64)
    first_index: int = Field(0, ge=0)
    threads: int = Field(1, ge=1)
    failure_budget: float = Field(0.01, ge=0.0, le=1.0)
    spec: Optional[SpecSection] = None
    renorm: RenormSection = RenormSection()
    curve: CurveSection = CurveSection()
    output: OutputSection = OutputSection()

    spectrum: SpectrumSection = SpectrumSection()
    lyapunov: LyapunovSection = LyapunovSection()
    dos: DosSection = DosSection()
    gradient_floor: GradientFloorSection = GradientFloorSection()
    level_stats: LevelStatsSection = LevelStatsSection()
    sign_scan: SignScanSection = SignScanSection()
    moments: MomentsSection = MomentsSection()
    decay: DecaySection = DecaySection()
    renorm_experiment: RenormExperimentSection = RenormExperimentSection()

    def check_required(self) -> "ExperimentConfig":
        if self.experiment in NEEDS_SPEC and self.spec is None:
            raise ConfigError(f"experiment {self.experiment!r} requires a 'spec' section")
        if self.spec is not None:
            sizes = self.moments.sizes if self.experiment == "moments" and self.moments.sizes else [self.model.size]
            for size in sizes:
                for site in self.spec.combination().sites:
                    if not 0 <= site < size:
                        raise ConfigError(f"spec site {site} lies outside a box of {size} sites")
        return self

    @property
    def section(self) -> BaseModel:
        name = "renorm_experiment" if self.experiment == "renorm" else self.experiment
        return getattr(self, name)

    def echo(self) -> dict:
        """Config as plain JSON-compatible data (output paths and threads excluded,
        so payloads do not depend on where or how a run was executed)."""
        data = self.model_dump(mode="json", exclude={"output", "threads"})
        return data


def parse_config(data: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data).check_required()
    except ValidationError as exc:
        raise ConfigError(str(exc)) from None
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path: str | Path) -> dict:
    """Read a YAML config into a plain mapping (validation happens in parse_config)."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed YAML in {path}: {exc}") from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("config file must contain a mapping at top level")
    return data


def config_schema() -> dict:
    return ExperimentConfig.model_json_schema()
