"""Experiment descriptions read from YAML."""

from pathlib import Path
from typing import Dict, List, Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from app.core.config import settings
from app.core.errors import ConfigError
from app.model.params import Parameters, load_parameter_set, parameters_from_mapping

ExperimentKind = Literal["steady", "modes", "mu_sweep", "gap", "distinctness", "lemma_suite"]


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str
    kind: ExperimentKind
    parameter_set: Optional[str] = None
    parameters: Optional[Dict[str, Union[float, str]]] = None
    overrides: Dict[str, float] = Field(default_factory=dict)

    epsilons: List[float] = Field(default_factory=list)
    modes: List[int] = Field(default_factory=lambda: [0, 1])
    grid: List[int] = Field(default_factory=lambda: [settings.grid_n])
    mus: List[float] = Field(default_factory=list)
    n_max: int = Field(default=1, ge=1)
    tau_fractions: List[float] = Field(default_factory=lambda: [0.1, 0.05, 0.025])
    samples: int = Field(default=1000, ge=1)

    out: Path = settings.output_dir
    seed: int = settings.seed
    jobs: int = Field(default=settings.jobs, ge=1)

    @field_validator("epsilons")
    @classmethod
    def _ladder(cls, values: List[float]) -> List[float]:
        for eps in values:
            if not 0.0 < eps < 1.0:
                raise ValueError(f"epsilon {eps} outside (0, 1)")
        if any(b >= a for a, b in zip(values, values[1:])):
            raise ValueError("epsilon ladder must be strictly decreasing")
        return values

    @field_validator("grid")
    @classmethod
    def _grid_sizes(cls, values: List[int]) -> List[int]:
        if not values:
            raise ValueError("at least one grid size is required")
        for N in values:
            if N < settings.grid_min_nodes or N % 2 == 0:
                raise ValueError(f"grid size {N} must be odd and >= {settings.grid_min_nodes}")
        return values

    @field_validator("modes")
    @classmethod
    def _modes(cls, values: List[int]) -> List[int]:
        if any(n < 0 for n in values):
            raise ValueError("mode indices must be nonnegative")
        return values

    @model_validator(mode="after")
    def _one_parameter_source(self) -> "ExperimentConfig":
        if self.kind != "lemma_suite" and (self.parameter_set is None) == (self.parameters is None):
            raise ValueError("give exactly one of parameter_set or parameters")
        return self

    def resolve_parameters(self) -> Optional[Parameters]:
        if self.parameter_set is not None:
            params = load_parameter_set(self.parameter_set)
        elif self.parameters is not None:
            params = parameters_from_mapping(dict(self.parameters), source=f"experiment {self.name}")
        else:
            return None
        return params.with_values(**self.overrides) if self.overrides else params

    def ladder(self, params: Optional[Parameters]) -> List[float]:
        if self.epsilons:
            return list(self.epsilons)
        return [params.epsilon] if params is not None else [0.04, 0.02, 0.01]

    @property
    def run_dir(self) -> Path:
        return Path(self.out) / self.name


def load_experiment_config(path: Union[str, Path], **cli_overrides) -> ExperimentConfig:
    """Read an experiment YAML; non-None keyword overrides (out, grid, seed, jobs) win."""
    path = Path(path)
    if not path.exists():
        raise ConfigError("experiment config not found", path=str(path))
    with open(path, "r", encoding="utf-8") as handle:
        data = yaml.safe_load(handle)
    if not isinstance(data, dict):
        raise ConfigError("experiment config must be a mapping", path=str(path))
    for key, value in cli_overrides.items():
        if value is not None:
            data[key] = [value] if key == "grid" else value
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"invalid experiment config: {exc.errors()}", path=str(path)) from exc
