"""Model constants, the mu parameterization and the closed-form derived constants.

mu is the primary bifurcation parameter; L0 is always derived from (mu, epsilon)
and rho4 is never stored here because it comes out of the steady-state solve.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from app.core.config import settings
from app.core.errors import ConfigError, DegenerateModelError, DomainError
from app.core.logging import logger

POSITIVE_FIELDS = (
    "k1",
    "k2",
    "K1",
    "K2",
    "rho1",
    "rho2",
    "rho3",
    "lam",
    "gamma",
    "D",
    "M0",
    "H0",
    "beta1",
    "beta2",
)


class Parameters(BaseModel):
    """All model constants plus epsilon and the bifurcation parameter mu."""

    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)

    set_name: str = "inline"
    k1: float
    k2: float
    K1: float
    K2: float
    rho1: float
    rho2: float
    rho3: float
    lam: float = Field(alias="lambda")
    gamma: float
    D: float
    M0: float
    H0: float
    beta1: float
    beta2: float
    epsilon: float
    mu: float

    @property
    def L0(self) -> float:
        """Blood LDL level implied by (mu, epsilon)."""
        return (self.rho3 * (self.gamma + self.H0) + self.epsilon * self.mu) / self.lam

    def with_mu(self, mu: float) -> "Parameters":
        return self.model_copy(update={"mu": float(mu)})

    def with_epsilon(self, epsilon: float) -> "Parameters":
        return self.model_copy(update={"epsilon": float(epsilon)})

    def with_values(self, **values: float) -> "Parameters":
        """Copy with arbitrary fields replaced; accepts `lam` for lambda."""
        unknown = set(values) - set(type(self).model_fields)
        if unknown:
            raise ConfigError("unknown parameter fields", fields=sorted(unknown))
        return self.model_copy(update=values)

    def to_file_dict(self) -> Dict[str, Union[str, float]]:
        return self.model_dump(by_alias=True)


def mu_from_L0(params: Parameters, L0: float) -> float:
    """Invert L0 = (rho3 (gamma + H0) + eps mu) / lambda for mu."""
    return (params.lam * L0 - params.rho3 * (params.gamma + params.H0)) / params.epsilon


@dataclass(frozen=True)
class Violation:
    constraint: str
    message: str


@dataclass(frozen=True)
class DerivedConstants:
    mu_c: float
    Lstar1: float
    Hstar1: float
    Fstar1: float
    rho4_leading: Optional[float]


def _uptake_denominator(params: Parameters) -> float:
    denom = params.lam * params.K1 + params.rho3 * (params.gamma + params.H0)
    if denom <= 0.0:
        raise DomainError(
            "lambda*K1 + rho3*(gamma+H0) must be positive", denominator=denom
        )
    return denom


def compute_mu_c(params: Parameters) -> float:
    """Critical threshold below which the radial steady state is not constructed."""
    denom = _uptake_denominator(params)
    if params.beta1 <= 0.0:
        raise DomainError("beta1 must be positive", beta1=params.beta1)
    c = params.gamma + params.H0
    brace = c * (params.lam * params.k1 * params.M0 / denom + params.rho1) - params.rho2 * params.H0
    return params.rho3 / params.beta1 * brace


def validate(params: Parameters) -> List[Violation]:
    """
    Check the standing assumptions of the analysis.

    Every violated constraint yields one report; the list is empty when the set is
    usable for every experiment, including the mu0/mu1 gap study.
    """
    violations: List[Violation] = []
    if not 0.0 < params.epsilon < 0.25:
        violations.append(
            Violation("epsilon_range", f"epsilon={params.epsilon} outside (0, 1/4)")
        )
    for name in POSITIVE_FIELDS:
        value = getattr(params, name)
        if not value > 0.0:
            violations.append(Violation(f"positive_{name}", f"{name}={value} must be > 0"))
    try:
        mu_c = compute_mu_c(params)
    except DomainError as exc:
        violations.append(Violation("mu_c_defined", str(exc)))
    else:
        if not params.mu > mu_c:
            violations.append(
                Violation("mu_above_mu_c", f"mu={params.mu} must exceed mu_c={mu_c}")
            )
    if params.beta1 == params.beta2:
        violations.append(
            Violation("β₁≠β₂", f"beta1 = beta2 = {params.beta1}; the mu0/mu1 gap vanishes")
        )
        logger.warning(f"Parameter set '{params.set_name}' has beta1 == beta2")
    return violations


def leading_order_coeffs(params: Parameters) -> DerivedConstants:
    """First-order coefficients of L*, H*, F* in epsilon together with mu_c and rho4."""
    denom = _uptake_denominator(params)
    for name in ("lam", "beta1", "beta2", "D"):
        if getattr(params, name) == 0.0:
            raise DomainError(f"{name} must be nonzero", **{name: 0.0})
    c = params.gamma + params.H0
    uptake = params.k1 * params.M0 / denom

    Lstar1 = params.mu / params.lam - params.rho3 * c / params.beta1 * (
        uptake + params.rho1 / params.lam
    )
    Hstar1 = -params.rho2 * params.H0 / params.beta1
    Fstar1 = params.rho3 * c / (params.beta2 * params.D) * uptake

    partial = DerivedConstants(
        mu_c=compute_mu_c(params),
        Lstar1=Lstar1,
        Hstar1=Hstar1,
        Fstar1=Fstar1,
        rho4_leading=None,
    )
    try:
        rho4 = rho4_leading(partial, params)
    except DegenerateModelError:
        # k1 = 0 leaves rho4 undetermined at leading order
        rho4 = None
    return DerivedConstants(
        mu_c=partial.mu_c, Lstar1=Lstar1, Hstar1=Hstar1, Fstar1=Fstar1, rho4_leading=rho4
    )


def rho4_leading(derived: DerivedConstants, params: Parameters) -> float:
    """O(1) part of rho4 from the solvability relation between the expansions."""
    numerator = params.lam * derived.Lstar1 - params.rho3 * derived.Hstar1
    if derived.Fstar1 == 0.0:
        if numerator == 0.0:
            return 0.0
        raise DegenerateModelError(
            "F*^1 = 0: without foam-cell production rho4 is undefined",
            numerator=numerator,
        )
    return params.M0 / (params.gamma + params.H0) * numerator / derived.Fstar1


def eta_leading(params: Parameters) -> float:
    """O(1) value of the pressure forcing constant eta_n, independent of n."""
    return params.mu / (params.gamma + params.H0)


def gap_constant(params: Parameters, derived: DerivedConstants, rho4: float) -> float:
    """epsilon^2 coefficient of dp1^1/dr - dp1^0/dr at the free boundary."""
    return (1.0 / params.beta1 - 1.0 / params.beta2) * rho4 * derived.Fstar1 / params.M0


def bifurcation_prediction(n: int, params: Parameters) -> float:
    """Leading-order mu_n for mode n; zero for n = 0, 1."""
    return (params.gamma + params.H0) * n * n * (1 - n * n)


def parameter_set_path(name_or_path: Union[str, Path]) -> Path:
    candidate = Path(name_or_path)
    if candidate.suffix in (".yaml", ".yml") and candidate.exists():
        return candidate
    return Path(settings.parameter_sets_dir) / f"{name_or_path}.yaml"


def parameters_from_mapping(data: object, source: str = "<inline>") -> Parameters:
    if not isinstance(data, dict):
        raise ConfigError("parameter file must hold a key-value mapping", source=source)
    try:
        return Parameters.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"invalid parameter set: {exc.errors()}", source=source) from exc


def load_parameter_set(name_or_path: Union[str, Path]) -> Parameters:
    """Load a named set from configs/parameter_sets or an explicit YAML path."""
    path = parameter_set_path(name_or_path)
    if not path.exists():
        raise ConfigError("parameter set not found", path=str(path))
    with open(path, "r", encoding="utf-8") as handle:
        data = yaml.safe_load(handle)
    params = parameters_from_mapping(data, source=str(path))
    logger.debug(f"Loaded parameter set '{params.set_name}' from {path}")
    return params


def parameter_set_index() -> Dict[str, List[str]]:
    """Which experiments each shipped parameter set is meant for."""
    path = Path(settings.parameter_sets_dir) / "index.yaml"
    if not path.exists():
        return {}
    with open(path, "r", encoding="utf-8") as handle:
        data = yaml.safe_load(handle) or {}
    return {str(k): list(v) for k, v in data.items()}
