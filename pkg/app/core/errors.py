"""Exception hierarchy shared by every layer of the toolkit."""

from typing import Any, Dict, List, Optional


class PlaqueError(Exception):
    """Base error carrying a flat context dict for structured reporting."""

    kind = "error"

    def __init__(self, message: str, **context: Any):
        super().__init__(message)
        self.message = message
        self.context: Dict[str, Any] = dict(context)

    def with_context(self, **context: Any) -> "PlaqueError":
        for key, value in context.items():
            self.context.setdefault(key, value)
        return self

    def as_dict(self) -> Dict[str, Any]:
        payload: Dict[str, Any] = {"error": self.kind, "message": self.message}
        for key, value in self.context.items():
            if isinstance(value, (int, float, str, bool)) or value is None:
                payload[key] = value
            else:
                payload[key] = repr(value)
        return payload

    def __str__(self) -> str:
        if not self.context:
            return self.message
        details = ", ".join(f"{k}={v!r}" for k, v in self.context.items() if not _is_bulky(v))
        return f"{self.message} ({details})" if details else self.message


def _is_bulky(value: Any) -> bool:
    return hasattr(value, "shape") or (isinstance(value, (list, tuple)) and len(value) > 8)


class ConfigError(PlaqueError):
    kind = "config_error"


class DomainError(PlaqueError):
    kind = "domain_error"


class DegenerateModelError(DomainError):
    kind = "degenerate_model"


class UnsupportedModeError(PlaqueError):
    kind = "unsupported_mode"


class UsageError(PlaqueError):
    kind = "usage_error"


class SolvabilityError(PlaqueError):
    kind = "solvability_error"


class ConvergenceError(PlaqueError):
    kind = "convergence_failure"

    def __init__(self, message: str, last_iterate: Optional[Any] = None, **context: Any):
        super().__init__(message, **context)
        self.last_iterate = last_iterate


class AccuracyError(PlaqueError):
    kind = "accuracy_error"


class RootNotFoundError(PlaqueError):
    kind = "root_not_found"

    def __init__(self, message: str, scan_trace: Optional[List[Any]] = None, **context: Any):
        super().__init__(message, **context)
        self.scan_trace = list(scan_trace or [])

    def as_dict(self) -> Dict[str, Any]:
        payload = super().as_dict()
        payload["scan_trace"] = [[float(mu), float(g)] for mu, g in self.scan_trace]
        return payload


class HypothesisViolation(PlaqueError):
    kind = "hypothesis_violation"

    def __init__(self, hypothesis: str, message: str, **context: Any):
        super().__init__(message, hypothesis=hypothesis, **context)
        self.hypothesis = hypothesis


class ManifestError(PlaqueError):
    kind = "manifest_error"


# Groups used by the run script to choose an exit status
SOLVER_ERRORS = (
    DomainError,
    UnsupportedModeError,
    SolvabilityError,
    ConvergenceError,
    AccuracyError,
    RootNotFoundError,
    UsageError,
)
