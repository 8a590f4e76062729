"""Damped Newton driver for the coupled discrete systems."""

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Union

import numpy as np
import scipy.sparse as sp

from app.core.config import settings
from app.core.errors import ConvergenceError, DomainError, SolvabilityError
from app.core.logging import logger
from app.numerics.bvp import factorize

Matrix = Union[np.ndarray, sp.spmatrix]


@dataclass(frozen=True)
class DampingPolicy:
    """Backtracking by halving until the sup-norm residual decreases."""

    backtrack: bool = True
    min_step: float = settings.newton_min_step
    sufficient_decrease: float = 1e-4


@dataclass
class NewtonReport:
    iterations: int = 0
    residual_norm: float = np.inf
    converged: bool = False
    residual_history: List[float] = field(default_factory=list)
    step_history: List[float] = field(default_factory=list)


@dataclass(frozen=True, eq=False)
class NewtonResult:
    x: np.ndarray
    report: NewtonReport


def _equilibrate(jac: Matrix):
    """Column- then row-scaled copy of `jac` with unit max-abs rows, plus both factors."""
    if sp.issparse(jac):
        jac = sp.csc_matrix(jac)
        col = np.asarray(abs(jac).max(axis=0).todense()).ravel()
        cols = 1.0 / np.where(col > 0.0, col, 1.0)
        scaled = jac @ sp.diags(cols)
        row = np.asarray(abs(scaled).max(axis=1).todense()).ravel()
        rows = 1.0 / np.where(row > 0.0, row, 1.0)
        return sp.csc_matrix(sp.diags(rows) @ scaled), rows, cols
    jac = np.atleast_2d(np.asarray(jac, dtype=float))
    col = np.max(np.abs(jac), axis=0)
    cols = 1.0 / np.where(col > 0.0, col, 1.0)
    scaled = jac * cols
    row = np.max(np.abs(scaled), axis=1)
    rows = 1.0 / np.where(row > 0.0, row, 1.0)
    return scaled * rows[:, None], rows, cols


def _solve_step(jac: Matrix, rhs: np.ndarray) -> np.ndarray:
    scaled, rows, cols = _equilibrate(jac)
    if sp.issparse(scaled):
        return cols * factorize(scaled, "Newton Jacobian").solve(rows * rhs)
    try:
        return cols * np.linalg.solve(scaled, rows * rhs)
    except np.linalg.LinAlgError as exc:
        raise SolvabilityError(f"Newton Jacobian is singular: {exc}") from exc


def _sup(values: np.ndarray) -> float:
    return float(np.max(np.abs(values))) if values.size else 0.0


def _relative_step(dx: np.ndarray, x: np.ndarray) -> float:
    return _sup(dx / np.maximum(1.0, np.abs(x)))


def newton_solve(
    residual: Callable[[np.ndarray], np.ndarray],
    jacobian: Callable[[np.ndarray], Matrix],
    x0: np.ndarray,
    damping: Optional[DampingPolicy] = None,
    tol: float = settings.newton_tol,
    max_iter: int = settings.newton_max_iter,
    scale: Optional[float] = None,
    polish: bool = False,
    step_tol: float = settings.newton_step_tol,
) -> NewtonResult:
    """
    Solve residual(x) = 0 starting from x0.

    Convergence means sup|residual| <= tol * scale, with scale defaulting to
    max(1, sup|x0|). With `polish`, full steps continue after that until the
    relative update max|dx_i| / max(1, |x_i|) drops below `step_tol` or stops
    shrinking, so unknowns the residual barely sees are resolved too. Raises
    ConvergenceError carrying the last iterate otherwise.
    """
    damping = damping or DampingPolicy()
    x = np.array(x0, dtype=float).ravel()
    if not np.all(np.isfinite(x)):
        raise ConvergenceError("initial guess is not finite", last_iterate=x)
    scale = max(1.0, _sup(x)) if scale is None else scale
    target = tol * scale

    report = NewtonReport()
    F = np.atleast_1d(np.asarray(residual(x), dtype=float))
    norm = _sup(F)
    report.residual_history.append(norm)

    for k in range(max_iter + 1):
        report.iterations = k
        report.residual_norm = norm
        if norm <= target:
            report.converged = True
            if polish:
                x, F, norm = _refine(residual, jacobian, x, F, norm, target, step_tol, report)
                report.residual_norm = norm
            logger.debug(f"Newton converged in {report.iterations} iterations, residual {norm:.3e}")
            return NewtonResult(x, report)
        if k == max_iter:
            break

        dx = _solve_step(jacobian(x), -F)
        step = 1.0
        while True:
            trial = x + step * dx
            try:
                F_trial = np.atleast_1d(np.asarray(residual(trial), dtype=float))
                trial_norm = _sup(F_trial)
            except DomainError:
                trial_norm = np.inf
            decreased = trial_norm <= (1.0 - damping.sufficient_decrease * step) * norm
            if not damping.backtrack or decreased or step <= damping.min_step:
                break
            step *= 0.5
        if not np.isfinite(trial_norm):
            raise ConvergenceError(
                "Newton step left the admissible region", last_iterate=x, iterations=k, residual=norm
            )
        x, F, norm = trial, F_trial, trial_norm
        report.residual_history.append(norm)
        report.step_history.append(step)
        logger.debug(f"Newton iteration {k + 1}: step {step:g}, residual {norm:.3e}")

    logger.error(f"Newton failed after {max_iter} iterations, residual {norm:.3e}")
    raise ConvergenceError(
        "Newton iteration did not converge",
        last_iterate=x,
        iterations=max_iter,
        residual=norm,
        target=target,
    )


def _refine(residual, jacobian, x, F, norm, target, step_tol, report):
    previous = np.inf
    for _ in range(settings.newton_refine_steps):
        try:
            dx = _solve_step(jacobian(x), -F)
            trial = x + dx
            F_trial = np.atleast_1d(np.asarray(residual(trial), dtype=float))
        except (DomainError, SolvabilityError):
            break
        trial_norm = _sup(F_trial)
        if trial_norm > max(norm, target):
            break
        size = _relative_step(dx, x)
        x, F, norm = trial, F_trial, trial_norm
        report.iterations += 1
        report.residual_history.append(norm)
        report.step_history.append(1.0)
        if size <= step_tol or size >= 0.5 * previous:
            break
        previous = size
    return x, F, norm
