"""
Closed-form solutions of L_n psi = eta + f(r), psi'(1) = 0 on [1 - eps, 1] for n = 0, 1.

psi = psi1 + homogeneous part (coefficient A) + K[f], with A fixed by either a Robin
condition -psi' + beta psi = G or the Dirichlet value (1 - n^2)/(1 - eps)^2 at the
inner boundary. These formulas serve as an independent oracle for the finite
difference solvers.
"""

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.polynomial import Polynomial
from scipy.integrate import IntegrationWarning, quad
from tqdm import tqdm

from app.core.config import settings
from app.core.errors import AccuracyError, DomainError, UnsupportedModeError, UsageError
from app.core.logging import logger
from app.numerics.bvp import solve_bvp
from app.numerics.convergence import observed_orders
from app.numerics.grid import BoundaryCondition, Grid, RadialField, Side

Forcing = Union[Polynomial, Callable[[float], float], None]


def _require_mode(n: int) -> None:
    if n not in (0, 1):
        raise UnsupportedModeError("closed forms exist for n = 0 and n = 1 only", n=n)


@dataclass(frozen=True)
class RobinInner:
    """-psi'(1 - eps) + beta psi(1 - eps) = G."""

    beta: float
    G: float


@dataclass(frozen=True)
class DirichletInner:
    """psi(1 - eps) = (1 - n^2)/(1 - eps)^2."""


@dataclass(frozen=True)
class ModelProblem:
    n: int
    eta: float
    epsilon: float
    inner: Union[RobinInner, DirichletInner]
    f: Forcing = None

    def __post_init__(self):
        _require_mode(self.n)
        if not 0.0 < self.epsilon < 1.0:
            raise DomainError("epsilon must lie in (0, 1)", epsilon=self.epsilon)

    @property
    def r_inner(self) -> float:
        return 1.0 - self.epsilon

    def forcing(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        if self.f is None:
            return np.zeros_like(r)
        if isinstance(self.f, (Polynomial, TrigPolynomial)):
            return np.asarray(self.f(r), dtype=float)
        return np.vectorize(self.f, otypes=[float])(r)


def eval_psi1(n: int, eta: float, r, derivative: int = 0):
    """psi1 (or its first three derivatives), the particular solution with psi1(1) = psi1'(1) = 0."""
    _require_mode(n)
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0.0) or np.any(r > 1.0):
        raise DomainError("psi1 is evaluated on (0, 1]", r_min=float(np.min(r)))
    if n == 1:
        forms = (
            lambda x: -1.0 / (6.0 * x) + x / 2.0 - x**2 / 3.0,
            lambda x: 1.0 / (6.0 * x**2) + 0.5 - 2.0 * x / 3.0,
            lambda x: -1.0 / (3.0 * x**3) - 2.0 / 3.0,
            lambda x: 1.0 / x**4,
        )
    else:
        forms = (
            lambda x: (1.0 - x**2) / 4.0 + np.log(x) / 2.0,
            lambda x: -x / 2.0 + 1.0 / (2.0 * x),
            lambda x: -0.5 - 1.0 / (2.0 * x**2),
            lambda x: 1.0 / x**3,
        )
    if derivative not in range(4):
        raise UsageError("psi1 derivatives are available up to order 3", derivative=derivative)
    value = eta * forms[derivative](r)
    return float(value) if value.ndim == 0 else value


def _quad(integrand: Callable[[float], float], a: float, b: float) -> float:
    if a == b:
        return 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("error", IntegrationWarning)
        try:
            value, _ = quad(
                integrand,
                a,
                b,
                epsabs=settings.quad_tol,
                epsrel=settings.quad_tol,
                limit=settings.quad_limit,
            )
        except IntegrationWarning as exc:
            raise AccuracyError(f"kernel quadrature did not converge: {exc}", a=a, b=b) from exc
    return value


def _kernel_polynomial(n: int, f: Polynomial, r: float, r0: float, derivative: bool) -> float:
    x = Polynomial([0.0, 1.0])
    if n == 1:
        I1 = f.integ()
        I2 = (x * x * f).integ()
        outer = I1(1.0) - I1(r)
        inner = I2(r) - I2(r0)
        if derivative:
            return float(0.5 * outer - inner / (2.0 * r * r))
        return float(0.5 * r * outer + inner / (2.0 * r))
    Q = (x * f).integ()
    if derivative:
        return float((Q(1.0) - Q(r)) / r)
    R = Polynomial(Q.coef[1:]).integ() if Q.coef.size > 1 else Polynomial([0.0])
    return float(np.log(r) * Q(1.0) + R(1.0) - R(r))


def kernel_K(n: int, f: Forcing, r: float, epsilon: float, derivative: bool = False) -> float:
    """
    Variation-of-parameters particular solution K[f] (or its derivative) at r.

    n = 1: (r/2) int_r^1 f + (1/(2r)) int_{1-eps}^r s^2 f
    n = 0: -int_r^1 log(s/r) s f(s) ds
    """
    _require_mode(n)
    r0 = 1.0 - epsilon
    if not r0 - 1e-14 <= r <= 1.0 + 1e-14:
        raise DomainError("kernel is evaluated on [1 - eps, 1]", r=r, epsilon=epsilon)
    r = min(max(r, r0), 1.0)
    if f is None:
        return 0.0
    if isinstance(f, Polynomial):
        return _kernel_polynomial(n, f, r, r0, derivative)
    if n == 1:
        outer = _quad(f, r, 1.0)
        inner = _quad(lambda s: s * s * f(s), r0, r)
        if derivative:
            return 0.5 * outer - inner / (2.0 * r * r)
        return 0.5 * r * outer + inner / (2.0 * r)
    if derivative:
        return _quad(lambda s: s * f(s), r, 1.0) / r
    return -_quad(lambda s: np.log(s / r) * s * f(s), r, 1.0)


def coefficient_A(problem: ModelProblem) -> float:
    """Coefficient of the homogeneous part fixed by the inner boundary condition."""
    n, eta, eps = problem.n, problem.eta, problem.epsilon
    r0 = problem.r_inner
    psi1 = eval_psi1(n, eta, r0)
    dpsi1 = eval_psi1(n, eta, r0, derivative=1)
    K0 = kernel_K(n, problem.f, r0, eps)
    dK0 = kernel_K(n, problem.f, r0, eps, derivative=True)
    dK1 = kernel_K(n, problem.f, 1.0, eps, derivative=True) if n == 1 else 0.0

    if isinstance(problem.inner, RobinInner):
        beta, G = problem.inner.beta, problem.inner.G
        numerator = G + dpsi1 - beta * psi1 - beta * K0 + dK0
        if n == 1:
            numerator -= dK1 / r0**2 + beta * dK1 / r0
            denominator = -1.0 + 1.0 / r0**2 + beta * r0 + beta / r0
            if denominator == 0.0:
                raise DomainError("Robin coefficient is singular", beta=beta, epsilon=eps)
            return numerator / denominator
        if beta == 0.0:
            raise DomainError("Robin coefficient for n = 0 needs beta != 0", beta=beta)
        return numerator / beta

    if n == 1:
        return (-psi1 - K0 - dK1 / r0) / (r0 + 1.0 / r0)
    return 1.0 / r0**2 - psi1 - K0


def _kernel_on(problem: ModelProblem, r: np.ndarray, derivative: bool) -> np.ndarray:
    return np.array([kernel_K(problem.n, problem.f, float(x), problem.epsilon, derivative) for x in r])


def assemble_psi(problem: ModelProblem, grid: Optional[Grid] = None) -> RadialField:
    """Sample the closed-form psi on `grid` (default: settings.grid_n nodes)."""
    grid = grid or Grid(problem.epsilon)
    if not np.isclose(grid.epsilon, problem.epsilon, rtol=0.0, atol=1e-15):
        raise UsageError("grid and problem disagree on epsilon", grid=grid.epsilon, problem=problem.epsilon)
    r = grid.nodes
    A = coefficient_A(problem)
    K = _kernel_on(problem, r, derivative=False)
    psi = eval_psi1(problem.n, problem.eta, r)
    if problem.n == 1:
        dK1 = kernel_K(1, problem.f, 1.0, problem.epsilon, derivative=True)
        psi = psi + A * r + (A + dK1) / r + K
    else:
        psi = psi + A + K
    return RadialField(grid, psi, "psi")


def psi_inner_slope(problem: ModelProblem) -> float:
    """psi'(1 - eps) from the closed form."""
    r0, eps = problem.r_inner, problem.epsilon
    A = coefficient_A(problem)
    slope = eval_psi1(problem.n, problem.eta, r0, derivative=1)
    slope += kernel_K(problem.n, problem.f, r0, eps, derivative=True)
    if problem.n == 1:
        dK1 = kernel_K(1, problem.f, 1.0, eps, derivative=True)
        slope += A - (A + dK1) / r0**2
    return slope


def psi_leading(problem: ModelProblem) -> float:
    """First-order constant value of psi under the Robin condition."""
    if not isinstance(problem.inner, RobinInner):
        raise UsageError("the constant expansion holds for the Robin variant")
    beta, G, eta, eps = problem.inner.beta, problem.inner.G, problem.eta, problem.epsilon
    if problem.n == 1:
        return G / beta + eps * (eta / beta - G / beta**2)
    return G / beta + eps * eta / beta


def A_leading(problem: ModelProblem) -> float:
    if not isinstance(problem.inner, RobinInner):
        raise UsageError("the coefficient expansion holds for the Robin variant")
    beta, G, eta, eps = problem.inner.beta, problem.inner.G, problem.eta, problem.epsilon
    if problem.n == 1:
        return G / (2.0 * beta) + eps * (eta / (2.0 * beta) - G / (2.0 * beta**2))
    return (G + eps * eta) / beta


def inner_slope_leading(eta: float, epsilon: float) -> float:
    """eps eta + eps^2 eta / 2, the inner slope under the Dirichlet variant."""
    return epsilon * eta + 0.5 * epsilon**2 * eta


@dataclass(frozen=True)
class CrosscheckReport:
    N: int
    epsilon: float
    max_discrepancy: float


def crosscheck_with_bvp(problem: ModelProblem, grid: Optional[Grid] = None) -> CrosscheckReport:
    """Solve the same problem by finite differences and compare with the closed form."""
    grid = grid or Grid(problem.epsilon)
    closed = assemble_psi(problem, grid)
    if isinstance(problem.inner, RobinInner):
        inner = BoundaryCondition.transfer(problem.inner.beta, problem.inner.G)
    else:
        inner = BoundaryCondition.dirichlet(Side.INNER, (1 - problem.n**2) / grid.r_inner**2)
    numeric = solve_bvp(
        grid,
        problem.n,
        problem.eta + problem.forcing(grid.nodes),
        inner,
        BoundaryCondition.neumann(Side.OUTER),
        name="psi",
    )
    discrepancy = float(np.max(np.abs(numeric.values - closed.values)))
    logger.debug(f"Closed form vs BVP (n={problem.n}, N={grid.N}): {discrepancy:.3e}")
    return CrosscheckReport(grid.N, problem.epsilon, discrepancy)


@dataclass(frozen=True)
class TrigPolynomial:
    """
    sum_k a_k cos(k w (r - origin)) + b_k sin(k w (r - origin)), w = 2 pi / period.

    The coefficient sum bounds the sup norm.
    """

    cos_coeffs: Tuple[float, ...]
    sin_coeffs: Tuple[float, ...]
    origin: float = 0.0
    period: float = 1.0

    def __call__(self, r):
        theta = 2.0 * np.pi * (np.asarray(r, dtype=float) - self.origin) / self.period
        total = np.zeros_like(theta)
        for k, (a, b) in enumerate(zip(self.cos_coeffs, self.sin_coeffs)):
            total = total + a * np.cos(k * theta) + b * np.sin(k * theta)
        return float(total) if total.ndim == 0 else total

    @property
    def coefficient_bound(self) -> float:
        return float(np.sum(np.abs(self.cos_coeffs)) + np.sum(np.abs(self.sin_coeffs)))

    def scaled(self, factor: float) -> "TrigPolynomial":
        return TrigPolynomial(
            tuple(factor * a for a in self.cos_coeffs),
            tuple(factor * b for b in self.sin_coeffs),
            self.origin,
            self.period,
        )


def random_trig_polynomial(
    rng: np.random.Generator,
    degree: int = 6,
    origin: float = 0.0,
    period: float = 1.0,
    bound: float = 1.0,
) -> TrigPolynomial:
    """Random trig polynomial of the given degree with coefficient sum equal to `bound`."""
    a = rng.uniform(-1.0, 1.0, degree + 1)
    b = rng.uniform(-1.0, 1.0, degree + 1)
    b[0] = 0.0
    total = np.sum(np.abs(a)) + np.sum(np.abs(b))
    scale = bound / total
    return TrigPolynomial(tuple(a * scale), tuple(b * scale), origin, period)


@dataclass(frozen=True)
class KernelBoundReport:
    n: int
    epsilon: float
    samples: int
    violations: int
    worst_ratio: float
    failures: Tuple[int, ...] = field(default=())


def kernel_bound_check(
    n: int,
    epsilon: float,
    samples: int = 1000,
    seed: int = settings.seed,
    points: int = 5,
    slack: float = 1e-10,
) -> KernelBoundReport:
    """
    |K[f]| and |K[f]'| against c * eps * ||f||_inf (c = 1/2 for n = 1, 1 for n = 0)
    over random oscillatory trig polynomials on the annulus.
    """
    _require_mode(n)
    rng = np.random.default_rng(seed)
    factor = 0.5 if n == 1 else 1.0
    r0 = 1.0 - epsilon
    sample_r = np.linspace(r0, 1.0, points)
    dense = np.linspace(r0, 1.0, 2001)
    violations, failures, worst = 0, [], 0.0
    for index in tqdm(range(samples), desc=f"kernel bounds n={n}", disable=not settings.progress):
        f = random_trig_polynomial(rng, origin=r0, period=epsilon)
        sup = float(np.max(np.abs(f(dense))))
        bound = factor * epsilon * sup + slack
        largest = max(
            max(abs(kernel_K(n, f, x, epsilon)), abs(kernel_K(n, f, x, epsilon, derivative=True)))
            for x in sample_r
        )
        worst = max(worst, largest / bound)
        if largest > bound:
            violations += 1
            failures.append(index)
    if violations:
        logger.warning(f"Kernel bound violated in {violations} of {samples} samples (n={n})")
    return KernelBoundReport(n, epsilon, samples, violations, worst, tuple(failures))


@dataclass(frozen=True)
class TaylorReport:
    epsilons: Tuple[float, ...]
    value_errors: Tuple[float, ...]
    slope_errors: Tuple[float, ...]
    value_orders: Tuple[float, ...]
    slope_orders: Tuple[float, ...]


def taylor_endpoint_errors(n: int, eta: float, epsilons: Sequence[float]) -> TaylorReport:
    """Errors of psi1(1-eps) ~ -eta eps^2/2 and psi1'(1-eps) ~ eta(eps + eps^2/2)."""
    eps = np.asarray(epsilons, dtype=float)
    values = np.abs(eval_psi1(n, eta, 1.0 - eps) + eta * eps**2 / 2.0)
    slopes = np.abs(eval_psi1(n, eta, 1.0 - eps, derivative=1) - inner_slope_leading(eta, eps))
    return TaylorReport(
        tuple(eps),
        tuple(values),
        tuple(slopes),
        tuple(observed_orders(eps, values)),
        tuple(observed_orders(eps, slopes)),
    )
