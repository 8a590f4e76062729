"""
Bifurcation points mu_n: roots of g_n(mu) = p*''(1 - eps) + p1^n'(1 - eps).

Every evaluation re-solves the steady state at mu, so rho4 follows mu along the
search. Roots are bracketed, bisected, then polished by safeguarded secant steps.
"""

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from app.core.config import settings
from app.core.errors import (
    ConvergenceError,
    HypothesisViolation,
    PlaqueError,
    RootNotFoundError,
)
from app.core.logging import logger
from app.model.linearized import ModeSolution, solve_mode
from app.model.params import (
    Parameters,
    bifurcation_prediction,
    compute_mu_c,
    gap_constant,
    leading_order_coeffs,
)
from app.model.steady_state import SteadyState, solve_steady_state
from app.numerics.convergence import (
    loglog_slope,
    observed_orders,
    refinement_orders,
    richardson_differences,
)
from app.numerics.grid import Grid


@dataclass(frozen=True, eq=False)
class ModeEvaluation:
    """One steady solve at mu with the requested modes solved around it."""

    mu: float
    state: SteadyState
    modes: Dict[int, ModeSolution]

    def g(self, n: int) -> float:
        return self.state.diagnostics.d2p + self.modes[n].dp1n_inner

    @property
    def scale(self) -> float:
        return max(1.0, abs(self.state.diagnostics.d2p))


def _grid_for(params: Parameters, grid: Optional[Grid]) -> Grid:
    return grid if grid is not None else Grid(params.epsilon)


def evaluate_modes(
    mu: float, params: Parameters, grid: Optional[Grid] = None, modes: Iterable[int] = (0, 1)
) -> ModeEvaluation:
    grid = _grid_for(params, grid)
    at_mu = params.with_mu(mu)
    try:
        state = solve_steady_state(at_mu, grid)
        solved = {n: solve_mode(n, state, at_mu, grid) for n in modes}
    except PlaqueError as exc:
        raise exc.with_context(mu=mu, epsilon=grid.epsilon, modes=str(tuple(modes)))
    return ModeEvaluation(mu, state, solved)


def g_n(n: int, mu: float, params: Parameters, grid: Optional[Grid] = None) -> float:
    """Coefficient of cos(n theta) in the derivative of the boundary velocity map."""
    return evaluate_modes(mu, params, grid, (n,)).g(n)


@dataclass(frozen=True)
class BifurcationPoint:
    n: int
    epsilon: float
    N: int
    mu_n: float
    residual: float
    slope: float
    prediction: float
    bracket: Tuple[float, float]
    scale: float
    evaluations: int

    @property
    def rel_dev(self) -> float:
        return abs(self.mu_n - self.prediction) / max(1.0, abs(self.prediction))

    @property
    def transversal(self) -> bool:
        return abs(self.slope) > 1e-6 * self.scale

    @property
    def mu_accuracy(self) -> float:
        """Bound on |mu_n - root| implied by the g_n tolerance and the local slope."""
        if self.slope == 0.0:
            return float("inf")
        return settings.root_tol * self.scale / abs(self.slope)


def seed_bracket(n: int, params: Parameters) -> Tuple[float, float]:
    """Quarter of the leading-order spacing around mu_n for n >= 2; +-10 eps c below."""
    c = params.gamma + params.H0
    if n >= 2:
        centre = bifurcation_prediction(n, params)
        half = 0.25 * c * n * n * (n * n - 1)
        return centre - half, centre + half
    half = 10.0 * params.epsilon * c
    return -half, half


@dataclass
class _Search:
    n: int
    params: Parameters
    grid: Grid
    trace: List[Tuple[float, float]] = field(default_factory=list)

    def __call__(self, mu: float) -> Tuple[float, float]:
        evaluation = evaluate_modes(mu, self.params, self.grid, (self.n,))
        value = evaluation.g(self.n)
        self.trace.append((mu, value))
        return value, evaluation.scale


def _expand(search: _Search, lo: float, hi: float, floor: float):
    g_lo, _ = search(lo)
    g_hi, _ = search(hi)
    centre = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    for attempt in range(settings.bracket_expansions + 1):
        if np.sign(g_lo) != np.sign(g_hi):
            return lo, hi, g_lo, g_hi
        if attempt == settings.bracket_expansions:
            break
        half *= 2.0
        new_lo = max(centre - half, floor)
        new_hi = centre + half
        logger.debug(f"Expanding mode-{search.n} bracket to [{new_lo:.6g}, {new_hi:.6g}]")
        if new_lo != lo:
            lo, (g_lo, _) = new_lo, search(new_lo)
        hi, (g_hi, _) = new_hi, search(new_hi)
    raise RootNotFoundError(
        f"no sign change of g_{search.n} in the expanded bracket",
        scan_trace=list(search.trace),
        n=search.n,
        epsilon=search.grid.epsilon,
        bracket=(lo, hi),
    )


def find_mu_n(
    n: int,
    params: Parameters,
    bracket: Optional[Tuple[float, float]] = None,
    grid: Optional[Grid] = None,
    tol: float = settings.root_tol,
) -> BifurcationPoint:
    """
    Root of g_n bracketed from `bracket` (or the asymptotic seed), never below mu_c.

    Bisection narrows the bracket to settings.root_bisection_width, then secant steps
    that stay inside the bracket drive |g_n| below tol * max(1, |p*''(1 - eps)|).
    """
    grid = _grid_for(params, grid)
    mu_c = compute_mu_c(params)
    floor = mu_c + 1e-6 * max(1.0, abs(mu_c))
    lo, hi = bracket if bracket is not None else seed_bracket(n, params)
    lo = max(lo, floor)
    if not hi > lo:
        raise RootNotFoundError(
            "bracket lies below mu_c", n=n, bracket=(lo, hi), mu_c=mu_c, epsilon=grid.epsilon
        )

    search = _Search(n, params, grid)
    lo, hi, g_lo, g_hi = _expand(search, lo, hi, floor)
    initial = (lo, hi)

    mu, value, scale = None, None, 1.0
    for _ in range(settings.root_max_iter):
        width_target = settings.root_bisection_width * max(1.0, abs(lo), abs(hi))
        if hi - lo > width_target:
            mu = 0.5 * (lo + hi)
        else:
            mu = hi - g_hi * (hi - lo) / (g_hi - g_lo)
            if not lo < mu < hi:
                mu = 0.5 * (lo + hi)
        value, scale = search(mu)
        if abs(value) <= tol * scale:
            break
        if np.sign(value) == np.sign(g_lo):
            lo, g_lo = mu, value
        else:
            hi, g_hi = mu, value
    else:
        raise ConvergenceError(
            f"root search for mu_{n} did not reach tolerance",
            last_iterate=mu,
            n=n,
            epsilon=grid.epsilon,
            residual=value,
        )

    delta = settings.slope_step * max(1.0, abs(mu))
    slope = (search(mu + delta)[0] - search(mu - delta)[0]) / (2.0 * delta)
    point = BifurcationPoint(
        n=n,
        epsilon=grid.epsilon,
        N=grid.N,
        mu_n=mu,
        residual=value,
        slope=slope,
        prediction=bifurcation_prediction(n, params),
        bracket=initial,
        scale=scale,
        evaluations=len(search.trace),
    )
    logger.info(
        f"mu_{n} = {mu:.12g} at eps={grid.epsilon:g} (g={value:.2e}, slope={slope:.4g}, "
        f"{point.evaluations} evaluations)"
    )
    if not point.transversal:
        logger.warning(f"mu_{n}: slope {slope:.3e} below the transversality threshold")
    return point


@dataclass(frozen=True)
class GapReport:
    epsilons: Tuple[float, ...]
    deltas: Tuple[float, ...]
    predicted: Tuple[float, ...]
    constants: Tuple[float, ...]
    mu0: Tuple[float, ...]
    mu1: Tuple[float, ...]
    slope: float
    mu_gap_orders: Tuple[float, ...]
    mu1_slopes: Tuple[float, ...] = ()
    mu1_transversal: Tuple[bool, ...] = ()
    mu_accuracies: Tuple[float, ...] = ()

    @property
    def scaled_deltas(self) -> Tuple[float, ...]:
        return tuple(d / e**2 for d, e in zip(self.deltas, self.epsilons))

    @property
    def constant_error(self) -> float:
        """Relative error of delta/eps^2 against the constant at the smallest eps."""
        index = int(np.argmin(self.epsilons))
        return abs(self.scaled_deltas[index] - self.constants[index]) / abs(self.constants[index])

    @property
    def signs_agree(self) -> bool:
        return all(np.sign(d) == np.sign(c) for d, c in zip(self.deltas, self.constants))

    @property
    def mu_gaps(self) -> Tuple[float, ...]:
        return tuple(b - a for a, b in zip(self.mu0, self.mu1))

    @property
    def gap_resolution(self) -> float:
        """Smallest |mu_1 - mu_0| in units of the coarser of the two root accuracies."""
        return min((abs(g) / a for g, a in zip(self.mu_gaps, self.mu_accuracies)), default=float("nan"))

    def rows(self) -> List[Tuple[float, ...]]:
        return list(zip(self.epsilons, self.deltas, self.predicted, self.mu0, self.mu1))


def check_gap_hypotheses(params: Parameters) -> None:
    if params.beta1 == params.beta2:
        raise HypothesisViolation(
            "β₁≠β₂", "the derivative gap needs beta1 != beta2", beta1=params.beta1
        )
    mu_c = compute_mu_c(params)
    if not mu_c < 0.0:
        raise HypothesisViolation("μ_c<0", "the separation argument needs mu_c < 0", mu_c=mu_c)


def gap_analysis(
    params: Parameters,
    epsilons: Sequence[float] = (0.02, 0.01, 0.005),
    n_nodes: int = settings.grid_n,
) -> GapReport:
    """dp1^1/dr - dp1^0/dr at mu_0 along an epsilon ladder, against its eps^2 law."""
    check_gap_hypotheses(params)
    deltas, predicted, constants, mu0s, mu1s, roots1, accuracies = [], [], [], [], [], [], []
    for epsilon in tqdm(epsilons, desc="gap ladder", disable=not settings.progress):
        at_eps = params.with_epsilon(epsilon)
        grid = Grid(epsilon, n_nodes)
        root0 = find_mu_n(0, at_eps, grid=grid)
        evaluation = evaluate_modes(root0.mu_n, at_eps, grid, (0, 1))
        delta = evaluation.modes[1].dp1n_inner - evaluation.modes[0].dp1n_inner
        constant = gap_constant(at_eps, leading_order_coeffs(at_eps), evaluation.state.rho4)
        root1 = find_mu_n(1, at_eps, grid=grid)
        deltas.append(delta)
        constants.append(constant)
        predicted.append(constant * epsilon**2)
        mu0s.append(root0.mu_n)
        mu1s.append(root1.mu_n)
        roots1.append(root1)
        accuracies.append(max(root0.mu_accuracy, root1.mu_accuracy))
        logger.info(f"Gap at eps={epsilon:g}: delta={delta:.6e}, eps^2 C={constant * epsilon**2:.6e}")

    gaps = np.abs(np.asarray(mu1s) - np.asarray(mu0s))
    orders = observed_orders(epsilons, gaps) if len(epsilons) > 1 else np.array([])
    return GapReport(
        epsilons=tuple(epsilons),
        deltas=tuple(deltas),
        predicted=tuple(predicted),
        constants=tuple(constants),
        mu0=tuple(mu0s),
        mu1=tuple(mu1s),
        slope=loglog_slope(epsilons, deltas) if len(epsilons) > 1 else float("nan"),
        mu_gap_orders=tuple(float(o) for o in orders),
        mu1_slopes=tuple(r.slope for r in roots1),
        mu1_transversal=tuple(r.transversal for r in roots1),
        mu_accuracies=tuple(accuracies),
    )


@dataclass(frozen=True)
class DistinctnessReport:
    epsilon: float
    points: Dict[int, BifurcationPoint]
    pairs: Tuple[Tuple[int, int, float], ...]

    @property
    def min_separation_from_mu1(self) -> float:
        mu1 = self.points[1].mu_n
        return min(abs(p.mu_n - mu1) for n, p in self.points.items() if n != 1)

    def dominance_holds(self, params: Parameters) -> bool:
        """|mu_n - mu_1| >= (gamma + H0) n^2 (n^2 - 1) / 2 for every n >= 2."""
        c = params.gamma + params.H0
        mu1 = self.points[1].mu_n
        return all(
            abs(p.mu_n - mu1) >= c * n * n * (n * n - 1) / 2.0
            for n, p in self.points.items()
            if n >= 2
        )


def mode_distinctness(params: Parameters, n_max: int, grid: Optional[Grid] = None) -> DistinctnessReport:
    grid = _grid_for(params, grid)
    points = {}
    for n in tqdm(range(n_max + 1), desc="modes", disable=not settings.progress):
        points[n] = find_mu_n(n, params, grid=grid)
    pairs = tuple(
        (a, b, abs(points[a].mu_n - points[b].mu_n))
        for a in range(n_max + 1)
        for b in range(a + 1, n_max + 1)
    )
    return DistinctnessReport(grid.epsilon, points, pairs)


@dataclass(frozen=True)
class SweepReport:
    n: int
    mus: Tuple[float, ...]
    values: Tuple[float, ...]

    @property
    def sign_changes(self) -> int:
        signs = np.sign(self.values)
        return int(np.count_nonzero(signs[1:] != signs[:-1]))


def mu_sweep(n: int, params: Parameters, mus: Sequence[float], grid: Optional[Grid] = None) -> SweepReport:
    """g_n on a mu grid; the sign-change count bounds the number of roots in the window."""
    grid = _grid_for(params, grid)
    values = [g_n(n, mu, params, grid) for mu in tqdm(mus, desc=f"g_{n} sweep", disable=not settings.progress)]
    return SweepReport(n, tuple(float(m) for m in mus), tuple(values))


@dataclass(frozen=True)
class GridConvergenceReport:
    n: int
    sizes: Tuple[int, ...]
    mus: Tuple[float, ...]
    differences: Tuple[float, ...]
    orders: Tuple[float, ...]


def grid_convergence(
    n: int, params: Parameters, sizes: Sequence[int] = (201, 401, 801)
) -> GridConvergenceReport:
    """mu_n on a sequence of refined grids; orders from successive differences in h."""
    mus = [find_mu_n(n, params, grid=Grid(params.epsilon, N)).mu_n for N in sizes]
    steps = [params.epsilon / (N - 1) for N in sizes]
    differences = richardson_differences(mus)
    orders = refinement_orders(steps, mus) if len(sizes) > 2 else np.array([])
    return GridConvergenceReport(
        n,
        tuple(sizes),
        tuple(mus),
        tuple(float(d) for d in differences),
        tuple(float(o) for o in orders),
    )
