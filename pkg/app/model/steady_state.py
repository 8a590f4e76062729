"""
Radially symmetric stationary plaque: (L*, H*, F*, p*) on the annulus [1 - eps, 1]
together with the clearance rate rho4 that makes the free boundary stationary.

The four second-order equations, their eight boundary rows and the extra condition
p*'(1 - eps) = 0 form one square system in the unknowns (L, H, F, p, rho4), solved by
damped Newton with an analytic sparse Jacobian.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.integrate import simpson

from app.core.config import settings
from app.core.errors import (
    ConfigError,
    ConvergenceError,
    DegenerateModelError,
    DomainError,
    UsageError,
)
from app.core.logging import logger
from app.core.tables import write_columns, write_sidecar
from app.model.params import Parameters, leading_order_coeffs, validate
from app.numerics.bvp import (
    assemble_Ln,
    boundary_matrix,
    first_derivative_matrix,
    row_scale,
    solve_bvp,
)
from app.numerics.grid import BoundaryCondition, Grid, RadialField, Side
from app.numerics.newton import NewtonReport, newton_solve

FIELDS = ("L", "H", "F", "p")
CONTINUATION_LADDER = (2.0, 1.5, 1.0)


@dataclass(frozen=True)
class ReactionRHS:
    """Right-hand sides of the L, H, F and p equations (F includes convection)."""

    L: np.ndarray
    H: np.ndarray
    F: np.ndarray
    p: np.ndarray

    def as_tuple(self) -> Tuple[np.ndarray, ...]:
        return self.L, self.H, self.F, self.p


def _check_denominators(L, H, F, params: Parameters) -> None:
    checks = {
        "K1+L": params.K1 + np.asarray(L),
        "K2+F": params.K2 + np.asarray(F),
        "gamma+H": params.gamma + np.asarray(H),
    }
    for name, values in checks.items():
        if np.any(values <= 0.0):
            raise DomainError(
                f"nonpositive denominator {name}", minimum=float(np.min(values))
            )


def reaction_rhs(L, H, F, dp, params: Parameters, rho4: float, dF=0.0) -> ReactionRHS:
    """
    Evaluate the four right-hand sides with M = M0 - F eliminated.

    Works on scalars or node arrays. The F entry carries the convection term
    dF * dp, so for a single node with dF left at 0 it is the pure reaction part.
    """
    L, H, F = (np.asarray(v, dtype=float) for v in (L, H, F))
    _check_denominators(L, H, F, params)
    M = params.M0 - F
    a = params.K1 + L
    b = params.K2 + F
    c = params.gamma + H

    uptake = params.k1 * M * L / a
    binding = params.k2 * H * F / b
    r1 = -uptake - params.rho1 * L
    r2 = -binding - params.rho2 * H
    r3 = (
        uptake
        - binding
        - params.lam * F * M * L / (params.M0 * c)
        + (params.rho3 - rho4) * M * F / params.M0
        + np.asarray(dF) * np.asarray(dp)
    )
    r4 = (params.lam * M * L / c - params.rho3 * M - rho4 * F) / params.M0
    return ReactionRHS(r1, r2, r3, r4)


def reaction_partials(L, H, F, params: Parameters, rho4: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Analytic partials of the reaction parts.

    Returns:
        (jac, drho4) with jac[i, j] = d R_i / d (L, H, F)_j of shape (4, 3, ...) and
        drho4[i] = d R_i / d rho4 of shape (4, ...).
    """
    L, H, F = (np.asarray(v, dtype=float) for v in (L, H, F))
    _check_denominators(L, H, F, params)
    M0 = params.M0
    M = M0 - F
    a = params.K1 + L
    b = params.K2 + F
    c = params.gamma + H
    zero = np.zeros(np.broadcast(L, H, F).shape)

    jac = np.empty((4, 3) + zero.shape)
    jac[0, 0] = -params.k1 * M * params.K1 / a**2 - params.rho1
    jac[0, 1] = zero
    jac[0, 2] = params.k1 * L / a

    jac[1, 0] = zero
    jac[1, 1] = -params.k2 * F / b - params.rho2
    jac[1, 2] = -params.k2 * H * params.K2 / b**2

    jac[2, 0] = params.k1 * M * params.K1 / a**2 - params.lam * F * M / (M0 * c)
    jac[2, 1] = -params.k2 * F / b + params.lam * F * M * L / (M0 * c**2)
    jac[2, 2] = (
        -params.k1 * L / a
        - params.k2 * H * params.K2 / b**2
        - params.lam * L * (M0 - 2.0 * F) / (M0 * c)
        + (params.rho3 - rho4) * (M0 - 2.0 * F) / M0
    )

    jac[3, 0] = params.lam * M / (M0 * c)
    jac[3, 1] = -params.lam * M * L / (M0 * c**2)
    jac[3, 2] = (-params.lam * L / c + params.rho3 - rho4) / M0

    drho4 = np.stack([zero, zero, -M * F / M0, -F / M0 + zero])
    return jac, drho4


class RadialSystem:
    """
    Discrete radial system on one grid.

    With `rho4=None` the unknown vector is (L, H, F, q, rho4) and the row
    p'(r_inner) = 0 closes it; otherwise rho4 is frozen and the vector is (L, H, F, q).
    The pressure is carried as q = p + 1/r_inner, its deviation from the curvature
    value, so p'(r_inner) is resolved to the size of q rather than of p.
    Boundary data use params.L0, params.H0 and q(r_inner) = 0.
    """

    def __init__(self, params: Parameters, grid: Grid, rho4: Optional[float] = None):
        self.params = params
        self.grid = grid
        self.rho4 = rho4
        N, h = grid.N, grid.h
        self.N = N
        self.p_offset = -1.0 / grid.r_inner

        self.weights = np.full(N, h**2)
        self.weights[0] = self.weights[-1] = 0.0
        self.S = sp.diags(self.weights, 0, format="csr")
        self.D1 = first_derivative_matrix(grid)
        interior = (sp.diags(row_scale(grid), 0) @ assemble_Ln(grid, 0).matrix).tocsr()

        outer = BoundaryCondition.neumann(Side.OUTER)
        inner = {
            "L": BoundaryCondition.transfer(params.beta1, params.beta1 * params.L0),
            "H": BoundaryCondition.transfer(params.beta1, params.beta1 * params.H0),
            "F": BoundaryCondition.transfer(params.beta2, 0.0),
            "p": BoundaryCondition.dirichlet(Side.INNER, 0.0),
        }
        self.operators: Dict[str, sp.csr_matrix] = {}
        self.bc_rhs: Dict[str, np.ndarray] = {}
        for name in FIELDS:
            bmat, g = boundary_matrix(grid, inner[name], outer)
            diffusion = params.D if name == "F" else 1.0
            self.operators[name] = (diffusion * interior + bmat).tocsr()
            self.bc_rhs[name] = g
        # conditions on the physical fields, for reporting
        self.conditions = dict(inner, p=BoundaryCondition.dirichlet(Side.INNER, self.p_offset))

    @property
    def free_rho4(self) -> bool:
        return self.rho4 is None

    @property
    def size(self) -> int:
        return 4 * self.N + (1 if self.free_rho4 else 0)

    def unknowns(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, float]:
        """(L, H, F, q, rho4) views of the unknown vector."""
        N = self.N
        rho4 = float(x[4 * N]) if self.free_rho4 else float(self.rho4)
        return x[:N], x[N : 2 * N], x[2 * N : 3 * N], x[3 * N : 4 * N], rho4

    def split(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, float]:
        """(L, H, F, p, rho4) with the physical pressure."""
        L, H, F, q, rho4 = self.unknowns(x)
        return L, H, F, q + self.p_offset, rho4

    def pressure_slope(self, x: np.ndarray) -> np.ndarray:
        return self.D1 @ self.unknowns(x)[3]

    def pack(self, L, H, F, p, rho4: Optional[float] = None) -> np.ndarray:
        """Unknown vector from physical fields."""
        parts = [np.asarray(v, dtype=float) for v in (L, H, F)]
        parts.append(np.asarray(p, dtype=float) - self.p_offset)
        if self.free_rho4:
            parts.append(np.array([rho4 if rho4 is not None else 0.0]))
        return np.concatenate(parts)

    def residual(self, x: np.ndarray) -> np.ndarray:
        L, H, F, q, rho4 = self.unknowns(x)
        dF = self.D1 @ F
        dp = self.D1 @ q
        rhs = reaction_rhs(L, H, F, dp, self.params, rho4, dF=dF)
        rows = []
        for name, u, source in zip(FIELDS, (L, H, F, q), rhs.as_tuple()):
            rows.append(self.operators[name] @ u - self.bc_rhs[name] - self.weights * source)
        if self.free_rho4:
            # h * p'(r_inner) with the one-sided stencil
            rows.append(np.array([(-3.0 * q[0] + 4.0 * q[1] - q[2]) / 2.0]))
        return np.concatenate(rows)

    def jacobian(self, x: np.ndarray) -> sp.csc_matrix:
        L, H, F, q, rho4 = self.unknowns(x)
        dF = self.D1 @ F
        dp = self.D1 @ q
        jac, drho4 = reaction_partials(L, H, F, self.params, rho4)

        def local(i: int, j: int) -> sp.csr_matrix:
            return sp.diags(-self.weights * jac[i, j], 0, format="csr")

        ops = self.operators
        blocks = [
            [ops["L"] + local(0, 0), local(0, 1), local(0, 2), None],
            [local(1, 0), ops["H"] + local(1, 1), local(1, 2), None],
            [
                local(2, 0),
                local(2, 1),
                ops["F"] + local(2, 2) - self.S @ sp.diags(dp, 0) @ self.D1,
                -self.S @ sp.diags(dF, 0) @ self.D1,
            ],
            [local(3, 0), local(3, 1), local(3, 2), ops["p"]],
        ]
        if self.free_rho4:
            for i, row in enumerate(blocks):
                row.append(sp.csr_matrix((-self.weights * drho4[i]).reshape(-1, 1)))
            slope_row = sp.csr_matrix(
                ([-1.5, 2.0, -0.5], ([0, 0, 0], [0, 1, 2])), shape=(1, self.N)
            )
            blocks.append([None, None, None, slope_row, None])
        return sp.bmat(blocks, format="csc")


@dataclass(frozen=True)
class BoundaryDiagnostics:
    """First and second derivatives at r = 1 - eps from the ODE identities."""

    dL: float
    dH: float
    dF: float
    dp: float
    d2L: float
    d2H: float
    d2F: float
    d2p: float

    def second(self, name: str) -> float:
        return getattr(self, f"d2{name}")

    def first(self, name: str) -> float:
        return getattr(self, f"d{name}")


@dataclass(frozen=True)
class ResidualSummary:
    interior: Dict[str, float]
    boundary: Dict[str, float]

    @property
    def max_interior(self) -> float:
        return max(self.interior.values())

    @property
    def max_boundary(self) -> float:
        return max(self.boundary.values())


@dataclass(frozen=True, eq=False)
class SteadyState:
    params: Parameters
    grid: Grid
    Lstar: RadialField
    Hstar: RadialField
    Fstar: RadialField
    pstar: RadialField
    pstar_slope: RadialField
    rho4: float
    diagnostics: BoundaryDiagnostics
    residuals: ResidualSummary
    solution: np.ndarray = field(repr=False)
    report: NewtonReport = field(repr=False)
    warnings: Tuple[str, ...] = ()

    @property
    def mu(self) -> float:
        return self.params.mu

    @property
    def epsilon(self) -> float:
        return self.grid.epsilon

    def fields(self) -> Dict[str, RadialField]:
        return {"L": self.Lstar, "H": self.Hstar, "F": self.Fstar, "p": self.pstar}

    def resampled(self, grid: Grid) -> Dict[str, RadialField]:
        return {name: f.resample(grid) for name, f in self.fields().items()}


def boundary_second_derivatives(state: SteadyState, params: Optional[Parameters] = None) -> BoundaryDiagnostics:
    """
    u'' at r = 1 - eps for the four fields, from the equations themselves.

    The inner boundary rows give u'(r0); u'' = -u'/r0 - RHS then follows, with
    p'(r0) = 0 so that p''(r0) is minus the pressure source.
    """
    params = params or state.params
    return _inner_identities(
        params,
        state.grid.r_inner,
        state.Lstar.inner,
        state.Hstar.inner,
        state.Fstar.inner,
        state.rho4,
    )


def _inner_identities(params: Parameters, r0: float, L: float, H: float, F: float, rho4: float) -> BoundaryDiagnostics:
    dL = params.beta1 * (L - params.L0)
    dH = params.beta1 * (H - params.H0)
    dF = params.beta2 * F
    dp = 0.0
    rhs = reaction_rhs(L, H, F, dp, params, rho4, dF=dF)
    return BoundaryDiagnostics(
        dL=dL,
        dH=dH,
        dF=dF,
        dp=dp,
        d2L=float(-dL / r0 - rhs.L),
        d2H=float(-dH / r0 - rhs.H),
        d2F=float(-dF / r0 - rhs.F / params.D),
        d2p=float(-dp / r0 - rhs.p),
    )


def solvability_integral(state: SteadyState) -> float:
    """Integral of r * (pressure source) over the annulus; vanishes at a steady state."""
    r = state.grid.nodes
    source = reaction_rhs(
        state.Lstar.values, state.Hstar.values, state.Fstar.values, 0.0, state.params, state.rho4
    ).p
    return float(simpson(r * source, x=r))


def initial_guess(params: Parameters, grid: Grid) -> np.ndarray:
    """First-order expansions for L, H, F and rho4; p from the leading pressure equation."""
    derived = leading_order_coeffs(params)
    if derived.rho4_leading is None:
        raise DegenerateModelError("no leading-order rho4 to start from", set_name=params.set_name)
    eps = params.epsilon
    ones = np.ones(grid.N)
    L = (params.rho3 * (params.gamma + params.H0) / params.lam + eps * derived.Lstar1) * ones
    H = (params.H0 + eps * derived.Hstar1) * ones
    F = eps * derived.Fstar1 * ones
    rho4 = derived.rho4_leading
    source = reaction_rhs(L, H, F, 0.0, params, rho4).p
    p = solve_bvp(
        grid,
        0,
        source,
        BoundaryCondition.dirichlet(Side.INNER, -1.0 / grid.r_inner),
        BoundaryCondition.neumann(Side.OUTER),
        name="p",
    )
    return RadialSystem(params, grid).pack(L, H, F, p.values, rho4)


def _physicality(params: Parameters, L, H, F) -> Tuple[str, ...]:
    slack = settings.physicality_slack
    flags = []
    if np.min(F) < -slack or np.max(F) > params.M0 + slack:
        flags.append(f"F* leaves [0, M0]: range [{np.min(F):.3e}, {np.max(F):.3e}]")
    if np.min(L) <= 0.0:
        flags.append(f"L* not positive: min {np.min(L):.3e}")
    if np.min(H) <= 0.0:
        flags.append(f"H* not positive: min {np.min(H):.3e}")
    return tuple(flags)


def _residual_summary(system: RadialSystem, x: np.ndarray, fields: Dict[str, RadialField]) -> ResidualSummary:
    res = system.residual(x)
    N = system.N
    interior = {
        name: float(np.max(np.abs(res[k * N + 1 : (k + 1) * N - 1]))) for k, name in enumerate(FIELDS)
    }
    outer = BoundaryCondition.neumann(Side.OUTER)
    boundary = {}
    for name, u in fields.items():
        boundary[f"{name}_inner"] = abs(system.conditions[name].residual(u))
        boundary[f"{name}_outer"] = abs(outer.residual(u))
    if system.free_rho4:
        boundary["p_inner_slope"] = abs(res[-1]) / system.grid.h
    return ResidualSummary(interior, boundary)


def _solve_on(params: Parameters, grid: Grid, x0: np.ndarray) -> SteadyState:
    system = RadialSystem(params, grid)
    result = newton_solve(system.residual, system.jacobian, x0, polish=True)
    L, H, F, p, rho4 = system.split(result.x)
    slope = RadialField(grid, system.pressure_slope(result.x), "dp")
    fields = {
        "L": RadialField(grid, L, "L"),
        "H": RadialField(grid, H, "H"),
        "F": RadialField(grid, F, "F"),
        "p": RadialField(grid, p, "p"),
    }
    flags = _physicality(params, L, H, F)
    for flag in flags:
        logger.warning(f"Steady state at mu={params.mu:g}, eps={grid.epsilon:g}: {flag}")
    diagnostics = _inner_identities(params, grid.r_inner, L[0], H[0], F[0], rho4)
    return SteadyState(
        params=params,
        grid=grid,
        Lstar=fields["L"],
        Hstar=fields["H"],
        Fstar=fields["F"],
        pstar=fields["p"],
        pstar_slope=slope,
        rho4=rho4,
        diagnostics=diagnostics,
        residuals=_residual_summary(system, result.x, fields),
        solution=result.x,
        report=result.report,
        warnings=flags,
    )


def _check_inputs(params: Parameters, grid: Grid) -> None:
    if not np.isclose(grid.epsilon, params.epsilon, rtol=0.0, atol=1e-15):
        raise UsageError(
            "grid and parameters disagree on epsilon", grid=grid.epsilon, params=params.epsilon
        )
    blocking = [v for v in validate(params) if v.constraint != "β₁≠β₂"]
    if blocking:
        raise ConfigError(
            "parameter set violates the standing assumptions",
            constraints=", ".join(v.constraint for v in blocking),
            set_name=params.set_name,
        )


def solve_steady_state(params: Parameters, grid: Grid) -> SteadyState:
    """
    Newton solve of the radial system with rho4 as an unknown.

    Starts from the asymptotic expansion; when that fails, walks eps down the ladder
    2 eps, 1.5 eps, eps, each stage starting from the resampled previous solution.
    """
    _check_inputs(params, grid)
    try:
        state = _solve_on(params, grid, initial_guess(params, grid))
    except ConvergenceError as first:
        logger.warning(
            f"Direct Newton solve failed at mu={params.mu:g}, eps={grid.epsilon:g}; "
            "trying epsilon continuation"
        )
        state = _continuation(params, grid, first)
    logger.info(
        f"Steady state mu={params.mu:g} eps={grid.epsilon:g} N={grid.N}: "
        f"rho4={state.rho4:.10g} in {state.report.iterations} Newton steps"
    )
    return state


def _continuation(params: Parameters, grid: Grid, first: ConvergenceError) -> SteadyState:
    state: Optional[SteadyState] = None
    for factor in CONTINUATION_LADDER:
        epsilon = factor * grid.epsilon
        if epsilon >= 1.0:
            continue
        stage_grid = Grid(epsilon, grid.N)
        stage_params = params.with_epsilon(epsilon)
        if state is None:
            x0 = initial_guess(stage_params, stage_grid)
        else:
            f = state.resampled(stage_grid)
            stage = RadialSystem(stage_params, stage_grid)
            x0 = stage.pack(*(f[n].values for n in FIELDS), state.rho4)
        try:
            state = _solve_on(stage_params, stage_grid, x0)
        except ConvergenceError as exc:
            raise ConvergenceError(
                "steady-state Newton failed along the epsilon continuation",
                last_iterate=exc.last_iterate,
                mu=params.mu,
                epsilon=epsilon,
            ) from first
        logger.debug(f"Continuation stage eps={epsilon:g} converged")
    return state


@dataclass(frozen=True, eq=False)
class ShiftedProfile:
    """Radial solution on the shifted annulus [1 - eps + shift, 1] with rho4 frozen."""

    grid: Grid
    shift: float
    L: RadialField
    H: RadialField
    F: RadialField
    p: RadialField


def solve_shifted_radial(
    params: Parameters,
    rho4: float,
    shift: float,
    n_nodes: int = settings.grid_n,
    initial: Optional[SteadyState] = None,
) -> ShiftedProfile:
    """
    Nonlinear radial problem with the inner boundary moved to 1 - eps + shift.

    Boundary data keep L0 from `params`; the pressure takes the curvature value
    -1/(1 - eps + shift) and rho4 stays fixed, so no slope row is imposed.
    """
    grid = Grid(params.epsilon - shift, n_nodes)
    system = RadialSystem(params, grid, rho4=rho4)
    if initial is not None:
        f = initial.resampled(grid)
        x0 = system.pack(*(f[n].values for n in FIELDS))
    else:
        x0 = initial_guess(params.with_epsilon(grid.epsilon), grid)[:-1]
    result = newton_solve(system.residual, system.jacobian, x0, polish=True)
    L, H, F, p, _ = system.split(result.x)
    return ShiftedProfile(
        grid=grid,
        shift=shift,
        L=RadialField(grid, L, "L"),
        H=RadialField(grid, H, "H"),
        F=RadialField(grid, F, "F"),
        p=RadialField(grid, p, "p"),
    )


def write_profile(state: SteadyState, directory: Path, stem: str = "steady") -> Tuple[Path, Path]:
    """Dump r,L,H,F,p as CSV plus a flat metadata sidecar."""
    directory = Path(directory)
    csv_path = write_columns(
        directory / f"{stem}.csv",
        {
            "r": state.grid.nodes,
            "L": state.Lstar.values,
            "H": state.Hstar.values,
            "F": state.Fstar.values,
            "p": state.pstar.values,
        },
    )
    meta = {
        "set_name": state.params.set_name,
        "epsilon": state.epsilon,
        "mu": state.mu,
        "rho4": state.rho4,
        "N": state.grid.N,
        "newton_iterations": state.report.iterations,
        "residual_interior": state.residuals.max_interior,
        "residual_boundary": state.residuals.max_boundary,
        "d2p_inner": state.diagnostics.d2p,
        "solvability_integral": solvability_integral(state),
        "warnings": "; ".join(state.warnings),
    }
    sidecar = write_sidecar(directory / f"{stem}.json", meta)
    return csv_path, sidecar
