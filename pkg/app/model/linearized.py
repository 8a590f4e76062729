"""
Mode-n linearization of the stationary system around a SteadyState.

For a boundary perturbation r = 1 - eps + tau cos(n theta) the first-order fields
factor as (profile in r) cos(n theta); the profiles solve four coupled L_n problems
whose inner data come from the steady state's boundary second derivatives.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.integrate import simpson

from app.core.errors import SolvabilityError, UsageError
from app.core.logging import logger
from app.core.tables import write_columns, write_sidecar
from app.model.params import DerivedConstants, Parameters, leading_order_coeffs
from app.model.steady_state import (
    FIELDS,
    SteadyState,
    boundary_second_derivatives,
    reaction_partials,
    solve_shifted_radial,
)
from app.numerics.bvp import (
    assemble_Ln,
    boundary_matrix,
    factorize,
    first_derivative_matrix,
    row_scale,
)
from app.numerics.convergence import observed_orders
from app.numerics.grid import BoundaryCondition, Grid, RadialField, Side


@dataclass(frozen=True, eq=False)
class ReactionJacobian:
    """
    Per-node partials of the four reaction terms with respect to (L, H, F).

    blocks[i, k, j] is d R_k / d u_j at node i; f8 holds the pressure row written
    out term by term from the linearized pressure source.
    """

    blocks: np.ndarray
    f8: np.ndarray

    def apply(self, L1, H1, F1) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Return (f5, f6, f7, f8) for perturbation profiles."""
        u = np.stack([np.asarray(v, dtype=float) for v in (L1, H1, F1)], axis=-1)
        f5, f6, f7, _ = np.einsum("ikj,ij->ki", self.blocks, u)
        return f5, f6, f7, np.einsum("ij,ij->i", self.f8, u)


def reaction_jacobian(state: SteadyState, params: Optional[Parameters] = None) -> ReactionJacobian:
    params = params or state.params
    L, H, F = state.Lstar.values, state.Hstar.values, state.Fstar.values
    jac, _ = reaction_partials(L, H, F, params, state.rho4)

    M0 = params.M0
    c = params.gamma + H
    f8 = np.stack(
        [
            params.lam * (M0 - F) / (c * M0),
            -params.lam * (M0 - F) * L / (c**2 * M0),
            (-params.lam * L / c + (params.rho3 - state.rho4)) / M0,
        ],
        axis=-1,
    )
    return ReactionJacobian(blocks=np.moveaxis(jac, -1, 0), f8=f8)


@dataclass(frozen=True, eq=False)
class ModeSolution:
    n: int
    grid: Grid
    L1n: RadialField
    H1n: RadialField
    F1n: RadialField
    p1n: RadialField
    dp1n_inner: float
    dp1n_stencil: float
    eta_n: float
    eta_spread: float
    L11n: float
    H11n: float
    F11n: float

    def fields(self) -> Dict[str, RadialField]:
        return {"L": self.L1n, "H": self.H1n, "F": self.F1n, "p": self.p1n}


def _inner_conditions(state: SteadyState, params: Parameters, n: int, grid: Grid) -> Dict[str, BoundaryCondition]:
    diag = boundary_second_derivatives(state, params)
    return {
        "L": BoundaryCondition.transfer(params.beta1, diag.d2L - params.beta1 * diag.dL),
        "H": BoundaryCondition.transfer(params.beta1, diag.d2H - params.beta1 * diag.dH),
        "F": BoundaryCondition.transfer(params.beta2, diag.d2F - params.beta2 * diag.dF),
        "p": BoundaryCondition.dirichlet(Side.INNER, (1 - n * n) / grid.r_inner**2),
    }


def f8_profile(fields: Dict[str, RadialField], jacobian: ReactionJacobian) -> np.ndarray:
    return jacobian.apply(fields["L"].values, fields["H"].values, fields["F"].values)[3]


def dp_inner_from_identity(p1: RadialField, source: np.ndarray, n: int) -> float:
    """
    p1'(r0) from (r p1')' = n^2 p1 / r - r f8 integrated against p1'(1) = 0.
    """
    r = p1.r
    integrand = n * n * p1.values / r - r * source
    return float(-simpson(integrand, x=r) / r[0])


def solve_mode(
    n: int,
    state: SteadyState,
    params: Optional[Parameters] = None,
    grid: Optional[Grid] = None,
) -> ModeSolution:
    """Solve the coupled linear system for mode n around `state`."""
    if n < 0:
        raise UsageError("mode index must be nonnegative", n=n)
    params = params or state.params
    grid = grid or state.grid
    grid.require_same(state.grid, "mode grid and steady state")

    N = grid.N
    weights = np.full(N, grid.h**2)
    weights[0] = weights[-1] = 0.0
    S = sp.diags(weights, 0, format="csr")
    D1 = first_derivative_matrix(grid)
    interior = (sp.diags(row_scale(grid), 0) @ assemble_Ln(grid, n).matrix).tocsr()

    jac = reaction_jacobian(state, params)
    outer = BoundaryCondition.neumann(Side.OUTER)
    inner = _inner_conditions(state, params, n, grid)
    operators, rhs = {}, []
    for name in FIELDS:
        bmat, g = boundary_matrix(grid, inner[name], outer)
        diffusion = params.D if name == "F" else 1.0
        operators[name] = (diffusion * interior + bmat).tocsr()
        rhs.append(g)

    def local(k: int, j: int) -> sp.csr_matrix:
        return sp.diags(-weights * jac.blocks[:, k, j], 0, format="csr")

    def pressure(j: int) -> sp.csr_matrix:
        return sp.diags(-weights * jac.f8[:, j], 0, format="csr")

    dF = D1 @ state.Fstar.values
    dp = state.pstar_slope.values
    blocks = [
        [operators["L"] + local(0, 0), local(0, 1), local(0, 2), None],
        [local(1, 0), operators["H"] + local(1, 1), local(1, 2), None],
        [
            local(2, 0),
            local(2, 1),
            operators["F"] + local(2, 2) - S @ sp.diags(dp, 0) @ D1,
            -S @ sp.diags(dF, 0) @ D1,
        ],
        [pressure(0), pressure(1), pressure(2), operators["p"]],
    ]
    matrix = sp.bmat(blocks, format="csc")
    try:
        x = factorize(matrix, f"mode-{n} linearized system").solve(np.concatenate(rhs))
    except SolvabilityError as exc:
        raise exc.with_context(n=n, mu=params.mu, epsilon=grid.epsilon)
    if not np.all(np.isfinite(x)):
        raise SolvabilityError(
            "mode solve produced non-finite values", n=n, mu=params.mu, epsilon=grid.epsilon
        )

    fields = {
        name: RadialField(grid, x[k * N : (k + 1) * N], f"{name}1")
        for k, name in enumerate(FIELDS)
    }
    source = f8_profile(fields, jac)
    dp_identity = dp_inner_from_identity(fields["p"], source, n)
    dp_stencil = fields["p"].inner_derivative()

    derived = leading_order_coeffs(params)
    eps = grid.epsilon
    L_lead = params.mu / params.lam - derived.Lstar1
    mode = ModeSolution(
        n=n,
        grid=grid,
        L1n=fields["L"],
        H1n=fields["H"],
        F1n=fields["F"],
        p1n=fields["p"],
        dp1n_inner=dp_identity,
        dp1n_stencil=dp_stencil,
        eta_n=float(source[0]),
        eta_spread=float(np.max(np.abs(source - source[0]))),
        L11n=(fields["L"].inner - L_lead) / eps,
        H11n=(fields["H"].inner + derived.Hstar1) / eps,
        F11n=(fields["F"].inner + derived.Fstar1) / eps,
    )
    logger.debug(
        f"Mode {n} at mu={params.mu:g}, eps={eps:g}: dp1n={dp_identity:.12g} "
        f"(stencil {dp_stencil:.12g}), eta={mode.eta_n:.10g}"
    )
    return mode


def eta_n(mode: ModeSolution, state: SteadyState, params: Optional[Parameters] = None) -> float:
    """Constant part of the pressure source f8, read at the inner node."""
    params = params or state.params
    return float(f8_profile(mode.fields(), reaction_jacobian(state, params))[0])


def eta_first_bracket(params: Parameters, derived: DerivedConstants, rho4: float) -> float:
    """n-independent part of eta_n through first order in epsilon."""
    c = params.gamma + params.H0
    M0, mu, eps = params.M0, params.mu, params.epsilon
    L1, H1, F1 = derived.Lstar1, derived.Hstar1, derived.Fstar1
    leading = M0 * mu / c - M0 * (params.lam * L1 - params.rho3 * H1) / c + rho4 * F1
    first = (
        -F1 * mu / c
        - M0 * H1 * mu / c**2
        + 2.0 * params.lam * L1 * F1 / c
        + 2.0 * params.lam * M0 * L1 * H1 / c**2
        - 2.0 * params.rho3 * F1 * H1 / c
        - 2.0 * M0 * params.rho3 * H1**2 / c**2
    )
    return (leading + eps * first) / M0


@dataclass(frozen=True)
class ModeDifference:
    field: str
    observed: float
    predicted: float

    @property
    def deviation(self) -> float:
        return abs(self.observed - self.predicted)


def mode_difference_diagnostics(
    m1: ModeSolution, m0: ModeSolution, state: SteadyState, params: Optional[Parameters] = None
) -> Dict[str, ModeDifference]:
    """(u^1 - u^0)/eps at the inner node against the closed-form first-order differences."""
    params = params or state.params
    m1.grid.require_same(m0.grid, "mode solutions")
    m1.grid.require_same(state.grid, "mode solutions and steady state")
    if m1.n != 1 or m0.n != 0:
        raise UsageError("expected the n=1 and n=0 modes", got=(m1.n, m0.n))
    derived = leading_order_coeffs(params)
    eps = state.epsilon
    predicted = {
        "L": (derived.Lstar1 - params.mu / params.lam) / params.beta1,
        "H": derived.Hstar1 / params.beta1,
        "F": derived.Fstar1 / params.beta2,
    }
    report = {}
    for name in ("L", "H", "F"):
        observed = (m1.fields()[name].inner - m0.fields()[name].inner) / eps
        report[name] = ModeDifference(name, observed, predicted[name])
    return report


@dataclass(frozen=True)
class FrechetReport:
    taus: Tuple[float, ...]
    errors: Tuple[float, ...]
    orders: Tuple[float, ...]


def frechet_consistency(
    state: SteadyState,
    taus: Sequence[float],
    params: Optional[Parameters] = None,
    mode0: Optional[ModeSolution] = None,
) -> FrechetReport:
    """
    Shift the inner boundary radially by tau, re-solve with rho4 frozen, and compare
    L_tau(1) - L*(1) with tau * L1^0(1).
    """
    params = params or state.params
    mode0 = mode0 or solve_mode(0, state, params)
    errors = []
    for tau in taus:
        shifted = solve_shifted_radial(params, state.rho4, tau, state.grid.N, initial=state)
        change = shifted.L.outer - state.Lstar.outer
        errors.append(abs(change - tau * mode0.L1n.outer))
    orders = observed_orders(taus, errors) if len(taus) > 1 else np.array([])
    return FrechetReport(tuple(float(t) for t in taus), tuple(errors), tuple(float(o) for o in orders))


def write_mode(mode: ModeSolution, state: SteadyState, directory: Path, stem: Optional[str] = None) -> Tuple[Path, Path]:
    """Dump r,L1,H1,F1,p1 as CSV plus a metadata sidecar."""
    stem = stem or f"mode_{mode.n}"
    directory = Path(directory)
    csv_path = write_columns(
        directory / f"{stem}.csv",
        {
            "r": mode.grid.nodes,
            "L1": mode.L1n.values,
            "H1": mode.H1n.values,
            "F1": mode.F1n.values,
            "p1": mode.p1n.values,
        },
    )
    sidecar = write_sidecar(
        directory / f"{stem}.json",
        {
            "n": mode.n,
            "epsilon": mode.grid.epsilon,
            "mu": state.mu,
            "N": mode.grid.N,
            "dp1n_inner": mode.dp1n_inner,
            "dp1n_stencil": mode.dp1n_stencil,
            "eta_n": mode.eta_n,
            "eta_spread": mode.eta_spread,
            "L11n": mode.L11n,
            "H11n": mode.H11n,
            "F11n": mode.F11n,
        },
    )
    return csv_path, sidecar
