"""
Finite-difference machinery for L_n = -d2/dr2 - (1/r) d/dr + n^2/r^2 on the annulus.

Interior rows use centered second-order stencils; boundary rows are injected from
BoundaryCondition records with one-sided three-point derivatives. Assembled systems
are row-scaled (interior rows by h^2, derivative rows by h) so residuals read in
field units.
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from app.core.config import settings
from app.core.errors import ConfigError, SolvabilityError, UsageError
from app.core.logging import logger
from app.numerics.grid import BoundaryCondition, Grid, RadialField, Side, check_pair


@dataclass(frozen=True, eq=False)
class DiscreteOperator:
    """Unscaled discrete L_n with blank rows at both boundary nodes."""

    grid: Grid
    n: int
    matrix: sp.csr_matrix

    def apply(self, values: np.ndarray) -> np.ndarray:
        return self.matrix @ np.asarray(values, dtype=float)


def assemble_Ln(grid: Grid, n: int) -> DiscreteOperator:
    if n < 0:
        raise UsageError("mode index must be nonnegative", n=n)
    if grid.N < settings.grid_min_nodes:
        raise ConfigError("grid too coarse for the operator", N=grid.N)
    N, h = grid.N, grid.h
    r = grid.nodes[1:-1]

    main = np.zeros(N)
    lower = np.zeros(N - 1)
    upper = np.zeros(N - 1)
    main[1:-1] = 2.0 / h**2 + n * n / r**2
    lower[:-1] = -1.0 / h**2 + 1.0 / (2.0 * h * r)
    upper[1:] = -1.0 / h**2 - 1.0 / (2.0 * h * r)

    matrix = sp.diags([lower, main, upper], [-1, 0, 1], shape=(N, N), format="csr")
    return DiscreteOperator(grid, n, matrix)


def first_derivative_matrix(grid: Grid) -> sp.csr_matrix:
    """d/dr with centered interior rows and one-sided three-point end rows."""
    N, h = grid.N, grid.h
    rows = [0, 0, 0]
    cols = [0, 1, 2]
    vals = [-3.0, 4.0, -1.0]
    interior = np.arange(1, N - 1)
    rows += list(interior) + list(interior)
    cols += list(interior - 1) + list(interior + 1)
    vals += [-1.0] * (N - 2) + [1.0] * (N - 2)
    rows += [N - 1, N - 1, N - 1]
    cols += [N - 3, N - 2, N - 1]
    vals += [1.0, -4.0, 3.0]
    return sp.csr_matrix(
        (np.asarray(vals) / (2.0 * h), (np.asarray(rows), np.asarray(cols))), shape=(N, N)
    )


def row_scale(grid: Grid) -> np.ndarray:
    scale = np.full(grid.N, grid.h**2)
    scale[0] = scale[-1] = 1.0
    return scale


def boundary_row(grid: Grid, bc: BoundaryCondition) -> Tuple[int, np.ndarray, np.ndarray, float]:
    """
    Sparse description of one boundary row.

    Returns:
        (row index, column indices, scaled coefficients, scaled right-hand side)
    """
    N, h = grid.N, grid.h
    scale = h if bc.b != 0.0 else 1.0
    if bc.side is Side.INNER:
        index = 0
        cols = np.array([0, 1, 2])
        coeffs = bc.a * np.array([1.0, 0.0, 0.0]) + bc.b * np.array([-3.0, 4.0, -1.0]) / (2.0 * h)
    else:
        index = N - 1
        cols = np.array([N - 3, N - 2, N - 1])
        coeffs = bc.a * np.array([0.0, 0.0, 1.0]) + bc.b * np.array([1.0, -4.0, 3.0]) / (2.0 * h)
    return index, cols, coeffs * scale, bc.g * scale


def boundary_matrix(
    grid: Grid, inner: BoundaryCondition, outer: BoundaryCondition
) -> Tuple[sp.csr_matrix, np.ndarray]:
    """Matrix holding only the two scaled boundary rows, plus their right-hand sides."""
    rows, cols, vals = [], [], []
    rhs = np.zeros(grid.N)
    for bc in (inner, outer):
        index, c, v, g = boundary_row(grid, bc)
        rows += [index] * len(c)
        cols += list(c)
        vals += list(v)
        rhs[index] = g
    matrix = sp.csr_matrix((vals, (rows, cols)), shape=(grid.N, grid.N))
    return matrix, rhs


def factorize(matrix: sp.spmatrix, what: str = "linear system"):
    """LU factors of a square sparse system, raising SolvabilityError when singular."""
    try:
        return splu(sp.csc_matrix(matrix))
    except RuntimeError as exc:
        raise SolvabilityError(f"{what} is singular: {exc}") from exc


def solve_linear_system(
    operator: DiscreteOperator,
    rhs: RadialField,
    bcs: Tuple[BoundaryCondition, BoundaryCondition],
) -> RadialField:
    """
    Solve L_n u = rhs in the interior with the given (inner, outer) conditions.

    Boundary entries of `rhs` are ignored; the condition data replace them.
    """
    grid = operator.grid
    grid.require_same(rhs.grid, "operator and right-hand side")
    inner, outer = bcs
    reason = check_pair(inner, outer, operator.n)
    if reason is not None:
        raise SolvabilityError(reason, n=operator.n, inner=inner.kind.value, outer=outer.kind.value)

    bmat, bc_rhs = boundary_matrix(grid, inner, outer)
    scale = row_scale(grid)
    matrix = (sp.diags(scale, 0) @ operator.matrix + bmat).tocsc()
    b = scale * rhs.values
    b[0] = bc_rhs[0]
    b[-1] = bc_rhs[-1]

    lu = factorize(matrix, f"L_{operator.n} boundary-value problem")
    u = lu.solve(b)
    if not np.all(np.isfinite(u)):
        raise SolvabilityError("linear solve produced non-finite values", n=operator.n)

    residual = np.max(np.abs(matrix @ u - b))
    tolerance = 1e-8 * max(1.0, np.max(np.abs(b)), np.max(np.abs(u)))
    if residual > tolerance:
        raise SolvabilityError(
            "boundary-value problem has no consistent solution", residual=residual, n=operator.n
        )
    logger.debug(f"L_{operator.n} solve on N={grid.N}: scaled residual {residual:.2e}")
    return RadialField(grid, u, rhs.name)


def solve_bvp(
    grid: Grid,
    n: int,
    forcing: np.ndarray,
    inner: BoundaryCondition,
    outer: BoundaryCondition,
    name: str = "",
) -> RadialField:
    """Convenience wrapper: assemble L_n and solve with a forcing array."""
    values = np.broadcast_to(np.asarray(forcing, dtype=float), (grid.N,)).copy()
    return solve_linear_system(assemble_Ln(grid, n), RadialField(grid, values, name), (inner, outer))
