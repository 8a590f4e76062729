import numpy as np
import pytest
import scipy.sparse as sp

from app.core.errors import ConfigError, ConvergenceError, SolvabilityError, UsageError
from app.numerics.bvp import assemble_Ln, solve_bvp, solve_linear_system
from app.numerics.convergence import loglog_slope, observed_orders, refinement_orders, richardson_differences
from app.numerics.grid import BCKind, BoundaryCondition, Grid, RadialField, Side
from app.numerics.newton import DampingPolicy, newton_solve


@pytest.mark.parametrize("epsilon, N", [(0.0, 101), (1.0, 101), (0.01, 100), (0.01, 11)])
def test_grid_rejects_bad_layouts(epsilon, N):
    with pytest.raises(ConfigError):
        Grid(epsilon, N)


def test_grid_end_nodes_are_exact():
    grid = Grid(0.03, 101)
    assert grid.nodes[0] == 1.0 - 0.03
    assert grid.nodes[-1] == 1.0
    assert grid.h == pytest.approx(0.03 / 100)


def test_field_rejects_wrong_length():
    with pytest.raises(UsageError):
        RadialField(Grid(0.01, 21), np.zeros(22))


def test_boundary_condition_shapes():
    with pytest.raises(ConfigError):
        BoundaryCondition(BCKind.DIRICHLET, Side.INNER, 1.0, 1.0)
    with pytest.raises(ConfigError):
        BoundaryCondition(BCKind.ROBIN, Side.INNER, 1.0, 0.0)
    with pytest.raises(ConfigError):
        BoundaryCondition(BCKind.NEUMANN, Side.OUTER, 0.0, 0.0)
    transfer = BoundaryCondition.transfer(2.0, 0.5)
    assert (transfer.a, transfer.b, transfer.g) == (2.0, -1.0, 0.5)


def test_one_sided_derivatives_are_exact_on_quadratics():
    grid = Grid(0.1, 41)
    u = grid.field(grid.nodes**2)
    assert u.inner_derivative() == pytest.approx(2.0 * grid.r_inner, abs=1e-10)
    assert u.outer_derivative() == pytest.approx(2.0, abs=1e-10)
    np.testing.assert_allclose(u.second_derivative(), 2.0, atol=1e-7)


def test_resample_keeps_profiles_linear_in_the_stretched_coordinate():
    coarse, fine = Grid(0.02, 21), Grid(0.01, 41)
    s = (coarse.nodes - coarse.r_inner) / coarse.epsilon
    moved = coarse.field(3.0 - 2.0 * s).resample(fine)
    s_fine = (fine.nodes - fine.r_inner) / fine.epsilon
    np.testing.assert_allclose(moved.values, 3.0 - 2.0 * s_fine, atol=1e-13)


@pytest.mark.parametrize("n", [0, 1, 3])
def test_quadratic_solutions_are_reproduced(n):
    grid = Grid(0.05, 41)
    r = grid.nodes
    exact = r**2
    forcing = -4.0 + n * n * np.ones_like(r)
    u = solve_bvp(
        grid,
        n,
        forcing,
        BoundaryCondition.dirichlet(Side.INNER, grid.r_inner**2),
        BoundaryCondition.neumann(Side.OUTER, 2.0),
    )
    np.testing.assert_allclose(u.values, exact, atol=1e-10)


def test_second_order_convergence_with_robin_inner_row():
    beta, n = 1.5, 2
    errors, steps = [], []
    for N in (41, 81, 161):
        grid = Grid(0.5, N)
        r = grid.nodes
        forcing = -np.exp(r) - np.exp(r) / r + n * n * np.exp(r) / r**2
        inner = BoundaryCondition.transfer(beta, (beta - 1.0) * np.exp(grid.r_inner))
        u = solve_bvp(grid, n, forcing, inner, BoundaryCondition.neumann(Side.OUTER, np.e))
        errors.append(np.max(np.abs(u.values - np.exp(r))))
        steps.append(grid.h)
    assert np.min(observed_orders(steps, errors)) >= 1.9


def test_neumann_pair_for_mode_zero_is_singular():
    grid = Grid(0.05, 41)
    with pytest.raises(SolvabilityError):
        solve_bvp(
            grid,
            0,
            np.ones(grid.N),
            BoundaryCondition.neumann(Side.INNER),
            BoundaryCondition.neumann(Side.OUTER),
        )


def test_operator_and_forcing_must_share_a_grid():
    op = assemble_Ln(Grid(0.05, 41), 1)
    rhs = RadialField(Grid(0.04, 41), np.zeros(41))
    bcs = (BoundaryCondition.dirichlet(Side.INNER, 0.0), BoundaryCondition.neumann(Side.OUTER))
    with pytest.raises(UsageError):
        solve_linear_system(op, rhs, bcs)


def test_negative_mode_is_a_usage_error():
    with pytest.raises(UsageError):
        assemble_Ln(Grid(0.05, 41), -1)


def test_newton_finds_square_roots():
    result = newton_solve(lambda x: x**2 - np.array([2.0, 9.0]), lambda x: np.diag(2.0 * x), np.array([1.0, 1.0]))
    np.testing.assert_allclose(result.x, [np.sqrt(2.0), 3.0], rtol=1e-12)
    assert result.report.converged
    assert result.report.residual_history[-1] <= 1e-12 * 2.0


def test_newton_failure_carries_the_last_iterate():
    with pytest.raises(ConvergenceError) as info:
        newton_solve(
            lambda x: x**2 + 1.0,
            lambda x: np.diag(2.0 * x),
            np.array([3.0]),
            damping=DampingPolicy(backtrack=False),
            max_iter=5,
        )
    assert info.value.last_iterate is not None
    assert info.value.as_dict()["error"] == "convergence_failure"


def test_observed_orders_and_slopes():
    steps = np.array([0.1, 0.05, 0.025])
    errors = 3.0 * steps**2
    np.testing.assert_allclose(observed_orders(steps, errors), 2.0, rtol=1e-12)
    assert loglog_slope(steps, errors) == pytest.approx(2.0, rel=1e-12)
    np.testing.assert_allclose(richardson_differences([1.0, 1.5, 1.625]), [0.5, 0.125])


def test_observed_orders_need_a_ladder():
    with pytest.raises(ValueError):
        observed_orders([0.1], [1.0])


def test_refinement_orders_with_uneven_ratios():
    steps = np.array([0.02, 0.0125, 0.00625])
    np.testing.assert_allclose(refinement_orders(steps, 1.0 + 3.0 * steps**2), [2.0], rtol=1e-8)
    halving = np.array([0.04, 0.02, 0.01, 0.005])
    np.testing.assert_allclose(refinement_orders(halving, 2.0 - halving**3), [3.0, 3.0], rtol=1e-8)
    assert np.isnan(refinement_orders(steps, [1.0, 1.0, 1.0])[0])
    with pytest.raises(ValueError):
        refinement_orders([0.1, 0.05], [1.0, 1.1])


def test_refinement_resolves_weakly_coupled_unknowns():
    def residual(x):
        return np.array([x[0] - 1.0, 1e-13 * (x[1] - 5.0)])

    def jacobian(x):
        return np.diag([1.0, 1e-13])

    start = np.array([1.0, 4.0])
    assert newton_solve(residual, jacobian, start).x[1] == 4.0
    refined = newton_solve(residual, jacobian, start, polish=True)
    assert refined.x[1] == pytest.approx(5.0, rel=1e-12)
    assert refined.report.iterations >= 1
    assert len(refined.report.residual_history) == refined.report.iterations + 1


def test_sparse_refinement_resolves_weakly_coupled_unknowns():
    def residual(x):
        return np.array([2.0 * x[0] - x[1] * 1e-13 - 2.0, 1e-13 * (x[1] - 5.0)])

    def jacobian(x):
        return sp.csc_matrix(np.array([[2.0, -1e-13], [0.0, 1e-13]]))

    refined = newton_solve(residual, jacobian, np.array([1.0, 4.0]), polish=True)
    np.testing.assert_allclose(refined.x, [1.0 + 2.5e-13, 5.0], rtol=1e-12)
