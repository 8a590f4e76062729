import numpy as np
import pytest
from numpy.polynomial import Polynomial

from app.core.errors import DomainError, UnsupportedModeError, UsageError
from app.experiments.runner import random_model_problems
from app.model.asymptotics import (
    DirichletInner,
    ModelProblem,
    RobinInner,
    A_leading,
    assemble_psi,
    coefficient_A,
    crosscheck_with_bvp,
    eval_psi1,
    inner_slope_leading,
    kernel_K,
    kernel_bound_check,
    psi_inner_slope,
    psi_leading,
    random_trig_polynomial,
    taylor_endpoint_errors,
)
from app.numerics.grid import Grid


def test_psi1_reference_value():
    assert eval_psi1(1, 1.0, 0.99) == pytest.approx(-5.0168350168350168e-05, rel=1e-12)


@pytest.mark.parametrize("n", [0, 1])
def test_psi1_vanishes_with_its_slope_at_the_outer_wall(n):
    for derivative in (0, 1):
        assert eval_psi1(n, 0.7, 1.0, derivative=derivative) == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("n", [0, 1])
def test_psi1_solves_the_mode_equation(n):
    eta = 0.7
    r = np.linspace(0.8, 1.0, 9)
    psi, d1, d2 = (eval_psi1(n, eta, r, derivative=k) for k in range(3))
    np.testing.assert_allclose(-(d2 + d1 / r - n * n * psi / r**2), eta, rtol=1e-12)


@pytest.mark.parametrize("n", [0, 1])
def test_psi1_curvature_at_the_outer_wall(n):
    assert eval_psi1(n, 0.7, 1.0, derivative=2) == pytest.approx(-0.7, abs=1e-13)
    assert eval_psi1(n, 0.7, 1.0, derivative=3) == pytest.approx(0.7, abs=1e-13)


@pytest.mark.parametrize("n", [0, 1])
def test_psi1_third_derivative_differentiates_the_second(n):
    r, h = 0.95, 1e-5
    numeric = (eval_psi1(n, 1.0, r + h, 2) - eval_psi1(n, 1.0, r - h, 2)) / (2.0 * h)
    assert eval_psi1(n, 1.0, r, 3) == pytest.approx(numeric, rel=1e-8)


def test_psi1_argument_checks():
    with pytest.raises(UnsupportedModeError):
        eval_psi1(2, 1.0, 0.9)
    with pytest.raises(DomainError):
        eval_psi1(1, 1.0, 0.0)
    with pytest.raises(UsageError):
        eval_psi1(0, 1.0, 0.9, derivative=4)


def test_kernel_reference_value():
    assert kernel_K(1, Polynomial([1.0]), 0.9, 0.1) == pytest.approx(0.045, rel=1e-13)
    assert kernel_K(1, lambda s: 1.0, 0.9, 0.1) == pytest.approx(0.045, rel=1e-12)


def test_kernel_of_no_forcing_is_zero():
    assert kernel_K(0, None, 0.95, 0.1) == 0.0


def test_kernel_outside_the_annulus():
    with pytest.raises(DomainError):
        kernel_K(0, Polynomial([1.0]), 0.85, 0.1)


@pytest.mark.parametrize("n", [0, 1])
@pytest.mark.parametrize("derivative", [False, True])
def test_polynomial_fast_path_matches_quadrature(n, derivative):
    f = Polynomial([0.3, -1.2, 2.5])(Polynomial([-1.0, 1.0]))
    for r in (0.9, 0.93, 0.97, 1.0):
        fast = kernel_K(n, f, r, 0.1, derivative)
        slow = kernel_K(n, lambda s: float(f(s)), r, 0.1, derivative)
        assert fast == pytest.approx(slow, abs=1e-12)


def test_A_reference_value():
    problem = ModelProblem(0, 1.0, 0.1, RobinInner(beta=1.0, G=0.0))
    assert coefficient_A(problem) == pytest.approx(0.1107359, abs=1e-7)


@pytest.mark.parametrize("eps", [0.1, 0.05, 0.01])
def test_A_approaches_its_first_order_form(eps):
    problem = ModelProblem(1, 0.0, eps, RobinInner(beta=2.0, G=1.0))
    A = coefficient_A(problem)
    assert abs(A - 0.25) < 0.2 * eps
    assert A == pytest.approx(0.25 - eps / 8.0, abs=eps**2)
    assert A == pytest.approx(A_leading(problem), abs=eps**2)


def test_zero_robin_coefficient_for_mode_zero():
    with pytest.raises(DomainError):
        coefficient_A(ModelProblem(0, 1.0, 0.1, RobinInner(beta=0.0, G=0.0)))


@pytest.mark.parametrize("n", [0, 1])
def test_trivial_data_gives_the_zero_solution(n):
    grid = Grid(0.05, 101)
    psi = assemble_psi(ModelProblem(n, 0.0, 0.05, RobinInner(beta=1.0, G=0.0)), grid)
    np.testing.assert_allclose(psi.values, 0.0, atol=1e-15)


def test_model_problem_checks():
    with pytest.raises(UnsupportedModeError):
        ModelProblem(2, 1.0, 0.1, DirichletInner())
    with pytest.raises(DomainError):
        ModelProblem(0, 1.0, 1.5, DirichletInner())


def test_grid_and_problem_must_agree():
    with pytest.raises(UsageError):
        assemble_psi(ModelProblem(0, 1.0, 0.1, DirichletInner()), Grid(0.05, 101))


@pytest.mark.parametrize("n", [0, 1])
def test_dirichlet_value_is_met(n):
    grid = Grid(0.05, 101)
    psi = assemble_psi(ModelProblem(n, 0.8, 0.05, DirichletInner(), Polynomial([0.2, 1.0])), grid)
    assert psi.inner == pytest.approx((1 - n * n) / grid.r_inner**2, abs=1e-13)


@pytest.mark.parametrize("n", [0, 1])
def test_dirichlet_inner_slope_expansion(n):
    eps = 0.05
    slope = psi_inner_slope(ModelProblem(n, 1.0, eps, DirichletInner()))
    assert abs(slope - inner_slope_leading(1.0, eps)) <= 2.0 * eps**3


@pytest.mark.parametrize("n", [0, 1])
@pytest.mark.parametrize("inner", [RobinInner(beta=1.5, G=0.3), DirichletInner()])
def test_closed_form_matches_finite_differences(n, inner):
    f = Polynomial([0.1, -0.4, 0.8])(Polynomial([-1.0, 1.0]))
    report = crosscheck_with_bvp(ModelProblem(n, 0.6, 0.05, inner, f), Grid(0.05, 401))
    assert report.N == 401
    assert report.max_discrepancy <= 1e-8


@pytest.mark.parametrize("n", [0, 1])
def test_endpoint_taylor_orders(n):
    report = taylor_endpoint_errors(n, 1.0, (0.04, 0.02, 0.01))
    assert min(report.value_orders) >= 2.9
    assert min(report.slope_orders) >= 2.9


@pytest.mark.parametrize("n", [0, 1])
def test_kernel_bounds_on_oscillatory_forcing(n):
    report = kernel_bound_check(n, 0.05, samples=50, seed=3)
    assert report.samples == 50
    assert report.violations == 0
    assert report.failures == ()
    assert report.worst_ratio <= 1.0


def test_random_trig_polynomials_respect_their_bound():
    f = random_trig_polynomial(np.random.default_rng(4), origin=0.95, period=0.05, bound=2.0)
    assert f.coefficient_bound == pytest.approx(2.0, rel=1e-14)
    assert np.max(np.abs(f(np.linspace(0.95, 1.0, 501)))) <= 2.0 + 1e-12
    assert f.scaled(0.5).coefficient_bound == pytest.approx(1.0, rel=1e-14)


@pytest.mark.parametrize("n", [0, 1])
@pytest.mark.parametrize("eps", [0.1, 0.05, 0.02])
def test_robin_solution_is_nearly_constant(n, eps):
    problem = ModelProblem(n, 0.5, eps, RobinInner(beta=1.5, G=0.3))
    psi = assemble_psi(problem, Grid(eps, 101))
    assert np.max(np.abs(psi.values - psi_leading(problem))) <= 10.0 * eps**2


@pytest.mark.parametrize("n", [0, 1])
@pytest.mark.parametrize("eps", [0.1, 0.05, 0.02])
def test_small_forcing_leaves_the_expansion_intact(n, eps):
    problem = ModelProblem(n, 0.5, eps, RobinInner(beta=1.5, G=0.3), Polynomial([0.7 * eps**2]))
    psi = assemble_psi(problem, Grid(eps, 101))
    assert np.max(np.abs(psi.values - psi_leading(problem))) <= 10.0 * eps**2


def test_expansions_need_the_robin_variant():
    with pytest.raises(UsageError):
        psi_leading(ModelProblem(0, 1.0, 0.1, DirichletInner()))
    with pytest.raises(UsageError):
        A_leading(ModelProblem(1, 1.0, 0.1, DirichletInner()))


@pytest.mark.slow
def test_random_smooth_problems_match_the_closed_form():
    rng = np.random.default_rng(8)
    for problem in random_model_problems(rng, 20, 0.05):
        assert crosscheck_with_bvp(problem, Grid(problem.epsilon, 401)).max_discrepancy <= 1e-8


@pytest.mark.slow
def test_layered_problems_refine_at_second_order():
    rng = np.random.default_rng(9)
    for problem in random_model_problems(rng, 20, 0.05, length=0.05):
        coarse = crosscheck_with_bvp(problem, Grid(problem.epsilon, 51))
        fine = crosscheck_with_bvp(problem, Grid(problem.epsilon, 101))
        assert coarse.max_discrepancy > 1e-10
        assert coarse.max_discrepancy / fine.max_discrepancy >= 3.5
