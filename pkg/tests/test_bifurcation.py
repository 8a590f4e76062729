import dataclasses

import numpy as np
import pytest

import app.model.bifurcation as bifurcation
from app.core.config import settings
from app.core.errors import HypothesisViolation, RootNotFoundError
from app.model.bifurcation import (
    BifurcationPoint,
    DistinctnessReport,
    GapReport,
    SweepReport,
    check_gap_hypotheses,
    evaluate_modes,
    find_mu_n,
    g_n,
    gap_analysis,
    grid_convergence,
    mode_distinctness,
    mu_sweep,
    seed_bracket,
)
from app.model.params import compute_mu_c
from app.numerics.convergence import observed_orders
from app.numerics.grid import Grid


def point(n: int, mu: float, prediction: float = 0.0, slope: float = 1.0) -> BifurcationPoint:
    return BifurcationPoint(
        n=n,
        epsilon=0.01,
        N=201,
        mu_n=mu,
        residual=0.0,
        slope=slope,
        prediction=prediction,
        bracket=(mu - 1.0, mu + 1.0),
        scale=1.0,
        evaluations=4,
    )


@pytest.fixture(scope="module")
def evaluation_gap(gap_set):
    return evaluate_modes(0.0, gap_set, Grid(gap_set.epsilon, 201))


def test_gap_between_modes_is_the_slope_difference(evaluation_gap):
    modes = evaluation_gap.modes
    difference = evaluation_gap.g(1) - evaluation_gap.g(0)
    assert difference == pytest.approx(modes[1].dp1n_inner - modes[0].dp1n_inner, rel=1e-12, abs=1e-15)


def test_g_n_matches_a_full_evaluation(evaluation_gap, gap_set):
    assert g_n(1, 0.0, gap_set, Grid(gap_set.epsilon, 201)) == pytest.approx(evaluation_gap.g(1), abs=1e-12)


def test_seed_brackets(gap_set, mode_set):
    assert seed_bracket(0, gap_set) == pytest.approx((-0.2, 0.2))
    assert seed_bracket(2, mode_set) == pytest.approx((-3.0, -1.8))
    assert seed_bracket(4, mode_set) == pytest.approx((-60.0, -36.0))
    assert seed_bracket(4, mode_set)[0] > compute_mu_c(mode_set)


def test_bracket_below_mu_c_is_refused(gap_set):
    with pytest.raises(RootNotFoundError) as info:
        find_mu_n(0, gap_set, bracket=(-10.0, -2.0), grid=Grid(gap_set.epsilon, 201))
    assert info.value.as_dict()["error"] == "root_not_found"
    assert info.value.context["mu_c"] == pytest.approx(compute_mu_c(gap_set))


def test_equal_betas_violate_the_gap_hypothesis(equal_beta_set):
    with pytest.raises(HypothesisViolation) as info:
        check_gap_hypotheses(equal_beta_set)
    assert info.value.hypothesis == "β₁≠β₂"
    with pytest.raises(HypothesisViolation):
        gap_analysis(equal_beta_set, epsilons=(0.01,))


def test_nonnegative_mu_c_violates_the_gap_hypothesis(gap_set):
    with pytest.raises(HypothesisViolation) as info:
        check_gap_hypotheses(gap_set.with_values(rho3=0.0))
    assert info.value.hypothesis == "μ_c<0"
    assert info.value.as_dict()["mu_c"] == 0.0


def test_point_properties():
    assert point(2, -2.5, prediction=-2.4).rel_dev == pytest.approx(0.1 / 2.4)
    assert point(1, 0.3).rel_dev == pytest.approx(0.3)
    assert point(1, 0.0, slope=1e-3).transversal
    assert not point(1, 0.0, slope=1e-8).transversal


def test_sign_changes_are_counted():
    assert SweepReport(2, (0, 1, 2, 3, 4), (1.0, 0.5, -0.2, -1.0, 0.3)).sign_changes == 2
    assert SweepReport(2, (0, 1), (1.0, 2.0)).sign_changes == 0


def test_distinctness_report(mode_set):
    c = mode_set.gamma + mode_set.H0
    points = {0: point(0, -0.01), 1: point(1, 0.01), 2: point(2, -2.4), 3: point(3, -14.4)}
    report = DistinctnessReport(0.01, points, ())
    assert report.min_separation_from_mu1 == pytest.approx(0.02)
    assert report.dominance_holds(mode_set)
    points[2] = point(2, 0.01 - c * 4 * 3 / 2.0 + 0.1)
    assert not DistinctnessReport(0.01, points, ()).dominance_holds(mode_set)


def test_root_accuracy_follows_the_slope():
    assert point(1, 0.0, slope=2.0).mu_accuracy == pytest.approx(0.5 * settings.root_tol)
    assert point(1, 0.0, slope=0.0).mu_accuracy == float("inf")


def test_grid_orders_allow_any_refinement_ratio(gap_set, monkeypatch):
    def quadratic_root(n, params, grid):
        return point(n, 1.0 + 3.0 * (params.epsilon / (grid.N - 1)) ** 2)

    monkeypatch.setattr(bifurcation, "find_mu_n", quadratic_root)
    report = grid_convergence(0, gap_set, sizes=(51, 81, 161))
    assert report.sizes == (51, 81, 161)
    assert len(report.differences) == 2
    assert report.orders == pytest.approx((2.0,), abs=1e-8)


def test_gap_report_properties():
    report = GapReport(
        epsilons=(0.02, 0.01),
        deltas=(4e-5, 1.1e-5),
        predicted=(4e-5, 1e-5),
        constants=(0.1, 0.1),
        mu0=(0.0, 0.0),
        mu1=(0.002, 0.0005),
        slope=1.86,
        mu_gap_orders=(2.0,),
    )
    assert report.scaled_deltas == pytest.approx((0.1, 0.11))
    assert report.constant_error == pytest.approx(0.1)
    assert report.signs_agree
    assert report.mu_gaps == pytest.approx((0.002, 0.0005))
    assert report.rows()[1] == (0.01, 1.1e-5, 1e-5, 0.0, 0.0005)
    assert report.gap_resolution != report.gap_resolution
    resolved = dataclasses.replace(report, mu_accuracies=(1e-6, 1e-6))
    assert resolved.gap_resolution == pytest.approx(500.0)


@pytest.mark.slow
def test_mu1_is_a_transversal_root(gap_set):
    grid = Grid(gap_set.epsilon, 201)
    root = find_mu_n(1, gap_set, grid=grid)
    assert abs(root.residual) <= settings.root_tol * root.scale
    assert root.transversal
    assert abs(root.mu_n) < 0.5
    assert root.evaluations > 2

    shifted = find_mu_n(1, gap_set, bracket=(-0.3, 0.35), grid=grid)
    assert shifted.mu_n == pytest.approx(root.mu_n, abs=1e-7)

    mus = [root.mu_n + d for d in (-0.1, -0.03, 0.03, 0.1)]
    assert mu_sweep(1, gap_set, mus, grid).sign_changes == 1


@pytest.mark.slow
def test_gap_scales_with_epsilon_squared(gap_set):
    report = gap_analysis(gap_set, epsilons=(0.02, 0.01, 0.005))
    assert 1.9 <= report.slope <= 2.1
    assert report.constant_error <= 0.1
    assert report.signs_agree
    assert all(report.mu1_transversal)
    assert all(gap > 0.0 for gap in np.abs(report.mu_gaps))


@pytest.mark.slow
def test_roots_converge_under_grid_refinement(gap_set):
    report = grid_convergence(0, gap_set.with_epsilon(0.04), sizes=(51, 101, 201))
    assert report.sizes == (51, 101, 201)
    assert min(report.orders) >= 1.9


@pytest.mark.slow
def test_higher_modes_are_distinct(mode_set):
    report = mode_distinctness(mode_set, 4, Grid(mode_set.epsilon, 401))
    assert report.min_separation_from_mu1 > 0.0
    assert report.dominance_holds(mode_set)
    assert all(p.transversal for p in report.points.values())
    assert len(report.pairs) == 10


@pytest.mark.slow
def test_mu2_approaches_its_prediction(mode_set):
    ladder = (0.02, 0.01, 0.005)
    deviations = []
    for eps in ladder:
        root = find_mu_n(2, mode_set.with_epsilon(eps), grid=Grid(eps, 401))
        deviations.append(abs(root.mu_n - root.prediction))
    assert np.min(observed_orders(ladder, deviations)) >= 0.9


@pytest.mark.slow
def test_g2_changes_sign_across_its_seed_bracket(mode_set):
    grid = Grid(mode_set.epsilon, 401)
    lo, hi = seed_bracket(2, mode_set)
    assert np.sign(g_n(2, lo, mode_set, grid)) != np.sign(g_n(2, hi, mode_set, grid))


@pytest.mark.slow
def test_g0_is_smooth_on_fine_mu_steps(gap_set):
    params = gap_set.with_epsilon(0.005)
    grid = Grid(0.005, 401)
    values = np.array([g_n(0, k * 1e-7, params, grid) for k in range(5)])
    steps = np.diff(values)
    assert np.all(np.sign(steps) == np.sign(steps[0]))
    assert np.max(np.abs(np.diff(steps))) <= 1e-2 * np.mean(np.abs(steps))


@pytest.mark.slow
def test_mu0_resolves_at_a_small_epsilon(gap_set):
    params = gap_set.with_epsilon(0.005)
    root = find_mu_n(0, params, grid=Grid(0.005, 401))
    assert abs(root.residual) <= settings.root_tol * root.scale
    assert root.mu_accuracy < 1e-6
