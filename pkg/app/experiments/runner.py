"""
Experiment runners, one per kind.

Each runner writes its CSV tables into the run directory and returns the files plus a
list of acceptance checks. Independent (n, eps, mu) tasks go through a process pool;
all file writes happen in the parent process.
"""

import json
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from multiprocessing import Pool
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial import Polynomial

from app.core.config import settings
from app.core.errors import ConfigError, ManifestError
from app.core.logging import logger, run_log
from app.core.tables import sha256_file, write_csv
from app.experiments.config import ExperimentConfig
from app.model.asymptotics import (
    DirichletInner,
    ModelProblem,
    RobinInner,
    coefficient_A,
    crosscheck_with_bvp,
    eval_psi1,
    kernel_bound_check,
    kernel_K,
    taylor_endpoint_errors,
)
from app.model.bifurcation import (
    BifurcationPoint,
    find_mu_n,
    gap_analysis,
    grid_convergence,
    mode_distinctness,
    mu_sweep,
)
from app.model.linearized import (
    ModeSolution,
    eta_first_bracket,
    frechet_consistency,
    mode_difference_diagnostics,
    solve_mode,
    write_mode,
)
from app.model.params import Parameters, bifurcation_prediction, eta_leading, leading_order_coeffs
from app.model.steady_state import SteadyState, solve_steady_state, write_profile
from app.numerics.convergence import observed_orders
from app.numerics.grid import Grid


@dataclass(frozen=True)
class Check:
    name: str
    observed: float
    relation: str
    threshold: float
    passed: bool

    @classmethod
    def at_most(cls, name: str, observed: float, threshold: float) -> "Check":
        return cls(name, float(observed), "<=", float(threshold), bool(observed <= threshold))

    @classmethod
    def at_least(cls, name: str, observed: float, threshold: float) -> "Check":
        return cls(name, float(observed), ">=", float(threshold), bool(observed >= threshold))

    @classmethod
    def above(cls, name: str, observed: float, threshold: float) -> "Check":
        return cls(name, float(observed), ">", float(threshold), bool(observed > threshold))

    @classmethod
    def equals(cls, name: str, observed: float, expected: float) -> "Check":
        return cls(name, float(observed), "==", float(expected), bool(observed == expected))


@dataclass
class RunOutput:
    files: List[Path] = field(default_factory=list)
    checks: List[Check] = field(default_factory=list)

    def add_file(self, path: Path) -> None:
        self.files.append(Path(path))

    def add_check(self, check: Optional[Check]) -> None:
        if check is not None:
            self.checks.append(check)


def _map(func: Callable, tasks: Sequence, jobs: int) -> List:
    """Results in submission order, serially when jobs == 1."""
    if jobs <= 1 or len(tasks) <= 1:
        return [func(task) for task in tasks]
    with Pool(processes=min(jobs, len(tasks))) as pool:
        return pool.map(func, tasks)


def _order_check(name: str, steps: Sequence[float], errors: Sequence[float], threshold: float) -> Optional[Check]:
    if len(steps) < 2:
        return None
    orders = observed_orders(steps, errors)
    return Check.at_least(name, float(np.min(orders)), threshold)


def _tag(epsilon: float) -> str:
    return f"eps{epsilon:g}"


# Pool tasks: top-level so they pickle


def _steady_task(task: Tuple[Parameters, int]) -> SteadyState:
    params, N = task
    return solve_steady_state(params, Grid(params.epsilon, N))


def _modes_task(task: Tuple[Parameters, int, Tuple[int, ...]]) -> Tuple[SteadyState, Dict[int, ModeSolution]]:
    params, N, modes = task
    state = solve_steady_state(params, Grid(params.epsilon, N))
    return state, {n: solve_mode(n, state, params) for n in modes}


def _root_task(task: Tuple[int, Parameters, int]) -> BifurcationPoint:
    n, params, N = task
    return find_mu_n(n, params, grid=Grid(params.epsilon, N))


def _crosscheck_task(task: Tuple[ModelProblem, int]) -> float:
    problem, N = task
    return crosscheck_with_bvp(problem, Grid(problem.epsilon, N)).max_discrepancy


# steady


def run_steady(config: ExperimentConfig, params: Parameters, run_dir: Path) -> RunOutput:
    output = RunOutput()
    ladder = config.ladder(params)
    N = config.grid[0]
    states = _map(_steady_task, [(params.with_epsilon(eps), N) for eps in ladder], config.jobs)

    rows, devs = [], {"L": [], "H": [], "F": [], "rho4": []}
    worst_boundary, worst_interior = 0.0, 0.0
    for eps, state in zip(ladder, states):
        at_eps = params.with_epsilon(eps)
        derived = leading_order_coeffs(at_eps)
        for path in write_profile(state, run_dir, stem=f"steady_{_tag(eps)}"):
            output.add_file(path)
        L_first = at_eps.rho3 * (at_eps.gamma + at_eps.H0) / at_eps.lam + eps * derived.Lstar1
        dev_L = np.max(np.abs(state.Lstar.values - L_first))
        dev_H = np.max(np.abs(state.Hstar.values - (at_eps.H0 + eps * derived.Hstar1)))
        dev_F = np.max(np.abs(state.Fstar.values - eps * derived.Fstar1))
        dev_rho4 = abs(state.rho4 - derived.rho4_leading) if derived.rho4_leading is not None else float("nan")
        for key, value in zip(("L", "H", "F", "rho4"), (dev_L, dev_H, dev_F, dev_rho4)):
            devs[key].append(float(value))
        worst_boundary = max(worst_boundary, state.residuals.max_boundary)
        worst_interior = max(worst_interior, state.residuals.max_interior)
        rows.append(
            (
                eps,
                N,
                state.mu,
                state.rho4,
                derived.rho4_leading,
                dev_L,
                dev_H,
                dev_F,
                dev_rho4,
                state.pstar.inner,
                state.diagnostics.d2p,
                state.residuals.max_interior,
                state.residuals.max_boundary,
                ";".join(state.warnings),
            )
        )

    output.add_file(
        write_csv(
            run_dir / "steady_ladder.csv",
            [
                "epsilon",
                "N",
                "mu",
                "rho4",
                "rho4_leading",
                "dev_L",
                "dev_H",
                "dev_F",
                "dev_rho4",
                "p_inner",
                "d2p_inner",
                "residual_interior",
                "residual_boundary",
                "warnings",
            ],
            rows,
        )
    )
    output.add_check(Check.at_most("boundary_residual", worst_boundary, 1e-10))
    output.add_check(Check.at_most("interior_residual", worst_interior, 1e-10))
    for key in ("L", "H", "F"):
        output.add_check(_order_check(f"order_{key}_star", ladder, devs[key], 1.9))
    output.add_check(_order_check("order_rho4", ladder, devs["rho4"], 0.9))
    return output


# modes


def run_modes(config: ExperimentConfig, params: Parameters, run_dir: Path) -> RunOutput:
    output = RunOutput()
    ladder = config.ladder(params)
    N = config.grid[0]
    modes = tuple(config.modes)
    results = _map(_modes_task, [(params.with_epsilon(eps), N, modes) for eps in ladder], config.jobs)

    rows, difference_rows = [], []
    l1_devs: Dict[int, List[float]] = {n: [] for n in modes}
    eta_devs: Dict[int, List[float]] = {n: [] for n in modes}
    slope_errors: Dict[int, List[float]] = {n: [] for n in modes}
    difference_devs: Dict[str, List[float]] = {"L": [], "H": [], "F": []}
    worst_p_inner = 0.0
    for eps, (state, solved) in zip(ladder, results):
        at_eps = params.with_epsilon(eps)
        derived = leading_order_coeffs(at_eps)
        bracket = eta_first_bracket(at_eps, derived, state.rho4)
        L_lead = at_eps.mu / at_eps.lam - derived.Lstar1
        for n, mode in solved.items():
            for path in write_mode(mode, state, run_dir, stem=f"mode_n{n}_{_tag(eps)}"):
                output.add_file(path)
            dev_L1 = float(np.max(np.abs(mode.L1n.values - L_lead)))
            dev_eta = abs(mode.eta_n - eta_leading(at_eps))
            predicted_slope = eps * mode.eta_n * (1.0 + 0.5 * eps)
            slope_error = abs(mode.dp1n_inner - predicted_slope)
            worst_p_inner = max(worst_p_inner, abs(mode.p1n.inner - (1 - n * n) / state.grid.r_inner**2))
            l1_devs[n].append(dev_L1)
            eta_devs[n].append(dev_eta)
            slope_errors[n].append(slope_error)
            rows.append(
                (
                    n,
                    eps,
                    N,
                    state.mu,
                    mode.dp1n_inner,
                    mode.dp1n_stencil,
                    predicted_slope,
                    mode.eta_n,
                    mode.eta_spread,
                    bracket,
                    dev_L1,
                    dev_eta,
                    mode.L11n,
                    mode.H11n,
                    mode.F11n,
                )
            )
        if 0 in solved and 1 in solved:
            for name, diff in mode_difference_diagnostics(solved[1], solved[0], state, at_eps).items():
                difference_devs[name].append(diff.deviation)
                difference_rows.append((eps, name, diff.observed, diff.predicted, diff.deviation))

    output.add_file(
        write_csv(
            run_dir / "modes.csv",
            [
                "n",
                "epsilon",
                "N",
                "mu",
                "dp1n_inner",
                "dp1n_stencil",
                "predicted_dp1n",
                "eta_n",
                "eta_spread",
                "eta_first_bracket",
                "dev_L1",
                "dev_eta",
                "L11n",
                "H11n",
                "F11n",
            ],
            rows,
        )
    )
    output.add_check(Check.at_most("p1_inner_dirichlet", worst_p_inner, 1e-12))
    for n in modes:
        output.add_check(_order_check(f"order_L1_n{n}", ladder, l1_devs[n], 0.9))
        output.add_check(_order_check(f"order_eta_n{n}", ladder, eta_devs[n], 0.9))
        if n in (0, 1):
            output.add_check(_order_check(f"order_dp1_n{n}", ladder, slope_errors[n], 2.9))

    if difference_rows:
        output.add_file(
            write_csv(
                run_dir / "mode_differences.csv",
                ["epsilon", "field", "observed", "predicted", "deviation"],
                difference_rows,
            )
        )
        for name, values in difference_devs.items():
            output.add_check(_order_check(f"order_difference_{name}", ladder, values, 0.9))

    if 0 in modes and config.tau_fractions:
        state, solved = results[0]
        taus = [fraction * state.epsilon for fraction in config.tau_fractions]
        report = frechet_consistency(state, taus, params.with_epsilon(ladder[0]), mode0=solved[0])
        output.add_file(
            write_csv(run_dir / "frechet.csv", ["tau", "error"], list(zip(report.taus, report.errors)))
        )
        if report.orders:
            output.add_check(Check.at_least("order_frechet", min(report.orders), 1.9))
    return output


# mu_sweep


def _bifurcation_rows(points: Sequence[BifurcationPoint]) -> List[Tuple]:
    return [(p.n, p.epsilon, p.mu_n, p.residual, p.slope, p.prediction, p.rel_dev) for p in points]


BIFURCATION_HEADER = ["n", "epsilon", "mu_n", "residual", "slope", "prediction", "rel_dev"]


def run_mu_sweep(config: ExperimentConfig, params: Parameters, run_dir: Path) -> RunOutput:
    output = RunOutput()
    ladder = config.ladder(params)
    N = config.grid[0]
    modes = tuple(config.modes)
    sweep_params = params.with_epsilon(ladder[0])

    if config.mus:
        for n in modes:
            sweep = mu_sweep(n, sweep_params, config.mus, Grid(ladder[0], N))
            output.add_file(
                write_csv(run_dir / f"sweep_n{n}.csv", ["mu", "g"], list(zip(sweep.mus, sweep.values)))
            )
            output.add_check(Check.equals(f"sign_changes_n{n}", sweep.sign_changes, 1))

    tasks = [(n, params.with_epsilon(eps), N) for eps in ladder for n in modes]
    points = _map(_root_task, tasks, config.jobs)
    output.add_file(write_csv(run_dir / "bifurcation.csv", BIFURCATION_HEADER, _bifurcation_rows(points)))

    for point in points:
        output.add_check(
            Check.at_most(f"residual_n{point.n}_{_tag(point.epsilon)}", abs(point.residual), settings.root_tol * point.scale)
        )
        output.add_check(
            Check.above(f"transversal_n{point.n}_{_tag(point.epsilon)}", abs(point.slope), 1e-6 * point.scale)
        )
    for n in modes:
        deviations = [abs(p.mu_n - bifurcation_prediction(n, params)) for p in points if p.n == n]
        output.add_check(_order_check(f"order_mu_n{n}", ladder, deviations, 0.9))

    if len(config.grid) >= 3:
        rows = []
        for n in modes:
            report = grid_convergence(n, params.with_epsilon(ladder[-1]), config.grid)
            rows.extend(
                (n, size, mu, difference, order)
                for size, mu, difference, order in zip(
                    report.sizes,
                    report.mus,
                    (float("nan"),) + report.differences,
                    (float("nan"), float("nan")) + report.orders,
                )
            )
            if report.orders:
                output.add_check(Check.at_least(f"grid_order_n{n}", min(report.orders), 1.9))
        output.add_file(
            write_csv(run_dir / "grid_convergence.csv", ["n", "N", "mu_n", "difference", "order"], rows)
        )
    return output


# gap


def run_gap(config: ExperimentConfig, params: Parameters, run_dir: Path) -> RunOutput:
    output = RunOutput()
    ladder = config.ladder(params)
    report = gap_analysis(params, ladder, config.grid[0])
    output.add_file(
        write_csv(run_dir / "gap.csv", ["epsilon", "delta", "predicted_delta", "mu0", "mu1"], report.rows())
    )
    output.add_file(
        write_csv(
            run_dir / "gap_detail.csv",
            ["epsilon", "scaled_delta", "constant", "mu_gap", "mu1_slope", "mu1_transversal"],
            list(
                zip(
                    report.epsilons,
                    report.scaled_deltas,
                    report.constants,
                    report.mu_gaps,
                    report.mu1_slopes,
                    report.mu1_transversal,
                )
            ),
        )
    )
    if len(ladder) > 1:
        output.add_check(Check.at_least("gap_slope_low", report.slope, 1.9))
        output.add_check(Check.at_most("gap_slope_high", report.slope, 2.1))
    output.add_check(Check.at_most("gap_constant_error", report.constant_error, 0.1))
    output.add_check(Check.equals("gap_signs_agree", report.signs_agree, True))
    output.add_check(Check.above("mu_gap_over_tolerance", report.gap_resolution, 10.0))
    output.add_check(Check.equals("mu1_transversal", all(report.mu1_transversal), True))
    return output


# distinctness


def run_distinctness(config: ExperimentConfig, params: Parameters, run_dir: Path) -> RunOutput:
    output = RunOutput()
    epsilon = config.ladder(params)[-1]
    at_eps = params.with_epsilon(epsilon)
    report = mode_distinctness(at_eps, config.n_max, Grid(epsilon, config.grid[0]))
    points = [report.points[n] for n in sorted(report.points)]
    output.add_file(write_csv(run_dir / "bifurcation.csv", BIFURCATION_HEADER, _bifurcation_rows(points)))
    output.add_file(write_csv(run_dir / "distinctness.csv", ["n_a", "n_b", "separation"], list(report.pairs)))
    output.add_check(Check.above("min_separation_from_mu1", report.min_separation_from_mu1, 0.0))
    if config.n_max >= 2:
        output.add_check(Check.equals("dominance", report.dominance_holds(at_eps), True))
    for point in points:
        output.add_check(Check.above(f"transversal_n{point.n}", abs(point.slope), 1e-6 * point.scale))
    return output


# lemma_suite


def random_model_problems(
    rng: np.random.Generator, count: int, epsilon: float, length: Optional[float] = None
) -> List[ModelProblem]:
    """
    Quadratic forcing in (r - 1) / length, alternating modes and inner conditions.

    Without `length` the forcing varies on the unit scale; a length comparable to
    epsilon gives a layer whose curvature dominates the finite-difference error.
    """
    shift = Polynomial([-1.0, 1.0]) / (length or 1.0)
    problems = []
    for index in range(count):
        n = index % 2
        eta = rng.uniform(-0.5, 0.5)
        coeffs = rng.uniform(-0.25, 0.25, 3)
        if length is not None:
            coeffs[2] = rng.choice([-1.0, 1.0]) * rng.uniform(0.1, 0.25)
        f = Polynomial(coeffs)(shift)
        if (index // 2) % 2 == 0:
            inner = RobinInner(beta=rng.uniform(1.0, 2.0), G=rng.uniform(-0.25, 0.25))
        else:
            inner = DirichletInner()
        problems.append(ModelProblem(n=n, eta=eta, epsilon=epsilon, inner=inner, f=f))
    return problems


CROSSCHECK_REFINEMENT = (51, 101)


def _psi1_identities(n: int, eta: float) -> Tuple[float, float, float, float, float]:
    r = np.linspace(0.5, 1.0, 100)
    d0, d1, d2 = (eval_psi1(n, eta, r, derivative=k) for k in range(3))
    operator = np.max(np.abs(-d2 - d1 / r + n * n * d0 / r**2 - eta))
    return (
        float(operator),
        abs(eval_psi1(n, eta, 1.0)),
        abs(eval_psi1(n, eta, 1.0, derivative=1)),
        abs(eval_psi1(n, eta, 1.0, derivative=2) + eta),
        abs(eval_psi1(n, eta, 1.0, derivative=3) - eta),
    )


def run_lemma_suite(config: ExperimentConfig, params: Optional[Parameters], run_dir: Path) -> RunOutput:
    output = RunOutput()
    ladder = config.ladder(None)
    eta = 1.0

    rows = []
    for n in (0, 1):
        operator, value, slope, second, third = _psi1_identities(n, eta)
        rows.append((n, eta, operator, value, slope, second, third))
        output.add_check(Check.at_most(f"psi1_operator_n{n}", operator, 1e-10))
        output.add_check(Check.at_most(f"psi1_endpoint_n{n}", max(value, slope), 1e-13))
        output.add_check(Check.at_most(f"psi1_higher_n{n}", max(second, third), 1e-10))
    output.add_file(
        write_csv(
            run_dir / "lemma_psi1.csv",
            ["n", "eta", "operator_residual", "psi1_at_1", "dpsi1_at_1", "d2_plus_eta", "d3_minus_eta"],
            rows,
        )
    )

    rows = []
    for n in (0, 1):
        taylor = taylor_endpoint_errors(n, eta, ladder)
        rows.extend((n, e, v, s) for e, v, s in zip(taylor.epsilons, taylor.value_errors, taylor.slope_errors))
        if taylor.value_orders:
            output.add_check(Check.at_least(f"taylor_value_order_n{n}", min(taylor.value_orders), 2.9))
            output.add_check(Check.at_least(f"taylor_slope_order_n{n}", min(taylor.slope_orders), 2.9))
    output.add_file(write_csv(run_dir / "lemma_taylor.csv", ["n", "epsilon", "value_error", "slope_error"], rows))

    rows = []
    for n in (0, 1):
        bound = kernel_bound_check(n, ladder[0], samples=config.samples, seed=config.seed)
        rows.append((n, bound.epsilon, bound.samples, bound.violations, bound.worst_ratio))
        output.add_check(Check.equals(f"kernel_violations_n{n}", bound.violations, 0))
    output.add_file(
        write_csv(run_dir / "lemma_kernel.csv", ["n", "epsilon", "samples", "violations", "worst_ratio"], rows)
    )

    reference = [
        ("psi1_n1_r0.99", eval_psi1(1, 1.0, 0.99), -5.0168350168350168e-05, 1e-12),
        ("kernel_n1_f1_r0.9", kernel_K(1, Polynomial([1.0]), 0.9, 0.1), 0.045, 1e-12),
        (
            "A_robin_n0",
            coefficient_A(ModelProblem(0, 1.0, 0.1, RobinInner(beta=1.0, G=0.0))),
            0.1107359,
            1e-7,
        ),
    ]
    rows = []
    for name, value, expected, tol in reference:
        rows.append((name, value, expected, abs(value - expected)))
        output.add_check(Check.at_most(f"reference_{name}", abs(value - expected), tol))
    output.add_file(write_csv(run_dir / "lemma_reference.csv", ["case", "value", "expected", "deviation"], rows))

    rng = np.random.default_rng(config.seed + 1)
    epsilon = 0.05
    smooth = random_model_problems(rng, 20, epsilon)
    layered = random_model_problems(rng, 20, epsilon, length=epsilon)
    accuracy_N = config.grid[0]
    tasks = [(p, accuracy_N) for p in smooth]
    tasks += [(p, N) for p in layered for N in CROSSCHECK_REFINEMENT]
    discrepancies = _map(_crosscheck_task, tasks, config.jobs)
    families = ["smooth"] * len(smooth) + ["layered"] * (2 * len(layered))
    rows = [
        (family, p.n, type(p.inner).__name__, p.eta, N, d)
        for family, (p, N), d in zip(families, tasks, discrepancies)
    ]
    output.add_file(
        write_csv(run_dir / "crosscheck.csv", ["family", "n", "inner", "eta", "N", "discrepancy"], rows)
    )
    accuracy = discrepancies[: len(smooth)]
    refined = discrepancies[len(smooth) :]
    ratios = [coarse / fine for coarse, fine in zip(refined[0::2], refined[1::2])]
    output.add_check(Check.at_most(f"crosscheck_N{accuracy_N}", max(accuracy), 1e-8))
    output.add_check(Check.at_least("crosscheck_refinement", min(ratios), 3.5))
    return output


RUNNERS: Dict[str, Callable[[ExperimentConfig, Optional[Parameters], Path], RunOutput]] = {
    "steady": run_steady,
    "modes": run_modes,
    "mu_sweep": run_mu_sweep,
    "gap": run_gap,
    "distinctness": run_distinctness,
    "lemma_suite": run_lemma_suite,
}


def _load_manifest(path: Path) -> Dict:
    if not path.exists():
        return {"runs": []}
    with open(path, "r", encoding="utf-8") as handle:
        try:
            data = json.load(handle)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"manifest is not valid JSON: {exc}", path=str(path)) from exc
    if not isinstance(data, dict) or not isinstance(data.get("runs"), list):
        raise ManifestError("manifest must hold a 'runs' list", path=str(path))
    return data


def run(config: ExperimentConfig) -> Dict:
    """Execute one experiment and append its record to the run directory's manifest."""
    run_dir = config.run_dir
    try:
        run_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"output directory is not writable: {exc}", out=str(run_dir)) from exc

    params = config.resolve_parameters()
    with run_log(run_dir):
        logger.info(f"Running experiment '{config.name}' ({config.kind}) into {run_dir}")
        output = RUNNERS[config.kind](config, params, run_dir)
        _log_verdict(config, output)

    record = {
        "name": config.name,
        "kind": config.kind,
        "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "parameter_set": params.set_name if params is not None else None,
        "seed": config.seed,
        "grid": list(config.grid),
        "files": [
            {"path": path.relative_to(run_dir).as_posix(), "sha256": sha256_file(path)}
            for path in output.files
        ],
        "checks": [asdict(check) for check in output.checks],
        "passed": all(check.passed for check in output.checks),
    }
    manifest_path = run_dir / settings.manifest_name
    manifest = _load_manifest(manifest_path)
    manifest["runs"].append(record)
    with open(manifest_path, "w", encoding="utf-8") as handle:
        json.dump(manifest, handle, indent=2)
        handle.write("\n")
    return record


def _log_verdict(config: ExperimentConfig, output: RunOutput) -> None:
    failed = [check.name for check in output.checks if not check.passed]
    if failed:
        logger.warning(f"Experiment '{config.name}': {len(failed)} checks failed: {', '.join(failed)}")
    else:
        logger.info(f"Experiment '{config.name}': all {len(output.checks)} checks passed")
