import json
from pathlib import Path

import pytest
import yaml

from app.core.errors import (
    SOLVER_ERRORS,
    ConfigError,
    ConvergenceError,
    HypothesisViolation,
    ManifestError,
)
from app.experiments import RUNNERS, load_experiment_config, report, run
from app.experiments.report import load_manifest
from app.run_experiment import (
    EXIT_CHECKS_FAILED,
    EXIT_CONFIG,
    EXIT_HYPOTHESIS,
    EXIT_OK,
    EXIT_SOLVER,
    exit_status,
    main,
)

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs" / "experiments"


def write_config(directory: Path, **fields) -> Path:
    data = {"name": "steady_smoke", "kind": "steady", "parameter_set": "gap_set", "epsilons": [0.01], "grid": [201]}
    data.update(fields)
    path = directory / f"{data['name']}.yaml"
    path.write_text(yaml.safe_dump(data), encoding="utf-8")
    return path


def file_hashes(record):
    return {entry["path"]: entry["sha256"] for entry in record["files"]}


@pytest.mark.parametrize("path", sorted(CONFIG_DIR.glob("*.yaml")), ids=lambda p: p.stem)
def test_shipped_experiments_load(path):
    config = load_experiment_config(path)
    assert config.name == path.stem
    assert config.kind in RUNNERS


def test_cli_overrides_win(tmp_path):
    config = load_experiment_config(
        CONFIG_DIR / "steady_gap_set.yaml", out=tmp_path, grid=101, seed=5, jobs=None
    )
    assert config.grid == [101]
    assert config.seed == 5
    assert config.jobs == 1
    assert config.run_dir == tmp_path / "steady_gap_set"


@pytest.mark.parametrize(
    "fields",
    [
        dict(kind="unknown"),
        dict(epsilons=[0.01, 0.02]),
        dict(epsilons=[1.5]),
        dict(grid=[200]),
        dict(modes=[-1]),
        dict(parameters={"k1": 1.0}),
        dict(rogue=1),
    ],
)
def test_invalid_experiments_are_config_errors(tmp_path, fields):
    with pytest.raises(ConfigError):
        load_experiment_config(write_config(tmp_path, **fields))


def test_missing_experiment_file(tmp_path):
    with pytest.raises(ConfigError):
        load_experiment_config(tmp_path / "absent.yaml")


def test_lemma_suite_needs_no_parameters():
    config = load_experiment_config(CONFIG_DIR / "lemma_suite.yaml")
    assert config.resolve_parameters() is None
    assert config.ladder(None) == [0.04, 0.02, 0.01]


def test_ladder_defaults_to_the_set_epsilon(tmp_path, gap_set):
    config = load_experiment_config(write_config(tmp_path, epsilons=[]))
    assert config.ladder(gap_set) == [gap_set.epsilon]


def test_steady_run_writes_a_reproducible_manifest(tmp_path):
    path = write_config(tmp_path)
    assert main(["--config", str(path), "--out", str(tmp_path / "runs")]) == EXIT_OK
    run_dir = tmp_path / "runs" / "steady_smoke"
    first = load_manifest(run_dir)["runs"][0]
    assert first["passed"]
    assert first["parameter_set"] == "gap_set"
    assert "Running experiment 'steady_smoke'" in (run_dir / "run.log").read_text(encoding="utf-8")
    assert set(file_hashes(first)) == {"steady_eps0.01.csv", "steady_eps0.01.json", "steady_ladder.csv"}
    assert {check["name"] for check in first["checks"]} == {"boundary_residual", "interior_residual"}

    assert main(["--config", str(path), "--out", str(tmp_path / "runs")]) == EXIT_OK
    runs = load_manifest(run_dir / "manifest.json")["runs"]
    assert len(runs) == 2
    assert file_hashes(runs[1]) == file_hashes(first)

    text = report(run_dir)
    assert text.splitlines()[0] == "steady_smoke (steady, gap_set): PASS, 3 files, 2 checks"
    assert "[PASS] boundary_residual" in text
    assert main(["--report", str(run_dir)]) == EXIT_OK


def test_report_detects_tampering(tmp_path):
    config = load_experiment_config(write_config(tmp_path), out=tmp_path / "runs")
    run(config)
    (config.run_dir / "steady_ladder.csv").write_text("tampered\n", encoding="utf-8")
    with pytest.raises(ManifestError):
        report(config.run_dir)
    (config.run_dir / "steady_ladder.csv").unlink()
    with pytest.raises(ManifestError):
        report(config.run_dir)


@pytest.mark.parametrize("content", [None, "{not json", json.dumps({"runs": []})])
def test_unusable_manifests(tmp_path, content):
    if content is not None:
        (tmp_path / "manifest.json").write_text(content, encoding="utf-8")
    with pytest.raises(ManifestError):
        load_manifest(tmp_path)


def test_missing_manifest_exits_with_solver_status(tmp_path, capsys):
    assert main(["--report", str(tmp_path / "nowhere.json")]) == EXIT_SOLVER
    payload = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert payload["error"] == "manifest_error"


def test_equal_betas_exit_with_the_hypothesis(tmp_path, capsys):
    status = main(["--config", str(CONFIG_DIR / "gap_equal_beta.yaml"), "--out", str(tmp_path)])
    assert status == EXIT_HYPOTHESIS
    payload = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert payload["error"] == "hypothesis_violation"
    assert payload["hypothesis"] == "β₁≠β₂"


def test_bad_config_exits_with_config_status(tmp_path, capsys):
    status = main(["--config", str(write_config(tmp_path, grid=[200])), "--out", str(tmp_path)])
    assert status == EXIT_CONFIG
    assert json.loads(capsys.readouterr().err.strip().splitlines()[-1])["error"] == "config_error"


def test_solver_failure_exits_with_solver_status(tmp_path, monkeypatch, capsys):
    def failing(config, params, run_dir):
        raise ConvergenceError("forced failure", n=0, epsilon=0.01)

    monkeypatch.setitem(RUNNERS, "steady", failing)
    status = main(["--config", str(write_config(tmp_path)), "--out", str(tmp_path)])
    assert status == EXIT_SOLVER
    payload = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert payload["error"] == "convergence_failure"
    assert payload["epsilon"] == 0.01


def test_failed_checks_exit_with_status_one(tmp_path, monkeypatch):
    from app.experiments.runner import Check, RunOutput

    def failing_check(config, params, run_dir):
        output = RunOutput()
        output.add_check(Check.at_most("residual", 1.0, 1e-10))
        return output

    monkeypatch.setitem(RUNNERS, "steady", failing_check)
    assert main(["--config", str(write_config(tmp_path)), "--out", str(tmp_path)]) == EXIT_CHECKS_FAILED


@pytest.mark.parametrize("error_type", SOLVER_ERRORS)
def test_every_solver_error_maps_to_status_three(error_type):
    assert exit_status(error_type("failure")) == EXIT_SOLVER


def test_exit_status_classes():
    assert exit_status(HypothesisViolation("μ_c<0", "failure")) == EXIT_HYPOTHESIS
    assert exit_status(ConfigError("failure")) == EXIT_CONFIG


@pytest.mark.slow
def test_parallel_runs_match_serial_runs(tmp_path):
    path = write_config(tmp_path, epsilons=[0.02, 0.01])
    serial = run(load_experiment_config(path, out=tmp_path / "serial", jobs=1))
    parallel = run(load_experiment_config(path, out=tmp_path / "parallel", jobs=2))
    assert file_hashes(serial) == file_hashes(parallel)
    assert [c["observed"] for c in serial["checks"]] == [c["observed"] for c in parallel["checks"]]
