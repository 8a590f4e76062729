from app.experiments.config import ExperimentConfig, load_experiment_config
from app.experiments.report import report
from app.experiments.runner import RUNNERS, run

__all__ = ["ExperimentConfig", "RUNNERS", "load_experiment_config", "report", "run"]
