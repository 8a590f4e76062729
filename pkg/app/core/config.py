from pathlib import Path

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict

PROJECT_ROOT = Path(__file__).resolve().parent.parent.parent


class Settings(BaseSettings):
    # Grid
    grid_n: int = 401
    grid_min_nodes: int = 21

    # Newton driver
    newton_tol: float = 1e-12
    newton_max_iter: int = 50
    newton_min_step: float = 1.0 / 64.0
    newton_step_tol: float = 1e-12  # relative update size that ends refinement
    newton_refine_steps: int = 6

    # Root finding for mu_n
    root_tol: float = 1e-10
    root_max_iter: int = 60
    root_bisection_width: float = 1e-6  # relative bracket width before secant polish
    bracket_expansions: int = 4
    slope_step: float = 1e-4

    # Quadrature for K[f]
    quad_tol: float = 1e-12
    quad_limit: int = 200

    # Experiments
    parameter_sets_dir: Path = PROJECT_ROOT / "configs" / "parameter_sets"
    output_dir: Path = Path("./runs")
    seed: int = 20240611
    jobs: int = 1
    progress: bool = True
    log_level: str = "INFO"

    # Physicality check slack for F* <= M0 etc.
    physicality_slack: float = Field(default=1e-12, ge=0.0)
    # Manifest file name inside each run directory
    manifest_name: str = "manifest.json"

    model_config = SettingsConfigDict(env_prefix="PLAQUE_", env_file=".env", extra="ignore")


settings = Settings()
