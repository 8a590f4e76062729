"""Plain-text summary of a run directory's manifest."""

import json
from pathlib import Path
from typing import Dict, List, Union

from app.core.config import settings
from app.core.errors import ManifestError
from app.core.tables import sha256_file


def _manifest_path(path: Union[str, Path]) -> Path:
    path = Path(path)
    return path / settings.manifest_name if path.is_dir() else path


def load_manifest(path: Union[str, Path]) -> Dict:
    path = _manifest_path(path)
    if not path.exists():
        raise ManifestError("manifest not found", path=str(path))
    with open(path, "r", encoding="utf-8") as handle:
        try:
            data = json.load(handle)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"manifest is not valid JSON: {exc}", path=str(path)) from exc
    runs = data.get("runs") if isinstance(data, dict) else None
    if not runs:
        raise ManifestError("manifest lists no runs", path=str(path))
    return data


def verify_files(manifest_path: Path, run: Dict) -> None:
    root = manifest_path.parent
    for entry in run.get("files", []):
        target = root / entry["path"]
        if not target.exists():
            raise ManifestError("file listed in manifest is missing", path=str(target), run=run.get("name"))
        if sha256_file(target) != entry["sha256"]:
            raise ManifestError("file content does not match its recorded hash", path=str(target))


def _format_check(check: Dict) -> str:
    status = "PASS" if check["passed"] else "FAIL"
    return (
        f"  [{status}] {check['name']:<32} {check['observed']:>14.6g} "
        f"{check['relation']:>2} {check['threshold']:<12.6g}"
    )


def report(manifest: Union[str, Path]) -> str:
    """Render pass/fail per run with observed values against thresholds; latest run per name."""
    path = _manifest_path(manifest)
    data = load_manifest(path)
    latest: Dict[str, Dict] = {}
    for run in data["runs"]:
        latest[run["name"]] = run

    lines: List[str] = []
    for name, run in latest.items():
        verify_files(path, run)
        checks = run.get("checks", [])
        verdict = "PASS" if run.get("passed", False) else "FAIL"
        header = f"{name} ({run['kind']}"
        if run.get("parameter_set"):
            header += f", {run['parameter_set']}"
        lines.append(f"{header}): {verdict}, {len(run.get('files', []))} files, {len(checks)} checks")
        lines.extend(_format_check(check) for check in checks)
    return "\n".join(lines)
