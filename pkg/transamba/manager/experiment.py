import os
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field, ValidationError

from ..core.errors import DataError

logger = logging.getLogger(__name__)
logger.setLevel(os.environ.get("LOGLEVEL", "WARN").upper())

MANIFEST_FILE = "manifest.json"


class ArtifactRecord(BaseModel):
    """One command run and the files it produced (paths relative to the output dir)."""

    command: str
    seed: int
    artifacts: List[str] = Field(default_factory=list)
    params: Dict[str, Any] = Field(default_factory=dict)


class ExperimentManifest(BaseModel):
    runs: List[ArtifactRecord] = Field(default_factory=list)


class ExperimentManager:
    """Keeps ``<out>/manifest.json`` listing every command's artifacts and seed."""

    def __init__(self, out_dir: Path):
        self.out_dir = Path(out_dir)
        self.manifest_file = self.out_dir / MANIFEST_FILE
        self.out_dir.mkdir(parents=True, exist_ok=True)
        if not self.manifest_file.exists():
            self._save_manifest(ExperimentManifest())

    def _load_manifest(self) -> ExperimentManifest:
        """Load the manifest"""
        try:
            return ExperimentManifest.model_validate_json(self.manifest_file.read_text(encoding="utf-8"))
        except (OSError, ValidationError) as e:
            raise DataError(f"cannot read manifest {self.manifest_file}: {e}") from e

    def _save_manifest(self, manifest: ExperimentManifest) -> None:
        """Save the manifest"""
        with open(self.manifest_file, "w", encoding="utf-8") as f:
            json.dump(manifest.model_dump(), f, indent=2, sort_keys=True)
            f.write("\n")

    def relative(self, path: Path) -> str:
        path = Path(path)
        try:
            return path.resolve().relative_to(self.out_dir.resolve()).as_posix()
        except ValueError:
            return str(path)

    def record(
        self,
        command: str,
        seed: int,
        artifacts: List[Path],
        params: Optional[Dict[str, Any]] = None,
    ) -> ArtifactRecord:
        """Append a run to the manifest"""
        manifest = self._load_manifest()
        entry = ArtifactRecord(
            command=command,
            seed=seed,
            artifacts=[self.relative(p) for p in artifacts],
            params=params or {},
        )
        manifest.runs.append(entry)
        self._save_manifest(manifest)
        logger.info(f"Recorded {command} run with {len(entry.artifacts)} artifacts")
        return entry

    def runs(self, command: Optional[str] = None) -> List[ArtifactRecord]:
        runs = self._load_manifest().runs
        return [r for r in runs if command is None or r.command == command]


__all__ = ["ArtifactRecord", "ExperimentManager", "ExperimentManifest", "MANIFEST_FILE"]
