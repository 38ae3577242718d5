import json
import logging
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from utils.data_exporter import DataExporter, Field, file_hash
from utils.grid import Grid

logger = logging.getLogger(__name__)

STAGES = ("pinning", "profile", "meissner", "isoflux", "bs", "construct", "energy", "onset", "sweep")


def package_version() -> str:
    try:
        return version("glpin")
    except PackageNotFoundError:
        return "0.1.0"


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class StageRecord:
    status: str = "pending"          # pending | ok | cached | failed | skipped
    started: Optional[str] = None
    finished: Optional[str] = None
    outputs: Dict[str, str] = field(default_factory=dict)      # relative path -> sha256
    residuals: Dict[str, Any] = field(default_factory=dict)
    error: Optional[str] = None
    error_type: Optional[str] = None


@dataclass
class RunManifest:
    """Reproduction record of a run: config hash, versions and per-stage outputs"""

    config_hash: str
    name: str
    seed: int
    version: str = field(default_factory=package_version)
    created: str = field(default_factory=_now)
    config: Dict[str, Any] = field(default_factory=dict)
    stages: Dict[str, StageRecord] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(r.status in ("ok", "cached") for r in self.stages.values())

    @property
    def failed_stages(self) -> List[str]:
        return [name for name, r in self.stages.items() if r.status == "failed"]

    def output_hashes(self) -> Dict[str, str]:
        hashes = {}
        for record in self.stages.values():
            hashes.update(record.outputs)
        return dict(sorted(hashes.items()))

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunManifest":
        stages = {k: StageRecord(**v) for k, v in data.get("stages", {}).items()}
        return cls(data["config_hash"], data.get("name", "run"), int(data.get("seed", 0)),
                   data.get("version", package_version()), data.get("created", _now()), data.get("config", {}),
                   stages)


@dataclass
class StageArtifacts:
    fields: Dict[str, Field]
    report: Dict[str, Any]
    arrays: Dict[str, np.ndarray]
    text: Dict[str, str]


class CacheManager:
    """Class to manage the run directory, its manifest and the per-stage artifact cache"""

    def __init__(self, directory: str, manifest: RunManifest, exporter: Optional[DataExporter] = None):
        self.root = Path(directory)
        self.manifest = manifest
        self.exporter = exporter or DataExporter()
        self.manifest_path = self.root / "manifest.json"

    @classmethod
    def open(cls, directory: str, config_hash: str, name: str, seed: int,
             config: Optional[Dict[str, Any]] = None) -> "CacheManager":
        """Resume the manifest of the same config in ``directory`` or start a fresh one"""
        path = Path(directory) / "manifest.json"
        manifest = None
        if path.is_file():
            try:
                previous = RunManifest.from_dict(json.loads(path.read_text()))
                if previous.config_hash == config_hash:
                    manifest = previous
                else:
                    logger.info("manifest in %s belongs to another config; starting fresh", directory)
            except (ValueError, KeyError, TypeError) as e:
                logger.warning("ignoring unreadable manifest %s: %s", path, e)
        if manifest is None:
            manifest = RunManifest(config_hash, name, seed, config=config or {})
        return cls(directory, manifest)

    def stage_dir(self, stage: str) -> Path:
        return self.root / stage

    def record(self, stage: str) -> StageRecord:
        return self.manifest.stages.setdefault(stage, StageRecord())

    def start(self, stage: str) -> StageRecord:
        rec = StageRecord(status="pending", started=_now())
        self.manifest.stages[stage] = rec
        return rec

    def finish(self, stage: str, residuals: Optional[Dict[str, Any]] = None, status: str = "ok") -> StageRecord:
        rec = self.record(stage)
        rec.status = status
        rec.finished = _now()
        if residuals:
            rec.residuals.update(residuals)
        self.save()
        return rec

    def fail(self, stage: str, error: Exception) -> StageRecord:
        rec = self.record(stage)
        rec.status = "failed"
        rec.finished = _now()
        rec.error = str(error)
        rec.error_type = type(error).__name__
        logger.error("stage %s failed: %s", stage, error)
        self.save()
        return rec

    def _register(self, stage: str, path: Path, digest: str) -> None:
        if digest:
            self.record(stage).outputs[str(path.relative_to(self.root))] = digest

    def store(self, stage: str, fields: Optional[Dict[str, Field]] = None, report: Optional[Dict[str, Any]] = None,
              arrays: Optional[Dict[str, np.ndarray]] = None, text: Optional[Dict[str, str]] = None) -> None:
        """
        Persist stage outputs and register their hashes

        Args:
            stage: Stage name, also the subdirectory
            fields: GLF1 fields by name
            report: JSON report
            arrays: Plain arrays saved as .npy
            text: Pre-rendered text files (CSV) by file name
        """
        target = self.stage_dir(stage)
        for name, f in (fields or {}).items():
            path = target / f"{name}.glf"
            self._register(stage, path, self.exporter.write_field(f, path))
        for name, values in (arrays or {}).items():
            path = target / f"{name}.npy"
            path.parent.mkdir(parents=True, exist_ok=True)
            np.save(path, np.asarray(values), allow_pickle=False)
            self._register(stage, path, file_hash(path))
        for name, content in (text or {}).items():
            path = target / name
            self._register(stage, path, self.exporter.write_text(content, path))
        if report is not None:
            path = target / "report.json"
            self._register(stage, path, self.exporter.write_json(report, path))

    def is_current(self, stage: str) -> bool:
        """True when the stage finished and every registered output is on disk with its recorded hash"""
        rec = self.manifest.stages.get(stage)
        if rec is None or rec.status not in ("ok", "cached") or not rec.outputs:
            return False
        for rel, digest in rec.outputs.items():
            path = self.root / rel
            if not path.is_file() or file_hash(path) != digest:
                logger.info("cache miss for %s: %s is missing or changed", stage, rel)
                return False
        return True

    def fetch(self, stage: str, grid: Optional[Grid] = None) -> Optional[StageArtifacts]:
        """Cached artifacts of a stage, or None when they must be recomputed"""
        if not self.is_current(stage):
            return None
        fields, arrays, text, report = {}, {}, {}, {}
        for rel in self.manifest.stages[stage].outputs:
            path = self.root / rel
            if path.suffix == ".glf":
                fields[path.stem] = self.exporter.read_field(path, grid)
            elif path.suffix == ".npy":
                arrays[path.stem] = np.load(path, allow_pickle=False)
            elif path.name == "report.json":
                report = json.loads(path.read_text())
            else:
                text[path.name] = path.read_text()
        self.record(stage).status = "cached"
        logger.info("stage %s served from cache", stage)
        return StageArtifacts(fields, report, arrays, text)

    def save(self) -> None:
        try:
            self.root.mkdir(parents=True, exist_ok=True)
            self.manifest_path.write_text(self.exporter.to_json(self.manifest.to_dict()))
        except OSError as e:
            logger.error("Error writing manifest: %s", e)
