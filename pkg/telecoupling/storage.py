"""
Artifact storage: atomic CSV/JSON writes, content hashes and run manifests.
"""

import hashlib
import json
import math
import os
from datetime import date, datetime
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np
import pandas as pd

from . import __version__
from .errors import InputError


SIGNIFICANT_DIGITS = 12
FLOAT_FORMAT = f"%.{SIGNIFICANT_DIGITS}g"


class StorageError(InputError):
    """Raised when storage operations fail."""
    pass


def round_significant(value: float) -> float:
    """Round a float to the canonical number of significant digits."""
    if not math.isfinite(value):
        return value
    return float(f"{value:.{SIGNIFICANT_DIGITS}g}")


def _normalize(obj: Any) -> Any:
    """Convert an object tree into JSON-ready builtins with canonical floats."""
    if isinstance(obj, dict):
        return {str(k): _normalize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_normalize(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _normalize(obj.tolist())
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        return round_significant(value) if math.isfinite(value) else None
    if isinstance(obj, (datetime, date)):
        return obj.isoformat()
    if isinstance(obj, pd.Period):
        return str(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def dumps_json(data: Any) -> str:
    """Serialize to canonical JSON (sorted keys, 12 significant digits)."""
    return json.dumps(_normalize(data), indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def frame_to_csv(frame: pd.DataFrame) -> str:
    """Serialize a frame to canonical CSV text."""
    return frame.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def atomic_write_text(path: Path, text: str) -> None:
    """Write text through a temporary file and an atomic rename."""
    path = Path(path)
    temp_file = path.with_name(path.name + ".tmp")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(temp_file, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        temp_file.replace(path)
    except OSError as e:
        if temp_file.exists():
            temp_file.unlink()
        raise StorageError(f"Failed to write {path}: {e}")


def build_report(kind: str, payload: Dict[str, Any], config: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """Wrap a payload in the standard report envelope."""
    return {
        "kind": kind,
        "version": __version__,
        "generated_at": datetime.now().isoformat(timespec="seconds"),
        "config": config or {},
        "payload": payload,
    }


def report_hash(report: Dict[str, Any]) -> str:
    """Hash a report ignoring its timestamp."""
    stable = {k: v for k, v in report.items() if k != "generated_at"}
    return sha256_text(dumps_json(stable))


class ArtifactStore:
    """
    Owns an output directory: writes artifacts atomically and records their hashes.
    """

    DEFAULT_OUT_DIR = Path("telecoupling-out")
    MANIFEST_FILE = "manifest.json"

    def __init__(self, out_dir: Optional[Path] = None):
        """
        Initialize storage with an output directory.

        Args:
            out_dir: Output directory (defaults to $TELECOUPLING_OUT_DIR or ./telecoupling-out)
        """
        if out_dir is None:
            env_out_dir = os.getenv("TELECOUPLING_OUT_DIR")
            out_dir = Path(env_out_dir) if env_out_dir else self.DEFAULT_OUT_DIR
        self.out_dir = Path(out_dir)
        self.hashes: Dict[str, str] = {}
        self._ensure_out_dir()

    def _ensure_out_dir(self) -> None:
        """Create the output directory if it doesn't exist."""
        try:
            self.out_dir.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise StorageError(f"Failed to create output directory: {e}")

    def _write(self, name: str, text: str, hashed_text: Optional[str] = None) -> Path:
        path = self.out_dir / name
        atomic_write_text(path, text)
        self.hashes[name] = sha256_text(hashed_text if hashed_text is not None else text)
        return path

    def write_csv(self, name: str, frame: pd.DataFrame) -> Path:
        """Write a frame as canonical CSV."""
        return self._write(name, frame_to_csv(frame))

    def write_json(self, name: str, data: Dict[str, Any]) -> Path:
        """Write a JSON document; a report's timestamp does not enter its hash."""
        text = dumps_json(data)
        if "generated_at" in data:
            stable = {k: v for k, v in data.items() if k != "generated_at"}
            return self._write(name, text, dumps_json(stable))
        return self._write(name, text)

    def write_manifest(self) -> Path:
        """
        Write manifest.json listing every artifact and its hash.

        Entries from an earlier command in the same directory are kept
        unless this run rewrote the artifact.
        """
        path = self.out_dir / self.MANIFEST_FILE
        artifacts: Dict[str, str] = {}
        if path.exists():
            try:
                with open(path, "r", encoding="utf-8") as f:
                    artifacts = dict(json.load(f).get("artifacts", {}))
            except (OSError, ValueError, AttributeError):
                artifacts = {}
        artifacts = {name: value for name, value in artifacts.items() if (self.out_dir / name).exists()}
        artifacts.update(self.hashes)
        digest = hashlib.sha256()
        for name, value in sorted(artifacts.items()):
            digest.update(f"{name}:{value}\n".encode("utf-8"))
        manifest = {
            "version": __version__,
            "artifacts": dict(sorted(artifacts.items())),
            "content_hash": digest.hexdigest(),
            "last_run_hash": self.content_hash(),
        }
        atomic_write_text(path, dumps_json(manifest))
        return path

    def content_hash(self) -> str:
        """Combined hash over every artifact written so far."""
        digest = hashlib.sha256()
        for name, value in sorted(self.hashes.items()):
            digest.update(f"{name}:{value}\n".encode("utf-8"))
        return digest.hexdigest()

    def get_storage_info(self) -> dict:
        """
        Get information about the output directory.

        Returns:
            Dictionary with storage information
        """
        return {
            "out_dir": str(self.out_dir),
            "artifacts": sorted(self.hashes),
            "content_hash": self.content_hash(),
        }
