"""Run configuration shared by the command line and the review service.

Precedence for every setting: explicit flag, then environment (dataset
root only), then config file, then built-in default.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

from .errors import GroupsiftError
from .manifest import Grouping
from .ranking import DistanceMetric, Method

DATASET_ROOT_ENV = "GROUPSIFT_DATASET_ROOT"


class ConfigError(GroupsiftError):
    """Unusable key=value config file."""


@dataclass(frozen=True)
class RunConfig:
    dataset_root: Path
    manifest: Path
    embeddings: Path | None
    grouping: Grouping
    normalized: bool
    distance: DistanceMetric
    method: Method
    output: Path | None
    sweep: bool

    def snapshot(self) -> dict[str, str | bool | None]:
        """JSON-safe copy for session records."""
        return {
            "dataset_root": str(self.dataset_root),
            "manifest": str(self.manifest),
            "embeddings": None if self.embeddings is None else str(self.embeddings),
            "grouping": self.grouping.value,
            "normalized": self.normalized,
            "distance": self.distance.value,
            "method": self.method.value,
            "output": None if self.output is None else str(self.output),
            "sweep": self.sweep,
        }


def load_config_file(path: str | Path) -> dict[str, str]:
    """Parse a key=value file; blank lines and #-comments are ignored."""
    values: dict[str, str] = {}
    for line_no, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{line_no}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not key:
            raise ConfigError(f"{path}:{line_no}: empty key")
        if key in values:
            raise ConfigError(f"{path}:{line_no}: duplicate key {key!r}")
        values[key] = value.strip()
    return values


def env_dataset_root() -> Path | None:
    raw = os.environ.get(DATASET_ROOT_ENV, "").strip()
    return Path(raw) if raw else None
