"""Experiment manifest: one JSON document per output directory that records
the configuration, hyperparameters, produced artifacts, and timings, so a
finished experiment is reconstructable from the manifest alone."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field

from .exceptions import ManifestError

MANIFEST_NAME = "manifest.json"


@dataclass
class ExperimentManifest:
    tool_version: str
    config: dict | None = None
    schedule: dict | None = None
    grid: dict | None = None
    training: dict = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict)  # name -> path relative to dir
    timings: dict = field(default_factory=dict)  # label -> seconds

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentManifest":
        return cls(**d)


def manifest_path(out_dir) -> str:
    return os.path.join(out_dir, MANIFEST_NAME)


def load_manifest(out_dir, tool_version: str) -> ExperimentManifest:
    """Load the directory's manifest, or start a fresh one."""
    path = manifest_path(out_dir)
    if os.path.exists(path):
        with open(path) as fh:
            return ExperimentManifest.from_dict(json.load(fh))
    return ExperimentManifest(tool_version=tool_version)


def write_manifest(manifest: ExperimentManifest, out_dir) -> None:
    """Validate that every referenced artifact exists, then write."""
    for name, rel in manifest.artifacts.items():
        full = os.path.join(out_dir, rel)
        if not os.path.exists(full):
            raise ManifestError(f"artifact {name!r} missing at {full}")
    with open(manifest_path(out_dir), "w") as fh:
        json.dump(manifest.to_dict(), fh, indent=2)
