"""Reading an artifact directory through its manifest."""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np


class ArtifactError(Exception):
    """The artifact directory cannot back the requested figure."""


class Artifacts:
    """A run directory whose manifest reports a complete run."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        manifest_path = self.root / "manifest.json"
        if not manifest_path.is_file():
            raise ArtifactError(f"{self.root}: no manifest.json")
        self.manifest = json.loads(manifest_path.read_text())
        if not self.manifest.get("complete", False) or self.manifest.get("status") != "ok":
            reason = self.manifest.get("error") or self.manifest.get("status")
            raise ArtifactError(f"{self.root}: manifest is incomplete ({reason})")
        self.files = {f["path"]: f for f in self.manifest.get("files", [])}

    @property
    def command(self) -> str:
        return self.manifest.get("command", "")

    def path(self, name: str) -> Path:
        entry = self.files.get(name)
        if entry is None:
            raise ArtifactError(f"{self.root}: {name} is not listed in the manifest")
        path = self.root / name
        if not path.is_file():
            raise ArtifactError(f"{self.root}: {name} is listed but missing")
        digest = hashlib.sha256(path.read_bytes()).hexdigest()
        if digest != entry["sha256"]:
            raise ArtifactError(f"{self.root}: {name} does not match its manifest hash")
        return path

    def has(self, name: str) -> bool:
        return name in self.files

    def json(self, name: str) -> dict:
        return json.loads(self.path(name).read_text())

    def csv(self, name: str, columns: list[str]) -> dict[str, np.ndarray]:
        """Float columns of `name`; names every required column that is absent."""
        with self.path(name).open(newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise ArtifactError(f"{name}: empty file") from None
            rows = [r for r in reader if r]
        missing = [c for c in columns if c not in header]
        if missing:
            raise ArtifactError(f"{name}: missing columns {', '.join(missing)}")
        out = {}
        for c in columns:
            j = header.index(c)
            out[c] = np.array([float(r[j]) for r in rows], dtype=float)
        return out
