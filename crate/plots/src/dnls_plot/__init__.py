"""Figures rendered from the CSV and JSON artifacts of `dnls` runs."""

from .artifacts import ArtifactError, Artifacts
from .figures import KINDS, render

__all__ = ["ArtifactError", "Artifacts", "KINDS", "render"]
