"""Figures from real `dnls` runs, when the binary has been built."""

import json
import os
import subprocess
from pathlib import Path

import pytest

from dnls_plot import render

ROOT = Path(__file__).resolve().parents[2]
BINARY = Path(os.environ.get("DNLS_BIN", ROOT / "target" / "debug" / "dnls"))

pytestmark = pytest.mark.skipif(not BINARY.is_file(), reason="dnls binary not built")


def test_virial_run_renders(tmp_path):
    cfg = {
        "grid": {"n": 16, "box_length": 24},
        "evolution": {"dt": 0.01, "t_final": 0.2, "output_stride": 2},
        "init": {"kind": "gaussian", "amp": 0.4, "widths": [2.0, 2.5, 3.0]},
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    out = tmp_path / "run"
    subprocess.run([str(BINARY), "virial", "--config", str(path), "--out", str(out)], check=True, capture_output=True, env={**os.environ, "RUST_LOG": "warn"})
    for kind in ["conservation-drift", "virial-overlay", "i-trace"]:
        assert render(out, kind, tmp_path / f"{kind}.png").stat().st_size > 0
