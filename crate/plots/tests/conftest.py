import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

FUNCTIONAL_COLUMNS = ["mass", "kinetic", "quartic", "dipolar", "sextic", "energy", "p1", "p2", "p3", "n", "i", "gamma"]
TRAJECTORY_COLUMNS = ["t"] + FUNCTIONAL_COLUMNS + ["linf", "variance", "outer_mass_fraction"]


def fmt(v: float) -> str:
    return "inf" if np.isinf(v) else f"{v:.11e}"


def write_csv(path: Path, columns, rows):
    lines = [",".join(columns)] + [",".join(fmt(v) for v in r) for r in rows]
    path.write_text("\n".join(lines) + "\n")


def seal(root: Path, command: str, complete: bool = True):
    files = []
    for p in sorted(root.rglob("*")):
        if p.is_file() and p.name != "manifest.json":
            data = p.read_bytes()
            files.append({"path": p.relative_to(root).as_posix(), "sha256": hashlib.sha256(data).hexdigest(), "bytes": len(data)})
    manifest = {
        "command": command,
        "status": "ok" if complete else "numerical_failure",
        "complete": complete,
        "files": files,
    }
    if not complete:
        manifest["error"] = "numerical failure: field became non-finite at step 7"
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


@pytest.fixture
def curve_dir(tmp_path):
    root = tmp_path / "curve"
    root.mkdir()
    m_q1 = 240.3366
    m_s = 4.0 / (3.0 * np.sqrt(3.0)) * m_q1
    ms = np.linspace(m_s, m_q1, 6)
    rows = [(0.5 * m_s, np.inf, 0, 3)] + [(m, 1.27 * (m_q1 - m) / (m_q1 - m_s), 1, 1) for m in ms]
    write_csv(root / "threshold_curve.csv", ["m", "script_e", "feasible_flag", "restarts_used"], rows)
    meta = {"mass_q1": m_q1, "mass_s": m_s, "energy_s": 1.27, "epsilon_curve": 0.02, "epsilon_absolute": 0.0254}
    (root / "threshold_curve.json").write_text(json.dumps(meta))
    seal(root, "threshold-curve")
    return root


@pytest.fixture
def trajectory_dir(tmp_path):
    root = tmp_path / "evolve"
    root.mkdir()
    t = np.linspace(0.0, 2.0, 21)
    rows = []
    for k, tk in enumerate(t):
        vals = dict.fromkeys(TRAJECTORY_COLUMNS, 0.0)
        vals.update(t=tk, mass=150.0 * (1 + 1e-14 * k), kinetic=50.0 / (1 + tk), energy=3.0 + 1e-9 * tk**2, p3=1e-12 * k)
        vals.update(i=40.0 / (1 + tk) + 2.0, gamma=0.5, linf=float("nan"), variance=float("nan"))
        rows.append([vals[c] for c in TRAJECTORY_COLUMNS])
    write_csv(root / "trajectory.csv", TRAJECTORY_COLUMNS, rows)
    v = 100 + 16 * t + 4 * t**2
    write_csv(root / "virial.csv", ["t", "V", "Vp", "Vpp_direct", "Vpp_fd", "I"], [(tk, vk, 16 + 8 * tk, 8.0, 8.0 + 1e-4, 1.0) for tk, vk in zip(t, v)])
    summary = {"trusted_until": 1.5, "i_positivity": {"i_initial": 42.0, "i_min": 15.3, "t_min": 2.0, "eta": 21.0, "passed": False}}
    (root / "summary.json").write_text(json.dumps(summary))
    seal(root, "virial")
    return root
