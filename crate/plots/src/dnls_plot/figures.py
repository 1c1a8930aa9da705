"""The four figure kinds. Each reads persisted artifacts only."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .artifacts import ArtifactError, Artifacts  # noqa: E402

DPI = 120
STYLE = {
    "font.family": "DejaVu Sans",
    "font.size": 10,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "figure.figsize": (6.4, 4.4),
    "savefig.dpi": DPI,
    "path.simplify": False,
}


def _save(fig, out: Path) -> Path:
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, dpi=DPI, metadata={"Software": None})
    plt.close(fig)
    return out


def mass_energy_plane(art: Artifacts):
    meta = art.json("threshold_curve.json")
    for key in ("mass_q1", "mass_s"):
        if key not in meta:
            raise ArtifactError(f"threshold_curve.json: missing key {key}")
    cols = art.csv("threshold_curve.csv", ["m", "script_e", "feasible_flag"])
    m_q1, m_s = meta["mass_q1"], meta["mass_s"]
    finite = cols["feasible_flag"] > 0.5
    m, e = cols["m"][finite], cols["script_e"][finite]
    order = np.argsort(m)
    m, e = m[order], e[order]
    top = max(float(np.max(e)) * 1.15 if e.size else 1.0, 1e-12)

    fig, ax = plt.subplots()
    ax.fill_between([0.0, m_s], 0.0, top, color="tab:blue", alpha=0.15, linewidth=0)
    if m.size:
        ax.fill_between(m, 0.0, np.clip(e, 0.0, None), color="tab:blue", alpha=0.25, linewidth=0, label=r"region $\mathcal{K}$")
        ax.plot(m, e, "o-", color="tab:blue", markersize=3, label=r"$\mathcal{E}(m)$")
    ax.axvline(m_s, color="tab:gray", linestyle="--", linewidth=1)
    ax.axvline(m_q1, color="tab:red", linestyle=":", linewidth=1)
    ax.annotate(r"$\mathcal{E}=\infty$ for $m<M(S)$", xy=(0.5 * m_s, 0.92 * top), ha="center", fontsize=8)
    for label, x in ((r"$M(S)$", m_s), (r"$M(Q_1)$", m_q1)):
        ax.annotate(label, xy=(x, top), xytext=(x, 1.01 * top), ha="center", va="bottom", fontsize=9, annotation_clip=False)
    ax.set_xlim(0.0, 1.08 * m_q1)
    ax.set_ylim(0.0, top)
    ax.set_xlabel("mass $m$")
    ax.set_ylabel("energy $e$")
    ax.set_title("Mass/energy plane", pad=16)
    ax.legend(loc="center right")
    return fig


def _relative_deviation(x: np.ndarray, scale: float) -> np.ndarray:
    dev = np.abs(x - x[0]) / scale
    return np.where(dev > 0, dev, np.nan)


def conservation_drift(art: Artifacts):
    cols = art.csv("trajectory.csv", ["t", "mass", "energy", "kinetic", "p1", "p2", "p3"])
    t = cols["t"]
    if t.size == 0:
        raise ArtifactError("trajectory.csv: no rows")
    # Energy and momentum are normalized by the initial kinetic term, which
    # stays positive where E(u0) or P(u0) vanish.
    kin0 = max(abs(cols["kinetic"][0]), np.finfo(float).tiny)
    fig, ax = plt.subplots()
    ax.semilogy(t, _relative_deviation(cols["mass"], abs(cols["mass"][0]) or 1.0), label="mass")
    ax.semilogy(t, _relative_deviation(cols["energy"], kin0), label=r"energy / $\|\nabla u_0\|^2$")
    p = np.sqrt(cols["p1"] ** 2 + cols["p2"] ** 2 + cols["p3"] ** 2)
    ax.semilogy(t, _relative_deviation(p, kin0), label=r"$|P|$ / $\|\nabla u_0\|^2$")
    ax.set_xlabel("t")
    ax.set_ylabel("relative deviation from t = 0")
    ax.set_title("Conservation drift")
    ax.legend(loc="lower right")
    return fig


def virial_overlay(art: Artifacts):
    cols = art.csv("virial.csv", ["t", "Vpp_direct", "Vpp_fd", "I"])
    fig, ax = plt.subplots()
    ax.plot(cols["t"], cols["Vpp_direct"], label=r"$V''$ direct")
    ax.plot(cols["t"], cols["Vpp_fd"], "o", markersize=3, label=r"$V''$ finite difference")
    ax.plot(cols["t"], 8.0 * cols["I"], "--", label=r"$8I(u)$")
    ax.set_xlabel("t")
    ax.set_title("Virial identity")
    ax.legend(loc="best")
    return fig


def i_trace(art: Artifacts):
    cols = art.csv("trajectory.csv", ["t", "i"])
    fig, ax = plt.subplots()
    ax.plot(cols["t"], cols["i"], label=r"$I(u(t))$")
    if art.has("summary.json"):
        summary = art.json("summary.json")
        report = summary.get("i_positivity")
        if report:
            ax.axhline(report["eta"], color="tab:red", linestyle="--", linewidth=1, label=r"$\eta$")
        trusted = summary.get("trusted_until")
        if trusted is not None and cols["t"].size and trusted < cols["t"][-1]:
            ax.axvspan(trusted, cols["t"][-1], color="tab:gray", alpha=0.15, label="untrusted")
    ax.set_xlabel("t")
    ax.set_title("Virial functional along the flow")
    ax.legend(loc="best")
    return fig


KINDS = {
    "mass-energy-plane": mass_energy_plane,
    "conservation-drift": conservation_drift,
    "virial-overlay": virial_overlay,
    "i-trace": i_trace,
}


def render(artifacts: str | Path, kind: str, out: str | Path) -> Path:
    """Renders figure `kind` from the run directory `artifacts` into `out`."""
    if kind not in KINDS:
        raise ArtifactError(f"unknown kind {kind!r}; choose from {', '.join(KINDS)}")
    art = Artifacts(artifacts)
    with plt.rc_context(STYLE):
        fig = KINDS[kind](art)
        return _save(fig, Path(out))
