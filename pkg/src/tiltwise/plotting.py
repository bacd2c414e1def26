"""Sensitivity-curve figures written as SVG files with matplotlib."""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

LABELS = {
    "psi1": "E[Y^1]",
    "psi0": "E[Y^0]",
    "phi1": "E[Y^1 | S=0]",
    "phi0": "E[Y^0 | S=0]",
    "rd_all": "Risk difference (all)",
    "rr_all": "Relative risk (all)",
    "rd_s0": "Risk difference (S=0)",
    "rr_s0": "Relative risk (S=0)",
}
COLORS = {"om": "#1f4e79", "aug": "#b03a2e", "dr": "#1e8449"}


def series_id(estimator: str, interval: str) -> str:
    return estimator if interval == "none" else f"{estimator}-{interval}"


def plot_estimand(rows, estimand: str, path) -> Path:
    """One figure for ``estimand``; x is eta1, y the estimate.

    Each (estimator, interval method) series draws one solid line through
    the point estimates and, when intervals exist, dashed lines for the
    lower and upper bounds. Lines carry SVG ids ``<series>-point``,
    ``<series>-ci_low`` and ``<series>-ci_high``.
    """
    groups = defaultdict(list)
    for r in rows:
        if r.estimand == estimand:
            groups[series_id(r.estimator, r.interval)].append(r)

    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    for sid, rs in sorted(groups.items()):
        rs = sorted(rs, key=lambda r: r.eta1)
        est = rs[0].estimator
        color = COLORS.get(est, "black")
        eta = [r.eta1 for r in rs]
        (ln,) = ax.plot(eta, [r.value for r in rs], "-", color=color, lw=1.5, label=sid)
        ln.set_gid(f"{sid}-point")
        if rs[0].interval != "none":
            for attr in ("ci_low", "ci_high"):
                (ln,) = ax.plot(eta, [getattr(r, attr) for r in rs], "--", color=color, lw=1.0)
                ln.set_gid(f"{sid}-{attr}")
    ax.set_xlabel("eta")
    ax.set_ylabel(LABELS.get(estimand, estimand))
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, format="svg")
    plt.close(fig)
    return path


def plot_curve(curve, outdir) -> list:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    estimands = []
    for r in curve.rows:
        if r.estimand not in estimands:
            estimands.append(r.estimand)
    return [plot_estimand(curve.rows, e, outdir / f"{e}.svg") for e in estimands]
