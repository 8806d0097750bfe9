"""Figure rendering for simulation traces.

Two figures accompany every written trace: the tracking error on a log scale
(it should fall geometrically once the estimates lock on) and the restored-sum
margin against the q/2 wraparound ceiling together with the actuator's stored
state.  Rendering works from TraceRecord objects; everything is converted to
float only here, at the plotting boundary.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .simloop import TraceRecord

__all__ = ["render_figures"]

_STYLE = {
    "figure.figsize": (7.0, 4.2),
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 10,
}


def _tracking_figure(records: Sequence[TraceRecord], path: Path):
    ks = [r.k for r in records]
    errs = [float(r.y_err_inf) for r in records]
    fig, ax = plt.subplots()
    positive = [e for e in errs if e > 0]
    if positive:
        ax.set_yscale("log")
        errs = [e if e > 0 else min(positive) * 1e-3 for e in errs]
    ax.plot(ks, errs, marker=".", lw=1.0, color="tab:blue")
    ax.set_xlabel("step k")
    ax.set_ylabel("tracking error (inf norm)")
    ax.set_title("Output tracking error")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def _margin_figure(records: Sequence[TraceRecord], path: Path, q: int | None):
    ks = [r.k for r in records]
    fig, ax = plt.subplots()
    ax.plot(ks, [float(r.figure4_norm) for r in records],
            marker=".", lw=1.0, color="tab:orange", label="restored-sum norm")
    failures = [r.k for r in records if not r.restoration_exact]
    if failures:
        ax.axvline(failures[0], color="tab:red", ls=":", lw=1.0,
                   label=f"first restoration failure (k={failures[0]})")
    if q is not None and float(q) < 1e18:
        ax.axhline(q / 2, color="tab:red", ls="--", lw=1.0, label="q/2 ceiling")
    ax.set_xlabel("step k")
    ax.set_ylabel("magnitude")
    ax.set_title("Wraparound margin")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_figures(records: Sequence[TraceRecord], out_dir, stem: str,
                   q: int | None = None) -> list[Path]:
    """Write the two trace figures into out_dir, returning their paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if not records:
        return []
    with plt.rc_context(_STYLE):
        tracking = out_dir / f"{stem}_tracking_error.png"
        margin = out_dir / f"{stem}_restoration_margin.png"
        _tracking_figure(records, tracking)
        _margin_figure(records, margin, q)
    return [tracking, margin]
