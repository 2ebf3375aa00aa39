"""Static SVG cost curves: mean cost against horizon with a one-sd band, one panel per noise kind."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

from matplotlib import rc_context  # noqa: E402
from matplotlib.backends.backend_svg import FigureCanvasSVG  # noqa: E402
from matplotlib.figure import Figure  # noqa: E402

from ..evaluation import NOISE_KINDS  # noqa: E402
from .scenarios import CONTROLLERS  # noqa: E402
from .sweep import SummaryRow  # noqa: E402

LABELS = {"regret": "Regret-optimal", "h2": "H2", "hinf": "H-infinity", "clairvoyant": "Clairvoyant"}
COLORS = {"regret": "#d62728", "h2": "#1f77b4", "hinf": "#2ca02c", "clairvoyant": "#7f7f7f"}

# fixed ids and no timestamp so identical summaries give identical bytes
_RC = {"svg.hashsalt": "regretsls", "svg.fonttype": "path", "font.size": 9}


def emit_plot(summary: Sequence[SummaryRow], path) -> Path:
    rows = list(summary)
    if not rows:
        raise ValueError("cannot plot an empty summary")
    kinds = [k for k in NOISE_KINDS if any(r.noise == k for r in rows)]
    ncols = min(4, len(kinds))
    nrows = math.ceil(len(kinds) / ncols)
    path = Path(path)
    with rc_context(_RC):
        fig = Figure(figsize=(3.2 * ncols, 2.6 * nrows), layout="constrained")
        FigureCanvasSVG(fig)
        axes = fig.subplots(nrows, ncols, squeeze=False).ravel()
        for ax, kind in zip(axes, kinds):
            for c in CONTROLLERS:
                pts = sorted((r.T, r.mean_cost, r.sd_cost) for r in rows
                             if r.noise == kind and r.controller == c and not math.isnan(r.mean_cost))
                if not pts:
                    continue
                T = [p[0] for p in pts]
                m = [p[1] for p in pts]
                lo = [p[1] - p[2] for p in pts]
                hi = [p[1] + p[2] for p in pts]
                ax.plot(T, m, marker="o" if len(pts) == 1 else None, ms=4, lw=1.4, color=COLORS[c],
                        label=LABELS[c], gid=f"curve-{kind}-{c}")
                if len(pts) > 1:
                    ax.fill_between(T, lo, hi, color=COLORS[c], alpha=0.2, lw=0)
            ax.set_title(kind)
            ax.set_xlabel("horizon T")
            ax.set_ylabel("mean cost")
            ax.grid(True, lw=0.3, alpha=0.5)
        for ax in axes[len(kinds):]:
            ax.set_visible(False)
        axes[0].legend(loc="upper left", fontsize=7, frameon=False)
        try:
            fig.savefig(path, format="svg", metadata={"Date": None})
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def panel_count(path) -> int:
    """Number of visible axes in an SVG written by :func:`emit_plot`."""
    text = Path(path).read_text()
    return text.count('<g id="axes_')
