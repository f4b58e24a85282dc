"""Static SVG figures: end-effector paths and manipulability traces."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

MARGIN = 0.05


@dataclass
class PlotTrace:
    """One labeled series: end-effector path (n, 2) and manipulability per step (n,)."""

    label: str
    path: np.ndarray
    manip: np.ndarray

    def __post_init__(self):
        self.path = np.atleast_2d(np.asarray(self.path, dtype=float))
        self.manip = np.asarray(self.manip, dtype=float).ravel()
        if self.path.shape[1] < 2:
            raise ValueError("end-effector path needs two coordinates per point")
        if len(self.path) < 2 or len(self.manip) < 2:
            raise ValueError(f"trace {self.label!r} has fewer than two points")


def padded_limits(values, margin: float = MARGIN) -> tuple[float, float]:
    """Data extent widened by ``margin`` of its span on each side (finite values only)."""
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    if v.size == 0:
        return -1.0, 1.0
    lo, hi = float(v.min()), float(v.max())
    span = hi - lo
    if span == 0:
        span = abs(lo) if lo != 0 else 1.0
    return lo - margin * span, hi + margin * span


def emit_plot(traces: list, path, title: str = "") -> Path:
    """Two panels: end-effector path (x, y) and v against step, one series per trace."""
    if not traces:
        raise ValueError("need at least one trace")
    traces = [t if isinstance(t, PlotTrace) else PlotTrace(*t) for t in traces]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # fixed hash salt and date-free metadata keep the SVG byte-stable across runs
    with matplotlib.rc_context({"svg.hashsalt": "manipulearn", "svg.fonttype": "none"}):
        fig, (ax_path, ax_v) = plt.subplots(1, 2, figsize=(10, 4))
        for t in traces:
            ax_path.plot(t.path[:, 0], t.path[:, 1], label=t.label)
            ax_v.plot(np.arange(len(t.manip)), t.manip, label=t.label)
        xs = np.concatenate([t.path[:, 0] for t in traces])
        ys = np.concatenate([t.path[:, 1] for t in traces])
        ax_path.set_xlim(*padded_limits(xs))
        ax_path.set_ylim(*padded_limits(ys))
        ax_path.set_xlabel("x (m)")
        ax_path.set_ylabel("y (m)")
        ax_path.set_title("end-effector path")
        steps = max(len(t.manip) for t in traces)
        ax_v.set_xlim(*padded_limits([0, steps - 1]))
        ax_v.set_ylim(*padded_limits(np.concatenate([t.manip for t in traces])))
        ax_v.set_xlabel("step")
        ax_v.set_ylabel("manipulability v")
        ax_v.set_title("manipulability over time")
        for ax in (ax_path, ax_v):
            ax.legend(loc="best", fontsize=8)
        if title:
            fig.suptitle(title)
        fig.tight_layout()
        tmp = path.with_name(f".{path.name}.tmp")
        fig.savefig(tmp, format="svg", metadata={"Date": None})
        plt.close(fig)
    tmp.replace(path)
    return path
