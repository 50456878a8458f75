"""Static SVG figures: trajectories, separation strips, histograms, feasibility scatter.

Text is kept as SVG text elements so labels stay searchable. Solutions can only be drawn
together with a passing audit report.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .errors import UnauditedResult  # noqa: E402
from .geometry import Instance, assess_pair, relative_state  # noqa: E402

plt.rcParams["svg.fonttype"] = "none"
plt.rcParams["svg.hashsalt"] = "deconflict"  # stable element ids

NOMINAL_COLOR = "black"
OVERLAY_COLORS = {"deterministic": "blue", "robust": "red"}
STATUS_COLORS = {"feasible": "blue", "infeasible": "red", "timeout": "gray"}


@dataclass(frozen=True)
class Overlay:
    """A solution to draw: ``kind`` is 'deterministic' or 'robust'; ``report`` its audit."""

    kind: str
    controls: Sequence[tuple[float, float]]
    report: object  # VerifyReport (or anything with a boolean ``passed``)
    label: str = ""


@dataclass(frozen=True)
class PlotInfo:
    path: Path
    n_lines: int = 0
    ref_y: float | None = None
    n_points: int = 0


def _check_audit(ov: Overlay):
    if ov.kind not in OVERLAY_COLORS:
        raise ValueError(f"overlay kind must be one of {sorted(OVERLAY_COLORS)}, got {ov.kind!r}")
    if ov.report is None or not getattr(ov.report, "passed", False):
        raise UnauditedResult(f"{ov.kind} solution {ov.label!r} has no passing audit; refusing to plot")


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def pairwise_dmin(inst: Instance, controls=None) -> list[float]:
    """Closest-approach distance of every pair at the given (q, theta) controls."""
    out = []
    for i, j in inst.pairs:
        dx0, dy0, v = relative_state(inst, i, j, controls)
        out.append(assess_pair(dx0, dy0, v, inst.d).d_min)
    return out


def plot_trajectories(inst: Instance, overlays: Sequence[Overlay], path, horizon: float | None = None,
                      title: str | None = None) -> PlotInfo:
    """Nominal straight paths in black with audited solution paths on top."""
    for ov in overlays:
        _check_audit(ov)
        if len(ov.controls) != inst.n:
            raise ValueError(f"overlay {ov.label!r} has {len(ov.controls)} controls for {inst.n} aircraft")
    if horizon is None:
        # long enough to cross the circle at the slowest speed
        span = 2.0 * max(math.hypot(a.x0, a.y0) for a in inst.aircraft)
        horizon = span / min(a.speed for a in inst.aircraft)
    fig, ax = plt.subplots(figsize=(6, 6))
    n = 0
    sets = [("nominal", [(1.0, 0.0)] * inst.n, NOMINAL_COLOR)]
    sets += [(ov.label or ov.kind, ov.controls, OVERLAY_COLORS[ov.kind]) for ov in overlays]
    for label, ctrls, color in sets:
        for k, (a, (q, th)) in enumerate(zip(inst.aircraft, ctrls)):
            vx, vy = a.velocity(q, th)
            ax.plot([a.x0, a.x0 + vx * horizon], [a.y0, a.y0 + vy * horizon], color=color,
                    lw=0.8, label=label if k == 0 else None, gid=f"traj-{label}-{k}")
            n += 1
    ax.set_aspect("equal")
    ax.set_xlabel("x (NM)")
    ax.set_ylabel("y (NM)")
    ax.legend(loc="upper right", fontsize=8)
    ax.set_title(title or inst.id)
    return PlotInfo(_save(fig, path), n_lines=n)


def plot_dmin_strip(groups: Mapping[object, Sequence[float]], path, xlabel: str,
                    d: float = 5.0, title: str = "") -> PlotInfo:
    """Post-solve pairwise closest-approach distances per sweep value, with the norm dashed."""
    if not groups:
        raise ValueError("no groups to plot")
    fig, ax = plt.subplots(figsize=(6, 4))
    keys = list(groups)
    pts = 0
    for x, k in enumerate(keys):
        ys = list(groups[k])
        ax.plot([x] * len(ys), ys, "o", color="red", ms=3, alpha=0.6)
        pts += len(ys)
    ax.axhline(d, color="black", ls="--", lw=1, gid="separation-norm")
    ax.set_xticks(range(len(keys)), [str(k) for k in keys])
    ax.set_xlabel(xlabel)
    ax.set_ylabel("pairwise minimal distance (NM)")
    if title:
        ax.set_title(title)
    return PlotInfo(_save(fig, path), ref_y=d, n_points=pts)


def plot_dmin_histogram(values: Sequence[float], path, d: float = 5.0, bins: int = 40,
                        title: str = "") -> PlotInfo:
    """Histogram of pre-solve pairwise closest-approach distances."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(list(values), bins=bins, color="steelblue")
    ax.axvline(d, color="black", ls="--", lw=1, gid="separation-norm")
    ax.set_xlabel("pairwise minimal distance (NM)")
    ax.set_ylabel("pairs")
    if title:
        ax.set_title(title)
    return PlotInfo(_save(fig, path), ref_y=d, n_points=len(values))


def _status_class(status: str) -> str:
    if status in ("Optimal", "Feasible"):
        return "feasible"
    return "infeasible" if status == "Infeasible" else "timeout"


def plot_feasibility_scatter(rows: Sequence, path, title: str = "") -> PlotInfo:
    """n_c against D^min (conflicting pairs) per results row, coloured by outcome."""
    fig, ax = plt.subplots(figsize=(6, 4))
    by: dict[str, list] = {}
    for r in rows:
        by.setdefault(_status_class(r.status), []).append(r)
    for cls in ("feasible", "infeasible", "timeout"):
        rs = by.get(cls, [])
        if rs:
            ax.scatter([r.n_c for r in rs], [r.d_min_conflict for r in rs], s=14,
                       color=STATUS_COLORS[cls], label=cls)
    ax.set_xlabel("n_c")
    ax.set_ylabel("D^min (NM)")
    ax.legend(fontsize=8)
    if title:
        ax.set_title(title)
    return PlotInfo(_save(fig, path), n_points=len(rows))
