"""
SVG figures for runs and grids: fairness bars, control-frequency boxes and
a top-down trajectory snapshot. Output is byte-stable for identical input.
"""
from collections import OrderedDict, defaultdict
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from models.traffic_models import MetricsSummary, VehicleSample  # noqa: E402
from utils.logger import get_logger  # noqa: E402

logger = get_logger("plot_service")

SVG_STYLE = {
    "svg.hashsalt": "fairlane",
    "svg.fonttype": "path",
    "path.simplify": False,
    "figure.figsize": (7.0, 4.0),
}
SVG_METADATA = {"Date": None, "Creator": "FairLane"}


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata=SVG_METADATA)
    plt.close(fig)
    logger.debug(f"Wrote {path}")
    return path


def _scenario(summary: MetricsSummary) -> str:
    return f"{summary.demand_level:.0f}\n{summary.distribution}"


def _grouped(summaries: Sequence[MetricsSummary], value) -> Tuple[List[str], Dict[str, List[float]]]:
    """Scenario labels and one value list per policy, NaN where a cell is missing"""
    scenarios: "OrderedDict[str, None]" = OrderedDict()
    cells: Dict[str, Dict[str, float]] = defaultdict(dict)
    for s in summaries:
        scenarios.setdefault(_scenario(s), None)
        v = value(s)
        cells[s.policy][_scenario(s)] = np.nan if v is None else float(v)
    labels = list(scenarios)
    return labels, {policy: [row.get(label, np.nan) for label in labels] for policy, row in cells.items()}


def bar_chart(path: Path, summaries: Sequence[MetricsSummary], value, title: str, ylabel: str) -> Path:
    """One bar group per scenario, one bar per policy"""
    with plt.rc_context(SVG_STYLE):
        fig, ax = plt.subplots()
        labels, groups = _grouped(summaries, value)
        x = np.arange(len(labels))
        width = 0.8 / max(len(groups), 1)
        for k, (policy, values) in enumerate(groups.items()):
            ax.bar(x + (k - 0.5 * (len(groups) - 1)) * width, values, width, label=policy)
        ax.set_xticks(x)
        ax.set_xticklabels(labels, fontsize=7)
        ax.set_title(title)
        ax.set_ylabel(ylabel)
        if groups:
            ax.legend(fontsize=7)
        fig.tight_layout()
        return _save(fig, path)


def frequency_chart(path: Path, summaries: Sequence[MetricsSummary], floor: Optional[float] = 75.0) -> Path:
    """Box per run drawn from min / p10 / mean / p90 / max of the control rate"""
    with plt.rc_context(SVG_STYLE):
        fig, ax = plt.subplots()
        stats = []
        for s in summaries:
            f = s.ctrl_freq
            if f.avg is None:
                continue
            stats.append({"label": s.label, "med": f.avg, "q1": f.p10, "q3": f.p90,
                          "whislo": f.min, "whishi": f.max, "fliers": []})
        if stats:
            ax.bxp(stats, showfliers=False)
            ax.tick_params(axis="x", labelrotation=60, labelsize=6)
        if floor is not None:
            ax.axhline(floor, color="tab:red", linestyle="--", linewidth=0.8)
        ax.set_title("Control frequency")
        ax.set_ylabel("Hz")
        fig.tight_layout()
        return _save(fig, path)


def trajectory_snapshot(path: Path, samples: Iterable[VehicleSample], half_box: float,
                        extent: float) -> Path:
    """Top-down view of every vehicle's driven path over the box outline"""
    tracks: Dict[int, List[Tuple[float, float]]] = defaultdict(list)
    for sample in samples:
        tracks[sample.id].append((sample.px, sample.py))
    with plt.rc_context(SVG_STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 5.0))
        hb = half_box
        ax.plot([-hb, hb, hb, -hb, -hb], [-hb, -hb, hb, hb, -hb], color="0.4", linewidth=0.8)
        for vid in sorted(tracks):
            xy = np.array(tracks[vid])
            ax.plot(xy[:, 0], xy[:, 1], linewidth=0.6)
        ax.set_xlim(-extent, extent)
        ax.set_ylim(-extent, extent)
        ax.set_aspect("equal")
        ax.set_xlabel("x [m]")
        ax.set_ylabel("y [m]")
        fig.tight_layout()
        return _save(fig, path)


def emit_plots(out_dir: Path, summaries: Sequence[MetricsSummary],
               samples: Optional[Sequence[VehicleSample]] = None,
               half_box: float = 7.0, extent: float = 70.0) -> List[Path]:
    """Write the fairness, frequency and (when samples are given) trajectory figures"""
    out_dir = Path(out_dir)
    written = [
        bar_chart(out_dir / "jfi.svg", summaries, lambda s: s.jfi_final,
                  "Jain's fairness index", "JFI"),
        bar_chart(out_dir / "gini.svg", summaries, lambda s: s.gini_final,
                  "Gini coefficient", "Gini"),
        frequency_chart(out_dir / "frequency.svg", summaries),
    ]
    if samples is not None:
        written.append(trajectory_snapshot(out_dir / "trajectories.svg", samples, half_box, extent))
    logger.info(f"Wrote {len(written)} plots to {out_dir}")
    return written
