"""
Batch execution of scenarios: per-run artifact directories, failure
isolation, optional process parallelism and the cross-run comparison table.
"""
import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from dataclasses_json import dataclass_json

from config import config
from models.data_models import Policy
from models.scenario_config import ScenarioConfig, grid_presets
from models.traffic_models import (
    CompletionRecord,
    MetricsSummary,
    RunArtifacts,
    StepRecord,
    VehicleSample,
)
from services.intersection_sim import run_scenario
from services.plot_service import emit_plots
from services.route_library import build_route_set, cache_key
from services.scenario_loader import log_applied_defaults, parse_config, serialize_config
from utils.logger import Logger, get_logger

logger = get_logger("grid_runner")

TIMESERIES_COLUMNS = [f.name for f in fields(VehicleSample)]
STEP_COLUMNS = [f.name for f in fields(StepRecord)]
COMPLETION_COLUMNS = [f.name for f in fields(CompletionRecord)] + ["delay"]
TIMING_COLUMNS = ["step", "t", "active", "duration_s", "frequency_hz"]
COMPARISON_COLUMNS = [
    "demand_level", "distribution", "policy", "label", "status",
    "collisions", "min_distance", "avg_min_distance", "critical_event_s",
    "completed", "throughput", "delay_avg", "delay_max", "delay_min", "delay_std",
    "jfi", "gini", "freq_avg", "freq_p10", "freq_p90",
]


@dataclass_json
@dataclass
class RunOutcome:
    """Result of one grid cell as recorded in the grid manifest"""
    label: str
    policy: str
    demand_level: float
    distribution: str
    run_dir: str
    ok: bool
    error: Optional[str] = None
    summary: Optional[MetricsSummary] = None


def _cell(value) -> str:
    return "" if value is None else str(value)


def _write_csv(path: Path, columns: Sequence[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fp:
        writer = csv.DictWriter(fp, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _cell(row[k]) for k in columns})


def write_summary(run_dir: Path, summary: MetricsSummary) -> None:
    payload = summary.to_dict()
    timing = {"ctrl_freq": payload.pop("ctrl_freq")}
    (run_dir / "summary.json").write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    (run_dir / "timing.json").write_text(json.dumps(timing, indent=2) + "\n", encoding="utf-8")


def read_summary(run_dir: Path) -> MetricsSummary:
    """Summary of a finished run, with its frequency block when timing.json is present"""
    payload = json.loads((run_dir / "summary.json").read_text(encoding="utf-8"))
    timing_path = run_dir / "timing.json"
    if timing_path.exists():
        payload.update(json.loads(timing_path.read_text(encoding="utf-8")))
    return MetricsSummary.from_dict(payload)


def write_run_artifacts(run_dir: Path, cfg: ScenarioConfig, artifacts: RunArtifacts, plots: bool = True) -> None:
    """Every run file; wall-clock data goes only to timing.csv and timing.json"""
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(serialize_config(cfg), encoding="utf-8")
    _write_csv(run_dir / "timeseries.csv", TIMESERIES_COLUMNS, (asdict(s) for s in artifacts.samples))
    _write_csv(run_dir / "steps.csv", STEP_COLUMNS, (asdict(s) for s in artifacts.steps))
    busy = [s for s in artifacts.steps if s.active]
    _write_csv(run_dir / "timing.csv", TIMING_COLUMNS, (
        {"step": s.step, "t": s.t, "active": s.active, "duration_s": d, "frequency_hz": 1.0 / d if d > 0 else None}
        for s, d in zip(busy, artifacts.durations)
    ))
    _write_csv(run_dir / "completions.csv", COMPLETION_COLUMNS,
               ({**asdict(c), "delay": c.delay} for c in artifacts.completions))
    if artifacts.summary is not None:
        write_summary(run_dir, artifacts.summary)
        if plots:
            emit_plots(run_dir / "plots", [artifacts.summary], artifacts.samples,
                       half_box=cfg.geometry.half_box,
                       extent=cfg.geometry.half_box + cfg.geometry.approach_length)


def run_one(cfg: ScenarioConfig, out_root: Path, cache_dir: Optional[Path] = None, plots: bool = True) -> RunOutcome:
    """Run one scenario into out_root/<label>; any failure is contained in the outcome"""
    run_dir = Path(cfg.simulation.output_dir or out_root) / cfg.label
    run_dir.mkdir(parents=True, exist_ok=True)
    outcome = RunOutcome(label=cfg.label, policy=cfg.simulation.policy.value, demand_level=cfg.demand.level,
                         distribution=cfg.distribution_name, run_dir=str(run_dir), ok=False)
    handler = Logger.attach_run_log(run_dir / "run.log")
    try:
        log_applied_defaults(cfg)
        artifacts = run_scenario(cfg, cache_dir=cache_dir)
        write_run_artifacts(run_dir, cfg, artifacts, plots)
        outcome.ok = not artifacts.aborted
        outcome.error = artifacts.abort_reason
        outcome.summary = artifacts.summary
    except Exception as e:
        outcome.error = f"{type(e).__name__}: {e}"
        logger.error(f"Run {cfg.label} failed: {outcome.error}", exc_info=True)
    finally:
        Logger.detach_run_log(handler)
    return outcome


def expand_grid(policies: Sequence[Policy], **simulation) -> List[ScenarioConfig]:
    """Demand level x distribution x policy grid"""
    return grid_presets(list(policies), **simulation)


def _unique_labels(configs: Sequence[ScenarioConfig]) -> List[ScenarioConfig]:
    seen: Dict[str, int] = {}
    unique = []
    for cfg in configs:
        n = seen.get(cfg.label, 0)
        seen[cfg.label] = n + 1
        unique.append(cfg if n == 0 else cfg.with_overrides(simulation={"label": f"{cfg.label}_{n}"}))
    return unique


def _warm_cache(configs: Sequence[ScenarioConfig], cache_dir: Optional[Path]) -> None:
    """Plan each distinct route set once before workers start"""
    done = set()
    for cfg in configs:
        key = cache_key(cfg)
        if key in done:
            continue
        done.add(key)
        try:
            build_route_set(cfg, cache_dir)
        except Exception as e:
            logger.error(f"Route planning for {cfg.label} failed: {e}", exc_info=True)


def _fmt(value, digits: int = 3) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.{digits}f}"
    return str(value)


def comparison_row(outcome: RunOutcome) -> Dict[str, object]:
    s = outcome.summary
    row: Dict[str, object] = {k: None for k in COMPARISON_COLUMNS}
    row.update(demand_level=outcome.demand_level, distribution=outcome.distribution, policy=outcome.policy,
               label=outcome.label, status="ok" if outcome.ok else "failed")
    if s is not None:
        row.update(collisions=s.collisions, min_distance=s.min_inter_vehicle_distance,
                   avg_min_distance=s.avg_min_distance, critical_event_s=s.critical_event_seconds,
                   completed=s.completed, throughput=s.throughput, delay_avg=s.delay.avg, delay_max=s.delay.max,
                   delay_min=s.delay.min, delay_std=s.delay.std, jfi=s.jfi_final, gini=s.gini_final,
                   freq_avg=s.ctrl_freq.avg, freq_p10=s.ctrl_freq.p10, freq_p90=s.ctrl_freq.p90)
    return row


TABLE_BLOCKS = [
    ("Safety", [("Total collisions", "collisions"), ("Min. distance [m]", "min_distance"),
                ("Avg. min. distance [m]", "avg_min_distance"), ("Critical events [s]", "critical_event_s")]),
    ("Efficiency", [("Completed", "completed"), ("Throughput [veh/hr]", "throughput"),
                    ("Avg. delay [s]", "delay_avg"), ("Max. delay [s]", "delay_max"),
                    ("Min. delay [s]", "delay_min"), ("Std. delay [s]", "delay_std")]),
    ("Fairness", [("JFI", "jfi"), ("Gini", "gini")]),
    ("Control rate", [("Avg. frequency [Hz]", "freq_avg"), ("p10 [Hz]", "freq_p10"), ("p90 [Hz]", "freq_p90")]),
]


def comparison_text(rows: Sequence[Dict[str, object]]) -> str:
    """Aligned table: one block per scenario, one column per policy"""
    scenarios: Dict[tuple, Dict[str, Dict[str, object]]] = {}
    for row in rows:
        scenarios.setdefault((row["demand_level"], row["distribution"]), {})[str(row["policy"])] = row
    lines = []
    for (level, distribution), by_policy in scenarios.items():
        policies = list(by_policy)
        width = max([12] + [len(p) + 2 for p in policies])
        lines.append(f"== {_fmt(level, 0)} veh/hr, {distribution} ==")
        lines.append(f"{'Metric':<26}" + "".join(f"{p:>{width}}" for p in policies))
        lines.append(f"{'Status':<26}" + "".join(f"{str(by_policy[p]['status']):>{width}}" for p in policies))
        for block, metrics in TABLE_BLOCKS:
            lines.append(f"-- {block}")
            for title, key in metrics:
                lines.append(f"{title:<26}" + "".join(f"{_fmt(by_policy[p][key]):>{width}}" for p in policies))
        lines.append("")
    return "\n".join(lines)


def write_comparison(out_root: Path, outcomes: Sequence[RunOutcome]) -> None:
    rows = [comparison_row(o) for o in outcomes]
    _write_csv(out_root / "comparison.csv", COMPARISON_COLUMNS, rows)
    (out_root / "comparison.txt").write_text(comparison_text(rows), encoding="utf-8")
    manifest = [json.loads(o.to_json()) for o in outcomes]
    (out_root / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")


def run_grid(configs: Sequence[ScenarioConfig], jobs: int = 1, out_root: Optional[Path] = None,
             cache_dir: Optional[Path] = None, plots: bool = True) -> int:
    """
    Run every scenario, then write the comparison table.
    :return: 0 when every run finished, 1 when any run failed or aborted
    """
    out_root = Path(out_root or config.app.output_dir)
    out_root.mkdir(parents=True, exist_ok=True)
    configs = _unique_labels(configs)
    logger.info(f"Grid of {len(configs)} runs into {out_root} with {jobs} job(s)")
    _warm_cache(configs, cache_dir)

    outcomes: List[RunOutcome] = []
    if jobs <= 1 or len(configs) <= 1:
        outcomes = [run_one(cfg, out_root, cache_dir, plots) for cfg in configs]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(run_one, cfg, out_root, cache_dir, plots) for cfg in configs]
            for cfg, future in zip(configs, futures):
                try:
                    outcomes.append(future.result())
                except Exception as e:
                    logger.error(f"Worker for {cfg.label} failed: {e}", exc_info=True)
                    outcomes.append(RunOutcome(label=cfg.label, policy=cfg.simulation.policy.value,
                                               demand_level=cfg.demand.level, distribution=cfg.distribution_name,
                                               run_dir=str(out_root / cfg.label), ok=False,
                                               error=f"{type(e).__name__}: {e}"))

    write_comparison(out_root, outcomes)
    summaries = [o.summary for o in outcomes if o.summary is not None]
    if plots:
        emit_plots(out_root / "plots", summaries)
    failed = [o.label for o in outcomes if not o.ok]
    if failed:
        logger.warning(f"{len(failed)} of {len(outcomes)} runs failed: {', '.join(failed)}")
        return 1
    logger.info(f"All {len(outcomes)} runs finished")
    return 0


def read_timeseries(path: Path) -> List[VehicleSample]:
    casts = {f.name: int if f.type in (int, "int") else float for f in fields(VehicleSample)}
    with open(path, newline="", encoding="utf-8") as fp:
        return [VehicleSample(**{k: cast(row[k]) for k, cast in casts.items()}) for row in csv.DictReader(fp)]


def replot(path: Path) -> List[Path]:
    """Re-render plots for a run directory, or the grid plots below a grid root"""
    path = Path(path)
    if (path / "summary.json").exists():
        geometry = ScenarioConfig().geometry
        if (path / "config.json").exists():
            geometry = parse_config((path / "config.json").read_text(encoding="utf-8"), echo_defaults=False).geometry
        series = path / "timeseries.csv"
        samples = read_timeseries(series) if series.exists() else None
        return emit_plots(path / "plots", [read_summary(path)], samples, half_box=geometry.half_box,
                          extent=geometry.half_box + geometry.approach_length)
    summaries = [read_summary(p.parent) for p in sorted(path.glob("*/summary.json"))]
    if not summaries:
        raise FileNotFoundError(f"no run summaries found under {path}")
    return emit_plots(path / "plots", summaries)
