"""
Fairness, safety, efficiency and real-time metrics over a finished run.
"""
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from models.traffic_models import CompletionRecord, DelayStats, FrequencyStats, MetricsSummary, RunArtifacts
from utils.logger import get_logger

logger = get_logger("metrics")

MIN_DURATION = 1e-9  # [s]


@dataclass(frozen=True)
class SafetyStats:
    min_distance: Optional[float]  # [m], None when no step had two vehicles
    avg_min_distance: Optional[float]  # [m]
    critical_steps: int
    collisions: int


def jain_index(counts: Sequence[float]) -> float:
    """(sum c)^2 / (N sum c^2); 1.0 for all-zero or empty input"""
    c = np.asarray(counts, dtype=np.float64)
    if c.size == 0:
        return 1.0
    sq = float(np.dot(c, c))
    if sq == 0.0:
        return 1.0
    return float(c.sum()) ** 2 / (c.size * sq)


def gini(counts: Sequence[float]) -> float:
    """Rank-weighted Gini over ascending counts; 0.0 for all-zero or empty input"""
    c = np.sort(np.asarray(counts, dtype=np.float64))
    n = c.size
    total = float(c.sum())
    if n == 0 or total == 0.0:
        return 0.0
    weights = np.arange(n, 0, -1, dtype=np.float64)  # N + 1 - i for i = 1..N
    return (n + 1 - 2.0 * float(np.dot(weights, c)) / total) / n


def pairwise_min_gap(positions: np.ndarray, radius: float) -> Optional[float]:
    """Smallest centre distance minus both circumscribed radii, floored at 0"""
    pts = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
    if len(pts) < 2:
        return None
    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.hypot(diff[..., 0], diff[..., 1])
    iu = np.triu_indices(len(pts), k=1)
    return max(0.0, float(dist[iu].min()) - 2.0 * radius)


def safety_summary(min_gaps: Sequence[Optional[float]], threshold: float, collisions: int = 0) -> SafetyStats:
    """
    Aggregate per-step minimum gaps.
    :param min_gaps: per-step minimum gap, None for steps with fewer than two vehicles
    """
    observed = [g for g in min_gaps if g is not None]
    if not observed:
        return SafetyStats(None, None, 0, collisions)
    critical = sum(1 for g in observed if g < threshold)
    return SafetyStats(min(observed), float(np.mean(observed)), critical, collisions)


def efficiency_summary(completions: Sequence[CompletionRecord], horizon: float):
    """Throughput [veh/hr] and delay statistics (population std)"""
    if horizon <= 0.0:
        raise ValueError(f"horizon must be positive, got {horizon}")
    throughput = len(completions) * 3600.0 / horizon
    if not completions:
        return throughput, DelayStats()
    delays = np.array([c.delay for c in completions], dtype=np.float64)
    stats = DelayStats(
        avg=float(delays.mean()),
        max=float(delays.max()),
        min=float(delays.min()),
        std=float(delays.std()),
    )
    return throughput, stats


def frequency_stats(durations: Sequence[float], warmup: int = 10) -> FrequencyStats:
    """Control-loop rate statistics [Hz] with nearest-rank percentiles"""
    d = np.asarray(durations, dtype=np.float64)
    if d.size > warmup:
        d = d[warmup:]
    if d.size == 0:
        return FrequencyStats()
    hz = 1.0 / np.maximum(d, MIN_DURATION)
    return FrequencyStats(
        avg=float(hz.mean()),
        min=float(hz.min()),
        max=float(hz.max()),
        p10=float(np.percentile(hz, 10, method="inverted_cdf")),
        p90=float(np.percentile(hz, 90, method="inverted_cdf")),
    )


def summarize(artifacts: RunArtifacts, *, label: str, policy: str, demand_level: float, distribution: str,
              horizon: float, Ts: float, critical_threshold: float, warmup: int) -> MetricsSummary:
    """Fold a run's artifacts into the end-of-run summary"""
    counts = list(artifacts.counts.values())
    safety = safety_summary(artifacts.min_gaps, critical_threshold, artifacts.collisions)
    throughput, delay = (0.0, DelayStats()) if horizon <= 0.0 else efficiency_summary(artifacts.completions, horizon)
    summary = MetricsSummary(
        label=label,
        policy=policy,
        demand_level=demand_level,
        distribution=distribution,
        horizon=horizon,
        vehicles=artifacts.spawned,
        jfi_final=jain_index(counts),
        gini_final=gini(counts),
        jfi_series=list(artifacts.jfi_series),
        gini_series=list(artifacts.gini_series),
        min_inter_vehicle_distance=safety.min_distance,
        avg_min_distance=safety.avg_min_distance,
        critical_event_steps=safety.critical_steps,
        critical_event_seconds=safety.critical_steps * Ts,
        collisions=safety.collisions,
        completed=len(artifacts.completions),
        throughput=throughput,
        delay=delay,
        ctrl_freq=frequency_stats(artifacts.durations, warmup),
        aborted=artifacts.aborted,
        abort_reason=artifacts.abort_reason,
        warnings=list(artifacts.warnings),
    )
    logger.info(f"Run {label}: JFI {summary.jfi_final:.4f}, Gini {summary.gini_final:.4f}, "
                f"{summary.completed} completed, {summary.collisions} collisions")
    return summary
