from dataclasses import dataclass, field
from typing import Dict, List, Optional

from dataclasses_json import config, dataclass_json

from models.data_models import Approach, Movement, Policy


def _skip(_value) -> bool:
    return True


@dataclass(frozen=True)
class AllocationRecord:
    """Outcome of one authority allocation"""
    t: int
    winner: int
    eligible_size: int
    winner_iau: float


@dataclass_json
@dataclass
class CompletionRecord:
    """Vehicle that reached the end of its route"""
    id: int
    approach: str
    lane: int
    movement: str
    spawn_time: float  # [s]
    completion_time: float  # [s]
    free_flow: float  # [s]

    @property
    def transit(self) -> float:
        return self.completion_time - self.spawn_time

    @property
    def delay(self) -> float:
        return self.transit - self.free_flow


@dataclass(frozen=True)
class VehicleSample:
    """One (step, vehicle) row of the time series"""
    t: float
    id: int
    px: float
    py: float
    theta: float
    v: float
    omega: float
    delta_cmd: float
    a_cmd: float
    authority_flag: int
    min_h: float
    u2_norm: float
    beta: float


@dataclass(frozen=True)
class StepRecord:
    """Per-step companion row: allocation, population and proximity"""
    step: int
    t: float
    active: int
    holder: Optional[int]
    eligible_size: int
    winner_iau: Optional[float]
    min_gap: Optional[float]
    spawned: int
    completed: int
    deferred: int
    collisions: int
    jfi: float
    gini: float


@dataclass_json
@dataclass
class DelayStats:
    avg: Optional[float] = None
    max: Optional[float] = None
    min: Optional[float] = None
    std: Optional[float] = None


@dataclass_json
@dataclass
class FrequencyStats:
    avg: Optional[float] = None
    min: Optional[float] = None
    max: Optional[float] = None
    p10: Optional[float] = None
    p90: Optional[float] = None


@dataclass_json
@dataclass
class MetricsSummary:
    """End-of-run metrics written to summary.json"""
    label: str = ""
    policy: str = Policy.PROPOSED.value
    demand_level: float = 0.0
    distribution: str = ""
    horizon: float = 0.0  # [s]
    vehicles: int = 0
    jfi_final: float = 1.0
    gini_final: float = 0.0
    jfi_series: List[float] = field(default_factory=list, metadata=config(exclude=_skip))
    gini_series: List[float] = field(default_factory=list, metadata=config(exclude=_skip))
    min_inter_vehicle_distance: Optional[float] = None  # [m], None when never two vehicles
    avg_min_distance: Optional[float] = None  # [m]
    critical_event_steps: int = 0
    critical_event_seconds: float = 0.0
    collisions: int = 0
    completed: int = 0
    throughput: float = 0.0  # [veh/hr]
    delay: DelayStats = field(default_factory=DelayStats)
    ctrl_freq: FrequencyStats = field(default_factory=FrequencyStats)
    aborted: bool = False
    abort_reason: Optional[str] = None
    warnings: List[str] = field(default_factory=list)


@dataclass
class RunArtifacts:
    """Everything a run produces, before it is written to disk"""
    samples: List[VehicleSample] = field(default_factory=list)
    steps: List[StepRecord] = field(default_factory=list)
    durations: List[float] = field(default_factory=list)  # [s] wall clock per step
    completions: List[CompletionRecord] = field(default_factory=list)
    counts: Dict[int, int] = field(default_factory=dict)
    jfi_series: List[float] = field(default_factory=list)
    gini_series: List[float] = field(default_factory=list)
    min_gaps: List[Optional[float]] = field(default_factory=list)
    collisions: int = 0
    spawned: int = 0
    warnings: List[str] = field(default_factory=list)
    aborted: bool = False
    abort_reason: Optional[str] = None
    summary: Optional[MetricsSummary] = None


def route_name(approach: Approach, lane: int, movement: Movement) -> str:
    """Route name used in files and logs, e.g. S1-left"""
    return f"{approach.value}{lane}-{movement.value}"


@dataclass(frozen=True)
class VehicleView:
    """Policy-facing snapshot of one vehicle"""
    id: int
    approach: Approach
    lane: int
    movement: Movement
    v: float  # [m/s]
    s: float  # [m] arc length of the CG along the route
    s_stop: float  # [m]
    s_box_in: float  # [m]
    s_box_out: float  # [m]
    half_length: float  # [m]

    @property
    def route(self) -> str:
        return route_name(self.approach, self.lane, self.movement)

    @property
    def d_stop(self) -> float:
        """Front bumper to stop bar, negative once past it"""
        return self.s_stop - (self.s + self.half_length)

    @property
    def d_box(self) -> float:
        return self.s_box_in - (self.s + self.half_length)

    @property
    def cleared(self) -> bool:
        return self.s - self.half_length > self.s_box_out
