"""
Scenario configuration: one strict section per service, defaults from the
reference parameter set.
"""
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from models.data_models import APPROACH_ORDER, Approach, Policy, VehicleParams

DEMAND_LEVELS: Dict[str, float] = {
    "low": 990.0,
    "medium": 2010.0,
    "high": 3600.0,
}

# Order N:E:S:W
DISTRIBUTIONS: Dict[str, Tuple[float, float, float, float]] = {
    "balanced": (1.0, 1.0, 1.0, 1.0),
    "unbalanced": (4.0, 2.0, 1.0, 1.0),
    "highly_unbalanced": (4.0, 3.0, 1.0, 0.0),
}


class Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class VehicleSection(Section):
    m: float = Field(1140.0, gt=0)  # [kg]
    Iz: float = Field(3436.24, gt=0)  # [kg m^2]
    lf: float = Field(1.165, gt=0)  # [m]
    lr: float = Field(1.165, gt=0)  # [m]
    cf: float = Field(155495.0, gt=0)  # [N/rad]
    cr: float = Field(155495.0, gt=0)  # [N/rad]
    length: float = Field(4.42, gt=0)  # [m]
    width: float = Field(1.74, gt=0)  # [m]
    max_accel: float = Field(15.0, gt=0)  # [m/s^2]
    max_steer: float = Field(0.611, gt=0, lt=1.5)  # [rad]
    max_speed: float = Field(18.05, gt=0)  # [m/s]

    def to_params(self) -> VehicleParams:
        return VehicleParams(**self.model_dump())


class PlannerSection(Section):
    h: float = Field(0.1, gt=0)  # [s]
    v_nominal: float = Field(8.0, gt=0)  # [m/s]
    tol_J: float = Field(1e-6, gt=0)
    a_min: float = Field(1e-4, gt=0, le=1)
    iter_max: int = Field(200, ge=1)
    mu_init: float = Field(1e-6, ge=0)
    Q_diag: Tuple[float, float, float, float, float] = (2.0, 2.0, 1.0, 1.0, 0.1)
    R_diag: Tuple[float, float] = (0.5, 0.5)
    Qf_diag: Tuple[float, float, float, float, float] = (20.0, 20.0, 10.0, 10.0, 1.0)
    corner_radius: float = Field(0.5, ge=0)  # [m]
    corner_weight: float = Field(50.0, ge=0)

    @field_validator("Q_diag", "Qf_diag")
    @classmethod
    def _non_negative(cls, v):
        if min(v) < 0.0:
            raise ValueError("state weights must be non-negative")
        return v

    @field_validator("R_diag")
    @classmethod
    def _positive(cls, v):
        if min(v) <= 0.0:
            raise ValueError("input weights must be positive")
        return v


class TrackingSection(Section):
    Q_diag: Tuple[float, float, float, float] = (0.5, 0.3, 1.0, 0.0)
    R: float = Field(0.75, gt=0)
    max_iter: int = Field(150, ge=1)
    eps: float = Field(0.01, gt=0)
    kp: float = Field(2.0, gt=0)  # [1/s]
    d_th: float = Field(1.0, ge=0)  # [m]
    v_th: float = Field(0.3, ge=0)  # [m/s]
    a_strong: float = Field(-4.0, lt=0)  # [m/s^2]
    a_gentle: float = Field(1.0, gt=0)  # [m/s^2]
    schedule_band: float = Field(0.5, ge=0)  # [m/s]
    force_gain_update: bool = False
    tustin_input: bool = False


class RepulsiveSection(Section):
    d_detect: float = Field(6.0, gt=0)  # [m]
    H: float = Field(1.0, gt=0)  # [s]
    dt_pred: float = Field(0.1, gt=0)  # [s]
    gain: float = Field(50.0, ge=0)
    conflict_distance: Optional[float] = Field(2.5, gt=0)  # [m]


class EnvelopeSection(Section):
    mu1: float = Field(0.3, ge=0)  # [s]
    mu2: float = Field(0.3, ge=0)  # [s]
    nu1: float = Field(0.05, ge=0)  # [s^2]
    nu2: float = Field(0.05, ge=0)  # [s^2]
    v0: float = Field(1.0, gt=0)  # [m/s]
    a0: float = Field(1.0, gt=0)  # [m/s^2]
    k_sig: float = Field(5.0, gt=0)
    d_safe: float = Field(2.0, gt=0)  # [m]
    v_phi_floor: float = Field(0.1, gt=0)  # [m/s]
    alpha1: float = Field(2.0, gt=0)
    alpha2: float = Field(4.0, gt=0)
    consider_radius: float = Field(12.0, gt=0)  # [m]
    ego_point_offset: float = Field(2.21, ge=0)  # [m]


class QpSection(Section):
    P_diag: Tuple[float, float] = (1.0, 1.0)
    Q_relax: float = Field(100.0, gt=0)
    beta0: float = Field(1.0, ge=0)
    u_min: Tuple[float, float] = (-0.6109, -15.0)
    u_max: Tuple[float, float] = (0.6109, 15.0)

    @model_validator(mode="after")
    def _box(self) -> "QpSection":
        if min(self.P_diag) <= 0.0:
            raise ValueError("P_diag must be positive")
        if any(lo >= hi for lo, hi in zip(self.u_min, self.u_max)):
            raise ValueError("u_min must be below u_max")
        return self

    @property
    def P(self) -> np.ndarray:
        return np.diag(self.P_diag)


class FairnessSection(Section):
    alpha1: float = Field(0.3, ge=0)
    alpha2: float = Field(0.4, ge=0)
    alpha3: float = Field(0.3, ge=0)
    beta1: float = Field(1.5, ge=0)
    beta2: float = Field(0.5, ge=0)
    delta: float = 0.3
    W: int = Field(50, ge=1)  # [steps]
    r_threshold: float = Field(0.5, gt=0, le=1)

    @model_validator(mode="after")
    def _simplex(self) -> "FairnessSection":
        if abs(self.alpha1 + self.alpha2 + self.alpha3 - 1.0) > 1e-9:
            raise ValueError("payoff weights alpha1 + alpha2 + alpha3 must equal 1")
        if self.beta1 < self.beta2:
            raise ValueError("beta1 must be at least beta2")
        return self


class GeometrySection(Section):
    lane_width: float = Field(3.5, gt=0)  # [m]
    approach_length: float = Field(60.0, gt=0)  # [m] entry to box edge
    stop_bar_offset: float = Field(1.0, ge=0)  # [m] before the box edge
    turn_radius_factor: float = Field(1.25, ge=1)  # times the minimum turning radius
    equalize_route_length: bool = True
    conflict_distance: float = Field(3.0, gt=0)  # [m]
    coordination_radius: float = Field(30.0, gt=0)  # [m]

    @property
    def half_box(self) -> float:
        return 2.0 * self.lane_width


class MovementSplit(Section):
    straight: float = Field(0.5, ge=0)
    left: float = Field(0.25, ge=0)
    right: float = Field(0.25, ge=0)

    @model_validator(mode="after")
    def _sums_to_one(self) -> "MovementSplit":
        if abs(self.straight + self.left + self.right - 1.0) > 1e-9:
            raise ValueError("movement split must sum to 1")
        return self


class DemandSection(Section):
    level: float = Field(990.0, gt=0)  # [veh/hr], or a preset name
    distribution: str = "balanced"
    ratios: Optional[Tuple[float, float, float, float]] = None  # N:E:S:W, overrides distribution
    movement_split: MovementSplit = Field(default_factory=MovementSplit)
    spawn_clearance: float = Field(8.0, gt=0)  # [m]

    @field_validator("level", mode="before")
    @classmethod
    def _preset_level(cls, v):
        if isinstance(v, str):
            if v not in DEMAND_LEVELS:
                raise ValueError(f"unknown demand level {v!r}, expected one of {sorted(DEMAND_LEVELS)}")
            return DEMAND_LEVELS[v]
        return v

    @model_validator(mode="after")
    def _ratios(self) -> "DemandSection":
        if self.ratios is None and self.distribution not in DISTRIBUTIONS:
            raise ValueError(f"unknown distribution {self.distribution!r}, expected one of {sorted(DISTRIBUTIONS)}")
        r = self.weights
        if min(r) < 0.0 or max(r) <= 0.0:
            raise ValueError("demand ratios must be non-negative with at least one positive entry")
        return self

    @property
    def weights(self) -> Tuple[float, float, float, float]:
        return self.ratios if self.ratios is not None else DISTRIBUTIONS[self.distribution]

    def shares(self) -> Dict[Approach, float]:
        total = sum(self.weights)
        return {a: w / total for a, w in zip(APPROACH_ORDER, self.weights)}


class SignalSection(Section):
    cycle: float = Field(60.0, gt=0)  # [s]
    green: float = Field(12.0, gt=0)  # [s] per phase
    yellow: float = Field(2.0, gt=0)  # [s]
    all_red: float = Field(1.0, gt=0)  # [s]

    @model_validator(mode="after")
    def _cycle(self) -> "SignalSection":
        if abs(4.0 * (self.green + self.yellow + self.all_red) - self.cycle) > 1e-9:
            raise ValueError("four phases of green + yellow + all_red must add up to the cycle length")
        return self


class SimulationSection(Section):
    policy: Policy = Policy.PROPOSED
    horizon: float = Field(300.0, ge=0)  # [s]
    Ts: float = Field(0.02, gt=0)  # [s]
    seed: int = 0
    yield_scope: Literal["conflicting", "all"] = "all"
    headway_standstill: float = Field(2.5, ge=0)  # [m]
    headway_time: float = Field(1.2, gt=0)  # [s]
    headway_lateral: float = Field(1.5, gt=0)  # [m]
    headway_lookahead: float = Field(40.0, gt=0)  # [m]
    stop_decel: float = Field(3.0, gt=0)  # [m/s^2]
    completion_tolerance: float = Field(0.5, gt=0)  # [m]
    critical_threshold: float = Field(2.0, gt=0)  # [m]
    warmup_steps: int = Field(10, ge=0)
    max_lateral_error: float = Field(5.0, gt=0)  # [m]
    label: str = ""
    output_dir: Optional[str] = None

    @property
    def steps(self) -> int:
        return int(round(self.horizon / self.Ts))


class ScenarioConfig(Section):
    """Complete, validated description of one simulation run"""
    vehicle: VehicleSection = Field(default_factory=VehicleSection)
    planner: PlannerSection = Field(default_factory=PlannerSection)
    tracking: TrackingSection = Field(default_factory=TrackingSection)
    repulsive: RepulsiveSection = Field(default_factory=RepulsiveSection)
    envelope: EnvelopeSection = Field(default_factory=EnvelopeSection)
    qp: QpSection = Field(default_factory=QpSection)
    fairness: FairnessSection = Field(default_factory=FairnessSection)
    geometry: GeometrySection = Field(default_factory=GeometrySection)
    demand: DemandSection = Field(default_factory=DemandSection)
    signal: SignalSection = Field(default_factory=SignalSection)
    simulation: SimulationSection = Field(default_factory=SimulationSection)

    @property
    def label(self) -> str:
        """Run label, derived from policy and demand when not set"""
        if self.simulation.label:
            return self.simulation.label
        return f"{self.simulation.policy.value}_{int(self.demand.level)}_{self.distribution_name}"

    @property
    def distribution_name(self) -> str:
        return "custom" if self.demand.ratios is not None else self.demand.distribution

    def with_overrides(self, **sections) -> "ScenarioConfig":
        """Copy with some section fields replaced, e.g. with_overrides(simulation={"seed": 3})"""
        data = self.model_dump(exclude_unset=True)
        for name, values in sections.items():
            data.setdefault(name, {}).update(values)
        return ScenarioConfig.model_validate(data)


def preset(level: str, distribution: str, policy: Policy = Policy.PROPOSED, **simulation) -> ScenarioConfig:
    """Config for one cell of the demand level x distribution grid"""
    return ScenarioConfig(
        demand=DemandSection(level=DEMAND_LEVELS[level], distribution=distribution),
        simulation=SimulationSection(policy=policy, **simulation),
    )


def grid_presets(policies: List[Policy], **simulation) -> List[ScenarioConfig]:
    return [preset(level, dist, policy, **simulation)
            for level in DEMAND_LEVELS for dist in DISTRIBUTIONS for policy in policies]
