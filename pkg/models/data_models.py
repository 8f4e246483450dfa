from dataclasses import dataclass, field
from typing import Dict, Any, Optional, Tuple
from enum import Enum
import math

import numpy as np
import numpy.typing as npt

DoubleMatrix = npt.NDArray[np.float64]


class Approach(Enum):
    """Intersection approach, named by the side vehicles arrive from"""
    NORTH = "N"
    EAST = "E"
    SOUTH = "S"
    WEST = "W"

    @property
    def rotation(self) -> float:
        """Rotation applied to the canonical south-approach routes"""
        return _APPROACH_ROTATION[self]


# Canonical routes enter from the south heading +y; other approaches are rotations.
_APPROACH_ROTATION = {
    Approach.SOUTH: 0.0,
    Approach.EAST: 0.5 * math.pi,
    Approach.NORTH: math.pi,
    Approach.WEST: 1.5 * math.pi,
}

# Fixed service / tie-break order.
APPROACH_ORDER = (Approach.NORTH, Approach.EAST, Approach.SOUTH, Approach.WEST)


class Movement(Enum):
    """Turning movement through the intersection"""
    STRAIGHT = "straight"
    LEFT = "left"
    RIGHT = "right"


class Policy(Enum):
    """Intersection control policy"""
    PROPOSED = "proposed"
    ALL_WAY_STOP = "all-way-stop"
    PRETIMED_SIGNAL = "pretimed-signal"


@dataclass(frozen=True)
class VehicleState:
    """Planar pose and velocity of one vehicle (planning model state)"""
    px: float = 0.0
    py: float = 0.0
    theta: float = 0.0
    v: float = 0.0
    omega: float = 0.0

    @property
    def position(self) -> DoubleMatrix:
        return np.array([self.px, self.py])

    def as_array(self) -> DoubleMatrix:
        return np.array([self.px, self.py, self.theta, self.v, self.omega], dtype=np.float64)

    @classmethod
    def from_array(cls, values) -> "VehicleState":
        px, py, theta, v, omega = (float(x) for x in values)
        return cls(px, py, theta, v, omega)

    def is_finite(self) -> bool:
        return all(math.isfinite(x) for x in (self.px, self.py, self.theta, self.v, self.omega))


@dataclass(frozen=True)
class PlanningControl:
    """Planning-model input: longitudinal and angular acceleration"""
    a: float = 0.0
    alpha: float = 0.0

    def as_array(self) -> DoubleMatrix:
        return np.array([self.a, self.alpha], dtype=np.float64)


@dataclass(frozen=True)
class LateralErrorState:
    """Lateral tracking error relative to the reference path"""
    e_cg: float = 0.0
    e_cg_dot: float = 0.0
    theta_e: float = 0.0
    theta_e_dot: float = 0.0

    def as_array(self) -> DoubleMatrix:
        return np.array([self.e_cg, self.e_cg_dot, self.theta_e, self.theta_e_dot], dtype=np.float64)


@dataclass(frozen=True)
class TrackingCommand:
    """Tracking-level input: front steering angle and longitudinal acceleration"""
    delta: float = 0.0
    accel: float = 0.0

    def as_array(self) -> DoubleMatrix:
        return np.array([self.delta, self.accel], dtype=np.float64)


@dataclass(frozen=True)
class VehicleParams:
    """Physical and actuation limits of a vehicle"""
    m: float = 1140.0
    Iz: float = 3436.24
    lf: float = 1.165
    lr: float = 1.165
    cf: float = 155495.0
    cr: float = 155495.0
    length: float = 4.42
    width: float = 1.74
    max_accel: float = 15.0
    max_steer: float = 0.611
    max_speed: float = 18.05

    def __post_init__(self) -> None:
        for name in ("m", "Iz", "lf", "lr", "cf", "cr", "length", "width", "max_accel", "max_steer", "max_speed"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0.0):
                raise ValueError(f"VehicleParams.{name} must be finite and > 0, got {value}")

    @property
    def L(self) -> float:
        """Wheelbase, always lf + lr"""
        return self.lf + self.lr

    @property
    def circumscribed_radius(self) -> float:
        return math.hypot(0.5 * self.length, 0.5 * self.width)


@dataclass
class LinearSystem:
    """Continuous lateral-error model and its discretization"""
    Ac: DoubleMatrix
    Bc: DoubleMatrix
    Ad: Optional[DoubleMatrix] = None
    Bd: Optional[DoubleMatrix] = None
    Ts: Optional[float] = None
    speed: float = 0.0
    speed_clamped: bool = False


@dataclass(frozen=True)
class ObstacleTrack:
    """Kinematic snapshot of a neighbouring vehicle as seen by the ego controller"""
    pos: Tuple[float, float]
    vel: Tuple[float, float] = (0.0, 0.0)
    acc: Tuple[float, float] = (0.0, 0.0)
    length: float = 4.42
    width: float = 1.74
    heading: float = 0.0
    id: Optional[int] = None

    def __post_init__(self) -> None:
        if self.length <= 0.0 or self.width <= 0.0:
            raise ValueError("ObstacleTrack dimensions must be positive")

    @classmethod
    def from_state(cls, state: VehicleState, params: VehicleParams,
                   acc: Tuple[float, float] = (0.0, 0.0), id: Optional[int] = None) -> "ObstacleTrack":
        c, s = math.cos(state.theta), math.sin(state.theta)
        return cls(
            pos=(state.px, state.py),
            vel=(state.v * c, state.v * s),
            acc=acc,
            length=params.length,
            width=params.width,
            heading=state.theta,
            id=id,
        )


@dataclass
class FilterReport:
    """Per-step safety filter diagnostics"""
    h_values: Dict[int, float] = field(default_factory=dict)
    min_h: float = math.inf
    u2: Tuple[float, float] = (0.0, 0.0)
    beta: float = 0.0
    events: list = field(default_factory=list)

    @property
    def u2_norm(self) -> float:
        return math.hypot(*self.u2)


def state_to_dict(state: VehicleState) -> Dict[str, Any]:
    """Convert VehicleState model to dictionary"""
    return {
        "px": state.px,
        "py": state.py,
        "theta": state.theta,
        "v": state.v,
        "omega": state.omega,
    }
