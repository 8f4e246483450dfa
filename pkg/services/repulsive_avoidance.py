"""
Time-weighted repulsive potential field and its blending into the nominal
steering and speed commands.
"""
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Tuple

from models.data_models import ObstacleTrack, VehicleState
from services.vehicle_dynamics import wrap_angle
from utils.logger import get_logger

logger = get_logger("repulsive_avoidance")

MIN_DISTANCE = 1e-3  # [m]


@dataclass(frozen=True)
class RepulsiveParams:
    """Repulsive field settings"""
    d_detect: float = 6.0  # [m]
    H: float = 1.0  # [s]
    dt_pred: float = 0.1  # [s]
    gain: float = 50.0
    # Only obstacles whose predicted closest approach within H is below this contribute
    conflict_distance: Optional[float] = None  # [m]

    def __post_init__(self) -> None:
        assert self.d_detect > 0.0 and self.H > 0.0 and self.gain >= 0.0, "repulsive parameters out of range"
        assert 0.0 < self.dt_pred <= self.H, "dt_pred must be in (0, H]"
        assert self.conflict_distance is None or self.conflict_distance > 0.0, "conflict_distance must be positive"

    @property
    def horizon_steps(self) -> int:
        return int(round(self.H / self.dt_pred))


@dataclass
class RepulsiveForce:
    fx: float = 0.0
    fy: float = 0.0
    clamped: bool = False

    @property
    def magnitude(self) -> float:
        return math.hypot(self.fx, self.fy)


def closest_approach(ego: VehicleState, ob: ObstacleTrack, horizon: float) -> float:
    """Minimum centre distance over [0, horizon] under constant-velocity prediction"""
    rx, ry = ob.pos[0] - ego.px, ob.pos[1] - ego.py
    vx = ob.vel[0] - ego.v * math.cos(ego.theta)
    vy = ob.vel[1] - ego.v * math.sin(ego.theta)
    vv = vx * vx + vy * vy
    t = 0.0 if vv < 1e-12 else min(max(-(rx * vx + ry * vy) / vv, 0.0), horizon)
    return math.hypot(rx + t * vx, ry + t * vy)


def repulsive_force(ego: VehicleState, obstacles: Iterable[ObstacleTrack], rp: RepulsiveParams) -> RepulsiveForce:
    """
    F = gain * sum_o sum_tau w(tau) (1/d - 1/d_detect) (p_ego - p_o)/d with
    w(tau) = (H - tau)/H over tau = 0, dt_pred, ..., H and constant-velocity
    prediction of both vehicles.
    """
    c, s = math.cos(ego.theta), math.sin(ego.theta)
    ego_vx, ego_vy = ego.v * c, ego.v * s
    taus = [k * rp.dt_pred for k in range(rp.horizon_steps + 1)]
    inv_detect = 1.0 / rp.d_detect
    fx = fy = 0.0
    clamped = False

    for ob in obstacles:
        reach = rp.d_detect + rp.H * (abs(ego.v) + math.hypot(*ob.vel))
        if math.hypot(ob.pos[0] - ego.px, ob.pos[1] - ego.py) >= reach:
            continue
        if rp.conflict_distance is not None and closest_approach(ego, ob, rp.H) >= rp.conflict_distance:
            continue
        for tau in taus:
            w = (rp.H - tau) / rp.H
            if w <= 0.0:
                continue
            dx = (ego.px + tau * ego_vx) - (ob.pos[0] + tau * ob.vel[0])
            dy = (ego.py + tau * ego_vy) - (ob.pos[1] + tau * ob.vel[1])
            d = math.hypot(dx, dy)
            if d >= rp.d_detect:
                continue
            if d < MIN_DISTANCE:
                logger.warning(f"Obstacle {ob.id} coincides with ego at tau={tau:.2f}s; distance clamped")
                clamped = True
                if d == 0.0:
                    dx, dy = math.cos(ego.theta + math.pi), math.sin(ego.theta + math.pi)
                else:
                    dx, dy = dx / d, dy / d
                d = MIN_DISTANCE
            else:
                dx, dy = dx / d, dy / d
            scale = w * (1.0 / d - inv_detect)
            fx += scale * dx
            fy += scale * dy

    return RepulsiveForce(rp.gain * fx, rp.gain * fy, clamped)


def blend_commands(delta: float, v: float, theta: float, force: RepulsiveForce,
                   max_steer: float) -> Tuple[float, float, float]:
    """
    Blend steering and speed toward the repulsive direction.
    :return: (delta', v', lambda)
    """
    lam = min(1.0, force.magnitude)
    if lam == 0.0:
        return delta, v, 0.0
    avoid = wrap_angle(math.atan2(force.fy, force.fx) - theta)
    blended = (1.0 - lam) * delta + lam * avoid
    blended = min(max(blended, -max_steer), max_steer)
    return blended, (1.0 - 0.5 * lam) * v, lam
