"""
Vehicle models: the 5-state Euler bicycle used for planning and simulation,
the linear lateral-error model used by the LQR, its discretization, and
oriented-rectangle collision detection.
"""
import math
from typing import Optional, Tuple

import numpy as np

from models.data_models import (
    DoubleMatrix, LinearSystem, PlanningControl, TrackingCommand, VehicleParams, VehicleState,
)
from utils.logger import get_logger

logger = get_logger("vehicle_dynamics")

# Linearization speed floor; the error model has 1/v terms.
V_FLOOR = 0.5

# Above this condition number (I - Ts/2*Ac) is treated as singular.
MAX_CONDITION = 1e12

_DEFAULT_PARAMS = VehicleParams()


class ModelInputError(Exception):
    """Raised when a model is fed non-finite or out-of-domain inputs"""


class DiscretizationError(Exception):
    """Raised when the bilinear transform cannot be formed"""

    def __init__(self, message: str, condition: float):
        super().__init__(message)
        self.condition = condition


def wrap_angle(angle: float) -> float:
    """Normalize an angle to (-pi, pi]"""
    wrapped = math.remainder(angle, 2.0 * math.pi)
    if wrapped <= -math.pi:
        wrapped += 2.0 * math.pi
    return wrapped


def planning_step_array(x: DoubleMatrix, u: DoubleMatrix, h: float, max_speed: float) -> DoubleMatrix:
    """
    Array form of the Euler bicycle update used by the planner rollouts.
    :param x: state [px, py, theta, v, omega]
    :param u: input [a, alpha]
    :param h: step duration [s]
    :param max_speed: speed saturation [m/s]
    :return: next state
    """
    px, py, theta, v, omega = x
    a, alpha = u
    v_next = v + h * a
    if v_next > max_speed:
        v_next = max_speed
    elif v_next < -max_speed:
        v_next = -max_speed
    return np.array([
        px + h * v * math.cos(theta),
        py + h * v * math.sin(theta),
        wrap_angle(theta + h * omega),
        v_next,
        omega + h * alpha,
    ])


def planning_jacobians(x: DoubleMatrix, u: DoubleMatrix, h: float) -> Tuple[DoubleMatrix, DoubleMatrix]:
    """
    Analytic Jacobians of the Euler bicycle update; speed saturation is ignored.
    :return: (A, B) with A = df/dx (5x5) and B = df/du (5x2)
    """
    theta, v = x[2], x[3]
    c, s = math.cos(theta), math.sin(theta)
    A = np.eye(5)
    A[0, 2] = -h * v * s
    A[0, 3] = h * c
    A[1, 2] = h * v * c
    A[1, 3] = h * s
    A[2, 4] = h
    B = np.zeros((5, 2))
    B[3, 0] = h
    B[4, 1] = h
    return A, B


def step_planning_model(x: VehicleState, u: PlanningControl, h: float,
                        params: Optional[VehicleParams] = None) -> VehicleState:
    """Advance the planning bicycle by one Euler step of length h"""
    if not (math.isfinite(h) and h > 0.0):
        raise ModelInputError(f"step duration must be finite and positive, got {h}")
    if not x.is_finite() or not (math.isfinite(u.a) and math.isfinite(u.alpha)):
        raise ModelInputError(f"non-finite model input: state={x}, control={u}")
    params = params or _DEFAULT_PARAMS
    return VehicleState.from_array(planning_step_array(x.as_array(), u.as_array(), h, params.max_speed))


def step_tracking_model(x: VehicleState, cmd: TrackingCommand, params: VehicleParams, Ts: float) -> VehicleState:
    """
    Simulation plant. The steering command sets the kinematic yaw rate
    v*tan(delta)/L, realised through the planning map's angular acceleration.
    """
    if not (math.isfinite(cmd.delta) and math.isfinite(cmd.accel)):
        raise ModelInputError(f"non-finite tracking command: {cmd}")
    omega_cmd = x.v * math.tan(cmd.delta) / params.L
    alpha = (omega_cmd - x.omega) / Ts
    return step_planning_model(x, PlanningControl(a=cmd.accel, alpha=alpha), Ts, params)


def linearize_error_dynamics(p: VehicleParams, v: float) -> LinearSystem:
    """Continuous lateral-error model about speed v (clamped to V_FLOOR)"""
    clamped = v < V_FLOOR
    if clamped:
        if v <= 0.0:
            logger.debug(f"Linearization speed {v:.3f} m/s clamped to {V_FLOOR} m/s")
        v = V_FLOOR

    cf, cr, lf, lr, m, Iz = p.cf, p.cr, p.lf, p.lr, p.m, p.Iz
    Ac = np.array([
        [0.0, 1.0, 0.0, 0.0],
        [0.0, -(cf + cr) / (m * v), (cf + cr) / m, (lr * cr - lf * cf) / (m * v)],
        [0.0, 0.0, 0.0, 1.0],
        [0.0, (lr * cr - lf * cf) / (Iz * v), (lf * cf - lr * cr) / Iz, -(lf ** 2 * cf + lr ** 2 * cr) / (Iz * v)],
    ])
    Bc = np.array([[0.0], [cf / m], [0.0], [lf * cf / Iz]])
    return LinearSystem(Ac=Ac, Bc=Bc, speed=v, speed_clamped=clamped)


def discretize(sys: LinearSystem, Ts: float, tustin_input: bool = False) -> LinearSystem:
    """
    Bilinear (Tustin) state matrix, Euler input matrix.
    :param tustin_input: use Ts*(I - Ts/2*Ac)^-1*Bc for the input matrix instead
    """
    if not (math.isfinite(Ts) and Ts > 0.0):
        raise ModelInputError(f"sampling time must be finite and positive, got {Ts}")
    n = sys.Ac.shape[0]
    I = np.eye(n)
    M = I - 0.5 * Ts * sys.Ac
    condition = float(np.linalg.cond(M))
    if not math.isfinite(condition) or condition > MAX_CONDITION:
        raise DiscretizationError(f"(I - Ts/2*Ac) is singular (cond={condition:.3e})", condition)

    Ad = np.linalg.solve(M, I + 0.5 * Ts * sys.Ac)
    Bd = Ts * np.linalg.solve(M, sys.Bc) if tustin_input else Ts * sys.Bc
    return LinearSystem(Ac=sys.Ac, Bc=sys.Bc, Ad=Ad, Bd=Bd, Ts=Ts,
                        speed=sys.speed, speed_clamped=sys.speed_clamped)


def vehicle_corners(x: VehicleState, p: VehicleParams) -> DoubleMatrix:
    """Corners (4x2, counter-clockwise) of the footprint centred at the CG"""
    c, s = math.cos(x.theta), math.sin(x.theta)
    hl, hw = 0.5 * p.length, 0.5 * p.width
    local = ((hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw))
    return np.array([[x.px + c * lx - s * ly, x.py + s * lx + c * ly] for lx, ly in local])


def _project(corners: DoubleMatrix, axis: DoubleMatrix) -> Tuple[float, float]:
    proj = corners @ axis
    return float(proj.min()), float(proj.max())


def detect_collision(a: VehicleState, a_params: VehicleParams,
                     b: VehicleState, b_params: VehicleParams) -> bool:
    """
    Separating-axis test of two oriented footprints. Touching boundaries
    do not count as a collision.
    """
    reach = a_params.circumscribed_radius + b_params.circumscribed_radius
    if math.hypot(a.px - b.px, a.py - b.py) >= reach:
        return False

    ca = vehicle_corners(a, a_params)
    cb = vehicle_corners(b, b_params)
    axes = (
        np.array([math.cos(a.theta), math.sin(a.theta)]),
        np.array([-math.sin(a.theta), math.cos(a.theta)]),
        np.array([math.cos(b.theta), math.sin(b.theta)]),
        np.array([-math.sin(b.theta), math.cos(b.theta)]),
    )
    for axis in axes:
        a_min, a_max = _project(ca, axis)
        b_min, b_max = _project(cb, axis)
        if a_max <= b_min or b_max <= a_min:
            return False
    return True
