"""
Real-time trajectory tracking: discrete LQR lateral control with
curvature/velocity feedforward, and PD longitudinal control with a
near-stop override.
"""
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from models.data_models import DoubleMatrix, LateralErrorState, LinearSystem, VehicleParams, VehicleState
from services.ddp_planner import ReferenceTrajectory
from services.vehicle_dynamics import discretize, linearize_error_dynamics, wrap_angle
from utils.logger import get_logger

logger = get_logger("tracking_control")

SEARCH_WINDOW = 20


class TrackingError(Exception):
    """Raised when tracking errors cannot be computed"""


class RiccatiError(Exception):
    """Raised when the Riccati update cannot be formed"""


@dataclass(frozen=True)
class LqrWeights:
    """LQR cost weights and iteration settings"""
    Q: DoubleMatrix = field(default_factory=lambda: np.diag([0.5, 0.3, 1.0, 0.0]))
    R: DoubleMatrix = field(default_factory=lambda: np.array([[0.75]]))
    max_iter: int = 150
    eps: float = 0.01

    def __post_init__(self) -> None:
        assert np.min(np.linalg.eigvalsh(self.Q)) >= -1e-12, "Q must be PSD"
        assert np.min(np.linalg.eigvalsh(self.R)) > 0.0, "R must be PD"
        assert self.max_iter >= 1, "max_iter must be at least 1"
        assert self.eps > 0.0, "eps must be positive"


@dataclass(frozen=True)
class LongitudinalParams:
    """Speed tracking gain and near-stop override"""
    kp: float = 2.0  # [1/s]
    d_th: float = 1.0  # [m]
    v_th: float = 0.3  # [m/s]
    a_strong: float = -4.0  # [m/s^2]
    a_gentle: float = 1.0  # [m/s^2]

    def __post_init__(self) -> None:
        assert self.kp > 0.0, "kp must be positive"
        assert self.d_th > 0.0 and self.v_th > 0.0, "near-stop thresholds must be positive"


@dataclass
class RiccatiSolution:
    P: DoubleMatrix
    K: DoubleMatrix
    iterations: int
    converged: bool


@dataclass
class TrackingErrors:
    error: LateralErrorState
    index: int
    distance_to_goal: float


def compute_tracking_errors(x: VehicleState, traj: ReferenceTrajectory, k_hint: int = 0,
                            window: int = SEARCH_WINDOW) -> TrackingErrors:
    """
    Lateral error state against the nearest reference point, searched forward
    in [k_hint, k_hint + window] so the matched index never moves backwards
    along the route. The lateral offset is positive to the left of the path.
    """
    if traj.states.shape[0] == 0:
        raise TrackingError("reference trajectory is empty")
    n = traj.states.shape[0]
    lo = min(max(k_hint, 0), n - 1)
    hi = min(n, lo + window + 1)
    seg = traj.states[lo:hi, :2]
    d2 = (seg[:, 0] - x.px) ** 2 + (seg[:, 1] - x.py) ** 2
    i = lo + int(np.argmin(d2))

    ref_x, ref_y, ref_theta = traj.states[i, 0], traj.states[i, 1], traj.states[i, 2]
    kappa = traj.curvature[i]
    dx, dy = x.px - ref_x, x.py - ref_y
    c, s = math.cos(ref_theta), math.sin(ref_theta)
    e_cg = -s * dx + c * dy
    theta_e = wrap_angle(x.theta - ref_theta)
    error = LateralErrorState(
        e_cg=e_cg,
        e_cg_dot=x.v * math.sin(theta_e),
        theta_e=theta_e,
        theta_e_dot=x.omega - x.v * kappa,
    )
    along = c * dx + s * dy
    remaining = float(traj.arc_length[-1] - traj.arc_length[i]) - along
    return TrackingErrors(error=error, index=i, distance_to_goal=max(remaining, 0.0))


def solve_riccati(sys: LinearSystem, w: LqrWeights) -> RiccatiSolution:
    """
    Fixed-point iteration P <- Q + A'PA - A'PB (R + B'PB)^-1 B'PA from P = Q.
    Stops when the infinity-norm change drops below eps; otherwise the last
    iterate is used and the solution is flagged as not converged.
    """
    A, B = sys.Ad, sys.Bd
    if A is None or B is None:
        raise RiccatiError("system has not been discretized")
    Q, R = w.Q, w.R
    P = Q.copy()
    converged = False
    iterations = 0
    for iterations in range(1, w.max_iter + 1):
        S = R + B.T @ P @ B
        if abs(np.linalg.det(S)) < 1e-300:
            raise RiccatiError("R + B'PB is singular")
        P_next = Q + A.T @ P @ A - A.T @ P @ B @ np.linalg.solve(S, B.T @ P @ A)
        P_next = 0.5 * (P_next + P_next.T)
        delta = np.linalg.norm(P_next - P, ord=np.inf)
        P = P_next
        if delta < w.eps:
            converged = True
            break

    if not converged:
        logger.warning(f"Riccati iteration did not converge within {w.max_iter} iterations")
    K = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    return RiccatiSolution(P=P, K=K, iterations=iterations, converged=converged)


def feedforward_steer(p: VehicleParams, v: float, kappa: float, K: DoubleMatrix, reverse: bool = False) -> float:
    """Steady-state steering feedforward; K_k is the heading-error gain K[2]"""
    L = p.L
    k_gain = float(np.ravel(K)[2])
    k_v = p.lr * p.m / (2.0 * p.cf * L) - p.lf * p.m / (2.0 * p.cr * L)
    sign = -1.0 if reverse else 1.0
    v2 = v * v
    return (L * kappa
            + sign * k_v * v2 * kappa
            - k_gain * (p.lr * kappa - sign * p.lf * p.m * v2 * kappa / (2.0 * p.cr * L)))


def lateral_control(err: LateralErrorState, K: DoubleMatrix, dff: float, max_steer: float) -> float:
    """delta = clamp(-K x + delta_ff, +-max_steer)"""
    delta = -float(np.ravel(K) @ err.as_array()) + dff
    return min(max(delta, -max_steer), max_steer)


def longitudinal_control(v: float, v_ref: float, d_goal: float, lp: LongitudinalParams, max_accel: float) -> float:
    """Proportional speed tracking with the near-stop override"""
    a = lp.kp * (v_ref - v)
    if d_goal < lp.d_th:
        if v > lp.v_th:
            a = lp.a_strong
        elif v < -lp.v_th:
            a = lp.a_gentle
    return min(max(a, -max_accel), max_accel)


class TrackingController:
    """Per-vehicle lateral controller context: search hint and scheduled LQR gain"""

    def __init__(self, params: VehicleParams, weights: LqrWeights, Ts: float,
                 schedule_band: float = 0.5, force_gain_update: bool = False, tustin_input: bool = False):
        self.params = params
        self.weights = weights
        self.Ts = Ts
        self.schedule_band = schedule_band
        self.force_gain_update = force_gain_update
        self.tustin_input = tustin_input
        self.k_hint = 0
        self._gain: Optional[DoubleMatrix] = None
        self._gain_speed = math.nan
        self.gain_updates = 0

    def gain(self, v: float) -> DoubleMatrix:
        """LQR gain for speed |v|, re-solved only outside the scheduling band"""
        speed = abs(v)
        if self.force_gain_update or self._gain is None or abs(speed - self._gain_speed) > self.schedule_band:
            sys = discretize(linearize_error_dynamics(self.params, speed), self.Ts, self.tustin_input)
            self._gain = solve_riccati(sys, self.weights).K
            self._gain_speed = speed
            self.gain_updates += 1
        return self._gain

    def steer(self, x: VehicleState, traj: ReferenceTrajectory):
        """
        Lateral command for the current state.
        :return: (delta, TrackingErrors)
        """
        errors = compute_tracking_errors(x, traj, self.k_hint)
        self.k_hint = errors.index
        reverse = traj.v_ref[errors.index] < 0.0
        K = self.gain(x.v)
        dff = feedforward_steer(self.params, x.v, float(traj.curvature[errors.index]), K, reverse)
        return lateral_control(errors.error, K, dff, self.params.max_steer), errors
