"""
Offline trajectory optimization with differential dynamic programming.

The planner works on the 5-state Euler bicycle x = [px, py, theta, v, omega]
with input u = [a, alpha]. Each iteration runs a regularized backward pass
over the current trajectory and a backtracking forward rollout; the
Levenberg-Marquardt term mu is raised on failure and relaxed on success.
"""
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import List, Optional, Sequence, Tuple

import numpy as np

from models.data_models import DoubleMatrix, PlanningControl, VehicleParams, VehicleState
from services.vehicle_dynamics import V_FLOOR, planning_jacobians, planning_step_array, wrap_angle
from utils.logger import get_logger

logger = get_logger("ddp_planner")

STATE_DIM = 5
INPUT_DIM = 2


class PlannerError(Exception):
    """Raised when trajectory optimization fails"""

    def __init__(self, message: str, diagnostics: Optional[dict] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class RegularizationError(Exception):
    """Raised by the backward pass when Q_uu + mu*I is not positive definite"""

    def __init__(self, message: str, mu: float):
        super().__init__(message)
        self.mu = mu


@dataclass(frozen=True)
class ObstacleDisc:
    """Static soft-penalty disc"""
    center: Tuple[float, float]
    radius: float
    weight: float


@dataclass(frozen=True)
class DdpParams:
    """Solver settings"""
    tol_J: float = 1e-6  # [-] cost improvement threshold
    a_min: float = 1e-4  # [-] smallest line-search step
    iter_max: int = 200
    mu_init: float = 1e-6
    mu_factor: float = 10.0  # [-] growth on failure
    mu_relax: float = 2.0  # [-] division on accepted full step
    mu_max: float = 1e10
    accept_ratio: float = 0.1  # [-] actual/predicted sufficient decrease
    divergence_window: int = 5

    def __post_init__(self) -> None:
        assert self.tol_J > 0.0, "tol_J must be positive"
        assert 0.0 < self.a_min <= 1.0, "a_min must be in (0, 1]"
        assert self.iter_max >= 1, "iter_max must be at least 1"
        assert 0.0 <= self.mu_init < self.mu_max, "mu_init must be below mu_max"
        assert self.mu_factor > 1.0 and self.mu_relax > 1.0, "mu schedule factors must exceed 1"


@dataclass
class DdpProblem:
    """
    Optimal control problem on the planning bicycle.
    :param x0: initial state
    :param N: horizon steps
    :param h: step duration [s]
    :param Q, R, Qf: stage state, stage input and terminal weights
    :param goal: terminal target (and stage target when no waypoints are given)
    :param obstacles: static soft-penalty discs
    :param waypoints: optional (N+1)x5 stage targets for path following
    """
    x0: VehicleState
    N: int
    h: float
    Q: DoubleMatrix
    R: DoubleMatrix
    Qf: DoubleMatrix
    goal: VehicleState
    obstacles: List[ObstacleDisc] = field(default_factory=list)
    waypoints: Optional[DoubleMatrix] = None
    vehicle: VehicleParams = field(default_factory=VehicleParams)

    def __post_init__(self) -> None:
        assert self.N >= 1, "horizon must be at least one step"
        assert self.h > 0.0, "step duration must be positive"
        for name, mat, dim in (("Q", self.Q, STATE_DIM), ("Qf", self.Qf, STATE_DIM), ("R", self.R, INPUT_DIM)):
            assert mat.shape == (dim, dim), f"{name} must be {dim}x{dim}"
            assert np.allclose(mat, mat.T), f"{name} must be symmetric"
        assert np.min(np.linalg.eigvalsh(self.Q)) >= -1e-12, "Q must be PSD"
        assert np.min(np.linalg.eigvalsh(self.Qf)) >= -1e-12, "Qf must be PSD"
        assert np.min(np.linalg.eigvalsh(self.R)) > 0.0, "R must be PD"
        if self.waypoints is not None:
            assert self.waypoints.shape == (self.N + 1, STATE_DIM), "waypoints must be (N+1)x5"

    def target(self, k: Optional[int]) -> DoubleMatrix:
        if self.waypoints is not None and k is not None:
            return self.waypoints[k]
        return self.goal.as_array()


@dataclass
class ReferenceTrajectory:
    """Planned trajectory: states (N+1)x5, controls Nx2, curvature and speed reference (N+1)"""
    states: DoubleMatrix
    controls: DoubleMatrix
    curvature: DoubleMatrix
    v_ref: DoubleMatrix
    cost: float
    h: float
    iterations: int = 0
    converged: bool = False

    def __post_init__(self) -> None:
        n = self.states.shape[0]
        assert self.controls.shape[0] == n - 1, "controls must have one row fewer than states"
        assert self.curvature.shape[0] == n and self.v_ref.shape[0] == n, "curvature/v_ref length mismatch"

    @property
    def N(self) -> int:
        return self.controls.shape[0]

    @property
    def duration(self) -> float:
        return self.N * self.h

    @property
    def times(self) -> DoubleMatrix:
        return np.arange(self.N + 1) * self.h

    def state(self, k: int) -> VehicleState:
        return VehicleState.from_array(self.states[k])

    def control(self, k: int) -> PlanningControl:
        a, alpha = self.controls[k]
        return PlanningControl(float(a), float(alpha))

    @cached_property
    def arc_length(self) -> DoubleMatrix:
        """Cumulative path length at each state [m]"""
        seg = np.hypot(np.diff(self.states[:, 0]), np.diff(self.states[:, 1]))
        return np.concatenate([[0.0], np.cumsum(seg)])


@dataclass
class StageCostTerms:
    l: float
    lx: DoubleMatrix
    lu: DoubleMatrix
    lxx: DoubleMatrix
    luu: DoubleMatrix
    lux: DoubleMatrix


@dataclass
class BackwardPassResult:
    k_ff: DoubleMatrix  # N x 2
    K_fb: DoubleMatrix  # N x 2 x 5
    dV: DoubleMatrix  # [linear, quadratic] expected cost change at unit step
    mu: float


def _state_error(x: DoubleMatrix, target: DoubleMatrix) -> DoubleMatrix:
    dx = x - target
    dx[2] = wrap_angle(dx[2])
    return dx


def stage_cost(x: DoubleMatrix, u: DoubleMatrix, prob: DdpProblem, k: Optional[int] = None) -> StageCostTerms:
    """
    Running cost 0.5*(dx'Q dx + u'R u)*h plus obstacle penalties w*max(0, r - d)^2.
    :param k: stage index, selects the waypoint target when the problem has waypoints
    """
    h = prob.h
    dx = _state_error(x, prob.target(k))
    Qdx = prob.Q @ dx
    Ru = prob.R @ u
    l = 0.5 * (dx @ Qdx + u @ Ru) * h
    lx = Qdx * h
    lu = Ru * h
    lxx = prob.Q * h
    luu = prob.R * h
    lux = np.zeros((INPUT_DIM, STATE_DIM))

    if prob.obstacles:
        lx = lx.copy()
        lxx = lxx.copy()
        for ob in prob.obstacles:
            rel = x[:2] - np.asarray(ob.center)
            d = math.hypot(rel[0], rel[1])
            if d >= ob.radius or d < 1e-9:
                continue
            n = rel / d
            gap = ob.radius - d
            l += ob.weight * gap ** 2
            lx[:2] += -2.0 * ob.weight * gap * n
            lxx[:2, :2] += 2.0 * ob.weight * np.outer(n, n) - 2.0 * ob.weight * gap * (np.eye(2) - np.outer(n, n)) / d
    return StageCostTerms(l=l, lx=lx, lu=lu, lxx=lxx, luu=luu, lux=lux)


def terminal_cost(x: DoubleMatrix, prob: DdpProblem) -> Tuple[float, DoubleMatrix, DoubleMatrix]:
    """Terminal cost 0.5*dx'Qf dx against the goal, with gradient and Hessian"""
    dx = _state_error(x, prob.goal.as_array())
    Qdx = prob.Qf @ dx
    return 0.5 * dx @ Qdx, Qdx, prob.Qf


def trajectory_cost(states: DoubleMatrix, controls: DoubleMatrix, prob: DdpProblem) -> float:
    total = 0.0
    for k in range(controls.shape[0]):
        total += stage_cost(states[k], controls[k], prob, k).l
    return total + terminal_cost(states[-1], prob)[0]


def rollout(x0: DoubleMatrix, controls: DoubleMatrix, prob: DdpProblem) -> DoubleMatrix:
    """Integrate the Euler bicycle over a control sequence"""
    states = np.empty((controls.shape[0] + 1, STATE_DIM))
    states[0] = x0
    for k in range(controls.shape[0]):
        states[k + 1] = planning_step_array(states[k], controls[k], prob.h, prob.vehicle.max_speed)
    return states


def extract_curvature(states: DoubleMatrix) -> DoubleMatrix:
    """Reference curvature omega / max(v, V_FLOOR) at every state"""
    return states[:, 4] / np.maximum(states[:, 3], V_FLOOR)


def _make_trajectory(states: DoubleMatrix, controls: DoubleMatrix, cost: float, prob: DdpProblem,
                     iterations: int = 0, converged: bool = False) -> ReferenceTrajectory:
    return ReferenceTrajectory(
        states=states,
        controls=controls,
        curvature=extract_curvature(states),
        v_ref=states[:, 3].copy(),
        cost=cost,
        h=prob.h,
        iterations=iterations,
        converged=converged,
    )


def backward_pass(traj: ReferenceTrajectory, prob: DdpProblem, mu: float) -> BackwardPassResult:
    """
    Riccati-like sweep over the current trajectory.
    :raises RegularizationError: when Q_uu + mu*I is not positive definite at some stage
    """
    N = traj.N
    k_ff = np.zeros((N, INPUT_DIM))
    K_fb = np.zeros((N, INPUT_DIM, STATE_DIM))
    dV = np.zeros(2)

    _, V_x, V_xx = terminal_cost(traj.states[-1], prob)
    V_x = V_x.copy()
    V_xx = V_xx.copy()
    reg = mu * np.eye(INPUT_DIM)

    for k in range(N - 1, -1, -1):
        x, u = traj.states[k], traj.controls[k]
        c = stage_cost(x, u, prob, k)
        A, B = planning_jacobians(x, u, prob.h)

        Q_x = c.lx + A.T @ V_x
        Q_u = c.lu + B.T @ V_x
        Q_xx = c.lxx + A.T @ V_xx @ A
        Q_uu = c.luu + B.T @ V_xx @ B
        Q_ux = c.lux + B.T @ V_xx @ A

        Q_uu_reg = Q_uu + reg
        try:
            chol = np.linalg.cholesky(Q_uu_reg)
        except np.linalg.LinAlgError:
            raise RegularizationError(f"Q_uu + mu*I not positive definite at stage {k}", mu)

        kk = -np.linalg.solve(chol.T, np.linalg.solve(chol, Q_u))
        KK = -np.linalg.solve(chol.T, np.linalg.solve(chol, Q_ux))
        k_ff[k] = kk
        K_fb[k] = KK

        dV += np.array([kk @ Q_u, 0.5 * kk @ Q_uu @ kk])
        V_x = Q_x + KK.T @ Q_uu @ kk + KK.T @ Q_u + Q_ux.T @ kk
        V_xx = Q_xx + KK.T @ Q_uu @ KK + KK.T @ Q_ux + Q_ux.T @ KK
        V_xx = 0.5 * (V_xx + V_xx.T)

    return BackwardPassResult(k_ff=k_ff, K_fb=K_fb, dV=dV, mu=mu)


def forward_rollout(traj: ReferenceTrajectory, result: BackwardPassResult, a: float,
                    prob: DdpProblem) -> Tuple[ReferenceTrajectory, float]:
    """
    Apply u_new = u + a*k_ff + K_fb*(x_new - x) along the trajectory.
    :return: the new trajectory and its exact cost (inf when the rollout is not finite)
    """
    assert 0.0 <= a <= 1.0, "step size must be in [0, 1]"
    N = traj.N
    max_accel = prob.vehicle.max_accel
    states = np.empty_like(traj.states)
    controls = np.empty_like(traj.controls)
    states[0] = traj.states[0]
    for k in range(N):
        dx = _state_error(states[k], traj.states[k])
        u = traj.controls[k] + a * result.k_ff[k] + result.K_fb[k] @ dx
        u[0] = min(max(u[0], -max_accel), max_accel)
        controls[k] = u
        states[k + 1] = planning_step_array(states[k], u, prob.h, prob.vehicle.max_speed)

    if not (np.all(np.isfinite(states)) and np.all(np.isfinite(controls))):
        return _make_trajectory(states, controls, math.inf, prob), math.inf
    cost = trajectory_cost(states, controls, prob)
    return _make_trajectory(states, controls, cost, prob), cost


def plan(prob: DdpProblem, u_init: Sequence, params: Optional[DdpParams] = None) -> ReferenceTrajectory:
    """
    Full DDP loop: backward pass, backtracking line search, mu schedule.
    :param u_init: N initial controls (PlanningControl or [a, alpha] rows)
    :return: the best trajectory found
    :raises PlannerError: on a non-finite initial rollout or sustained divergence
    """
    params = params or DdpParams()
    controls = np.array([c.as_array() if isinstance(c, PlanningControl) else np.asarray(c, dtype=float)
                         for c in u_init], dtype=float).reshape(-1, INPUT_DIM)
    if controls.shape[0] != prob.N:
        raise PlannerError(f"expected {prob.N} initial controls, got {controls.shape[0]}")
    if not np.all(np.isfinite(controls)):
        raise PlannerError("initial controls are not finite")

    states = rollout(prob.x0.as_array(), controls, prob)
    if not np.all(np.isfinite(states)):
        raise PlannerError("initial rollout is not finite", {"iteration": 0})
    J = trajectory_cost(states, controls, prob)
    traj = _make_trajectory(states, controls, J, prob)

    mu = params.mu_init
    history = [J]
    rising_rejections = 0
    last_trial = math.inf
    converged = False
    iteration = 0

    for iteration in range(1, params.iter_max + 1):
        try:
            bp = backward_pass(traj, prob, mu)
        except RegularizationError as e:
            mu = max(mu * params.mu_factor, 1e-8)
            logger.debug(f"Iteration {iteration}: {e}; raising mu to {mu:.1e}")
            if mu > params.mu_max:
                raise PlannerError("regularization exceeded mu_max", {"iteration": iteration, "mu": mu,
                                                                       "cost": J})
            continue

        expected = -(bp.dV[0] + bp.dV[1])
        if expected < params.tol_J:
            converged = True
            break

        accepted = False
        a = 1.0
        full_step_cost = math.inf
        while a >= params.a_min:
            candidate, J_new = forward_rollout(traj, bp, a, prob)
            if a == 1.0:
                full_step_cost = J_new
            predicted = -(a * bp.dV[0] + a * a * bp.dV[1])
            actual = J - J_new
            if math.isfinite(J_new) and predicted > 0.0 and actual > 0.0 and actual / predicted > params.accept_ratio:
                accepted = True
                break
            a *= 0.5

        if accepted:
            improvement = J - J_new
            traj, J = candidate, J_new
            history.append(J)
            rising_rejections = 0
            last_trial = math.inf
            if a == 1.0:
                mu = mu / params.mu_relax
            if improvement < params.tol_J:
                converged = True
                break
            continue

        # rejected line search
        if full_step_cost > last_trial or not math.isfinite(full_step_cost):
            rising_rejections += 1
        else:
            rising_rejections = 0
        last_trial = full_step_cost
        if rising_rejections >= params.divergence_window:
            raise PlannerError("trial cost increased on consecutive rejected iterations",
                               {"iteration": iteration, "mu": mu, "cost": J, "history": history})
        mu = max(mu * params.mu_factor, 1e-8)
        if mu > params.mu_max:
            logger.info(f"DDP stopped at iteration {iteration}: mu {mu:.1e} exceeds mu_max")
            break

    logger.debug(f"DDP finished after {iteration} iterations, J={J:.6g}, converged={converged}")
    return _make_trajectory(traj.states, traj.controls, J, prob, iterations=iteration, converged=converged)


def max_curvature_limit(params: VehicleParams) -> float:
    """Largest curvature the vehicle can follow, tan(max_steer)/L"""
    return math.tan(params.max_steer) / params.L
