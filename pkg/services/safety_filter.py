"""
Flexible high-order control barrier function safety filter.

Each neighbouring vehicle is wrapped in an ellipse inflated by its speed
and acceleration. The barrier is the clearance between the ego reference
point and that ellipse minus a margin, and the second-order condition

    h'' + alpha1 h' + alpha2 h + beta >= 0

is enforced on the tracking command through a small relaxed QP solved
exactly by active-set enumeration.
"""
import itertools
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from models.data_models import (
    DoubleMatrix,
    FilterReport,
    ObstacleTrack,
    TrackingCommand,
    VehicleParams,
    VehicleState,
)
from utils.logger import get_logger

logger = get_logger("safety_filter")

TWO_PI = 2.0 * math.pi
INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0
COARSE_SAMPLES = 8
SIGMA_TOL = 1e-4
MIN_DISTANCE = 1e-3  # [m]
DRIFT_RATIO = 0.05
FEAS_TOL = 1e-9
DUAL_TOL = 1e-10


class FilterEvent(Enum):
    RELAXATION_ENGAGED = "relaxation_engaged"
    BOX_INFEASIBLE = "box_infeasible"
    ENVELOPE_DRIFT = "envelope_drift"


@dataclass(frozen=True)
class EnvelopeParams:
    """Obstacle envelope inflation, barrier margin and class-K slopes"""
    mu1: float = 0.3  # [s]
    mu2: float = 0.3  # [s]
    nu1: float = 0.05  # [s^2]
    nu2: float = 0.05  # [s^2]
    v0: float = 1.0  # [m/s]
    a0: float = 1.0  # [m/s^2]
    k_sig: float = 5.0
    d_safe: float = 2.0  # [m]
    v_phi_floor: float = 0.1  # [m/s]
    alpha1: float = 2.0
    alpha2: float = 4.0
    consider_radius: float = 12.0  # [m]
    ego_point_offset: float = 0.0  # [m] along the ego heading

    def __post_init__(self) -> None:
        assert min(self.mu1, self.mu2, self.nu1, self.nu2, self.v0, self.a0) >= 0.0, "inflation gains must be >= 0"
        assert self.k_sig > 0.0 and self.d_safe > 0.0, "k_sig and d_safe must be positive"
        assert self.alpha1 > 0.0 and self.alpha2 > 0.0, "class-K slopes must be positive"
        assert self.consider_radius > 0.0, "consider_radius must be positive"


@dataclass(frozen=True)
class QpSetup:
    """Safety QP weights and input box"""
    P_weight: DoubleMatrix = field(default_factory=lambda: np.eye(2))
    Q_relax: float = 100.0
    beta0: float = 1.0
    u_min: Tuple[float, float] = (-0.6109, -15.0)
    u_max: Tuple[float, float] = (0.6109, 15.0)

    def __post_init__(self) -> None:
        assert np.min(np.linalg.eigvalsh(self.P_weight)) > 0.0, "P_weight must be PD"
        assert self.Q_relax > 0.0, "Q_relax must be positive"
        assert self.beta0 >= 0.0, "beta0 must be non-negative"
        assert all(lo < hi for lo, hi in zip(self.u_min, self.u_max)), "u_min must be below u_max"


@dataclass(frozen=True)
class ObstacleEnvelope:
    center: Tuple[float, float]
    phi: float
    a_axis: float
    b_axis: float

    def point(self, sigma: float) -> Tuple[float, float]:
        c, s = math.cos(self.phi), math.sin(self.phi)
        ex, ey = self.a_axis * math.cos(sigma), self.b_axis * math.sin(sigma)
        return self.center[0] + c * ex - s * ey, self.center[1] + s * ex + c * ey


@dataclass(frozen=True)
class Clearance:
    distance: float
    sigma_star: float
    inside: bool


@dataclass(frozen=True)
class BarrierEvaluation:
    h: float
    h_dot: float
    A_row: Tuple[float, float]
    b_scalar: float
    sigma_star: float
    distance: float
    inside: bool


@dataclass
class QpResult:
    u2: Tuple[float, float]
    beta: float
    active_set: Tuple[int, ...] = ()
    multipliers: Tuple[float, ...] = ()
    feasible: bool = True


def sigmoid(z: float, k: float) -> float:
    return float(expit(k * z))


def envelope(ob: ObstacleTrack, ep: EnvelopeParams) -> ObstacleEnvelope:
    """Speed- and acceleration-inflated ellipse around an obstacle"""
    vx, vy = ob.vel
    speed = math.hypot(vx, vy)
    phi = math.atan2(vy, vx) if speed > ep.v_phi_floor else ob.heading
    c, s = math.cos(phi), math.sin(phi)
    v_par, v_perp = abs(c * vx + s * vy), abs(-s * vx + c * vy)
    ax, ay = ob.acc
    a_par, a_perp = abs(c * ax + s * ay), abs(-s * ax + c * ay)

    a_axis = (0.5 * ob.length
              + ep.mu1 * sigmoid(v_par - ep.v0, ep.k_sig) * v_par
              + ep.nu1 * sigmoid(a_par - ep.a0, ep.k_sig) * a_par)
    b_axis = (0.5 * ob.width
              + ep.mu2 * sigmoid(v_perp - ep.v0, ep.k_sig) * v_perp
              + ep.nu2 * sigmoid(a_perp - ep.a0, ep.k_sig) * a_perp)
    return ObstacleEnvelope(center=(float(ob.pos[0]), float(ob.pos[1])), phi=phi, a_axis=a_axis, b_axis=b_axis)


def _golden_section(f, lo: float, hi: float, tol: float) -> float:
    x1 = hi - INV_PHI * (hi - lo)
    x2 = lo + INV_PHI * (hi - lo)
    f1, f2 = f(x1), f(x2)
    while hi - lo > tol:
        if f1 <= f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - INV_PHI * (hi - lo)
            f1 = f(x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + INV_PHI * (hi - lo)
            f2 = f(x2)
    return 0.5 * (lo + hi)


def min_clearance(p_ego: Sequence[float], env: ObstacleEnvelope) -> Clearance:
    """
    Distance from a point to the envelope boundary. An 8-point scan over the
    boundary angle brackets every local minimum, golden-section search refines
    each bracket and a short Newton polish removes the residual angle error.
    """
    c, s = math.cos(env.phi), math.sin(env.phi)
    dx, dy = p_ego[0] - env.center[0], p_ego[1] - env.center[1]
    qx, qy = c * dx + s * dy, -s * dx + c * dy
    a, b = env.a_axis, env.b_axis
    inside = (qx / a) ** 2 + (qy / b) ** 2 < 1.0

    def f(sigma: float) -> float:
        return (qx - a * math.cos(sigma)) ** 2 + (qy - b * math.sin(sigma)) ** 2

    step = TWO_PI / COARSE_SAMPLES
    grid = [j * step for j in range(COARSE_SAMPLES)]
    values = [f(sigma) for sigma in grid]

    best_sigma, best_f = grid[0], values[0]
    for j in range(COARSE_SAMPLES):
        prev, nxt = values[j - 1], values[(j + 1) % COARSE_SAMPLES]
        if values[j] > prev or values[j] > nxt:
            continue
        sigma = _golden_section(f, grid[j] - step, grid[j] + step, SIGMA_TOL)
        sigma = _newton_polish(sigma, qx, qy, a, b, f)
        value = f(sigma)
        if value < best_f:
            best_sigma, best_f = sigma, value

    return Clearance(distance=math.sqrt(best_f), sigma_star=best_sigma % TWO_PI, inside=inside)


def _newton_polish(sigma: float, qx: float, qy: float, a: float, b: float, f, steps: int = 3) -> float:
    value = f(sigma)
    for _ in range(steps):
        cs, sn = math.cos(sigma), math.sin(sigma)
        g = 2.0 * (a * qx * sn - b * qy * cs + (b * b - a * a) * sn * cs)
        hess = 2.0 * (a * qx * cs + b * qy * sn + (b * b - a * a) * (cs * cs - sn * sn))
        if hess <= 0.0:
            break
        candidate = sigma - g / hess
        candidate_value = f(candidate)
        if candidate_value > value:
            break
        sigma, value = candidate, candidate_value
    return sigma


def barrier_terms(ego: VehicleState, ob: ObstacleTrack, ep: EnvelopeParams, params: VehicleParams,
                  env: Optional[ObstacleEnvelope] = None) -> BarrierEvaluation:
    """
    Barrier value, its rate, and the input-affine split of the HOCBF
    condition for u = (delta, a). Uses the kinematic mapping omega = v delta / L
    with the envelope axes and boundary angle frozen over the step.
    """
    env = env if env is not None else envelope(ob, ep)
    ell = ep.ego_point_offset
    ct, st_ = math.cos(ego.theta), math.sin(ego.theta)
    px, py = ego.px + ell * ct, ego.py + ell * st_
    clearance = min_clearance((px, py), env)
    ex, ey = env.point(clearance.sigma_star)

    rx, ry = px - ex, py - ey
    d = clearance.distance
    if d < MIN_DISTANCE:
        rx, ry = px - env.center[0], py - env.center[1]
        norm = math.hypot(rx, ry)
        if norm < MIN_DISTANCE:
            rx, ry, norm = ct, st_, 1.0
        rx, ry = rx / norm, ry / norm
        sign = 1.0
    else:
        rx, ry = rx / d, ry / d
        sign = -1.0 if clearance.inside else 1.0

    h = sign * d - ep.d_safe
    # ego reference point velocity relative to the frozen envelope
    pdx = ego.v * ct - ell * ego.omega * st_
    pdy = ego.v * st_ + ell * ego.omega * ct
    rdx, rdy = pdx - ob.vel[0], pdy - ob.vel[1]
    radial = rx * rdx + ry * rdy
    h_dot = sign * radial

    t_dot_r = ct * rx + st_ * ry
    n_dot_r = -st_ * rx + ct * ry
    A_row = (sign * ego.v * ego.v / params.L * n_dot_r, sign * t_dot_r)
    tangential = (rdx * rdx + rdy * rdy - radial * radial) / max(d, MIN_DISTANCE)
    drift = -(rx * ob.acc[0] + ry * ob.acc[1]) - ell * ego.omega ** 2 * t_dot_r + tangential
    b_scalar = sign * drift + ep.alpha1 * h_dot + ep.alpha2 * h
    return BarrierEvaluation(h=h, h_dot=h_dot, A_row=A_row, b_scalar=b_scalar,
                             sigma_star=clearance.sigma_star, distance=d, inside=clearance.inside)


def _constraints(u1: Sequence[float], rows: Sequence[Tuple[Tuple[float, float], float]],
                 qp: QpSetup) -> Tuple[DoubleMatrix, DoubleMatrix]:
    """G z <= h over z = (u2_delta, u2_a, beta)"""
    G, hv = [], []
    for (a0, a1), b in rows:
        G.append((-a0, -a1, -1.0))
        hv.append(a0 * u1[0] + a1 * u1[1] + b)
    G.append((1.0, 0.0, 0.0))
    hv.append(qp.u_max[0] - u1[0])
    G.append((0.0, 1.0, 0.0))
    hv.append(qp.u_max[1] - u1[1])
    G.append((-1.0, 0.0, 0.0))
    hv.append(u1[0] - qp.u_min[0])
    G.append((0.0, -1.0, 0.0))
    hv.append(u1[1] - qp.u_min[1])
    G.append((0.0, 0.0, -1.0))
    hv.append(0.0)
    return np.array(G, dtype=np.float64), np.array(hv, dtype=np.float64)


def solve_safety_qp(u1: Sequence[float], rows: Sequence[Tuple[Tuple[float, float], float]],
                    qp: QpSetup) -> QpResult:
    """
    min u2' P u2 + Q (beta - beta0)^2
    s.t. A_i (u1 + u2) + b_i + beta >= 0, u_min <= u1 + u2 <= u_max, beta >= 0.

    The objective is strictly convex, so the first KKT point found while
    enumerating active sets (by size, then lexicographically) is the optimum.
    """
    G, hv = _constraints(u1, rows, qp)
    H = np.zeros((3, 3))
    H[:2, :2] = 2.0 * qp.P_weight
    H[2, 2] = 2.0 * qp.Q_relax
    g = np.array([0.0, 0.0, -2.0 * qp.Q_relax * qp.beta0])
    slack = hv + FEAS_TOL * (1.0 + np.abs(hv))

    z0 = np.array([0.0, 0.0, qp.beta0])
    if np.all(G @ z0 <= slack):
        return QpResult(u2=(0.0, 0.0), beta=qp.beta0)

    m = G.shape[0]
    for size in range(1, 4):
        for active in itertools.combinations(range(m), size):
            Gw = G[list(active)]
            if np.linalg.matrix_rank(Gw) < size:
                continue
            kkt = np.zeros((3 + size, 3 + size))
            kkt[:3, :3] = H
            kkt[:3, 3:] = Gw.T
            kkt[3:, :3] = Gw
            rhs = np.concatenate([-g, hv[list(active)]])
            try:
                sol = np.linalg.solve(kkt, rhs)
            except np.linalg.LinAlgError:
                continue
            z, lam = sol[:3], sol[3:]
            if np.all(lam >= -DUAL_TOL) and np.all(G @ z <= slack):
                return QpResult(u2=(float(z[0]), float(z[1])), beta=float(z[2]),
                                active_set=active, multipliers=tuple(float(x) for x in lam))

    # Only reachable through degenerate bounds: minimise the worst violation with the box enforced.
    u2 = (min(max(0.0, qp.u_min[0] - u1[0]), qp.u_max[0] - u1[0]),
          min(max(0.0, qp.u_min[1] - u1[1]), qp.u_max[1] - u1[1]))
    beta = qp.beta0
    for (a0, a1), b in rows:
        beta = max(beta, -(a0 * (u1[0] + u2[0]) + a1 * (u1[1] + u2[1]) + b))
    return QpResult(u2=u2, beta=beta, feasible=False)


def filter_command(u1: TrackingCommand, ego: VehicleState, obstacles: Iterable[ObstacleTrack],
                   params: VehicleParams, ep: EnvelopeParams, qp: QpSetup,
                   axes_memory: Optional[Dict[int, Tuple[float, float]]] = None) -> Tuple[TrackingCommand, FilterReport]:
    """
    Minimal correction of the nominal command that keeps every nearby
    obstacle's barrier condition satisfied.
    :param axes_memory: envelope axes from the previous step keyed by obstacle id, updated in place
    """
    report = FilterReport()
    rows: List[Tuple[Tuple[float, float], float]] = []
    keys: List[int] = []

    for index, ob in enumerate(obstacles):
        if math.hypot(ob.pos[0] - ego.px, ob.pos[1] - ego.py) > ep.consider_radius:
            continue
        key = ob.id if ob.id is not None else index
        env = envelope(ob, ep)
        if axes_memory is not None:
            previous = axes_memory.get(key)
            if previous is not None and (
                abs(env.a_axis - previous[0]) > DRIFT_RATIO * previous[0]
                or abs(env.b_axis - previous[1]) > DRIFT_RATIO * previous[1]
            ):
                if FilterEvent.ENVELOPE_DRIFT not in report.events:
                    report.events.append(FilterEvent.ENVELOPE_DRIFT)
                logger.debug(f"Envelope of obstacle {key} changed by more than {DRIFT_RATIO:.0%} in one step")
            axes_memory[key] = (env.a_axis, env.b_axis)
        evaluation = barrier_terms(ego, ob, ep, params, env)
        rows.append((evaluation.A_row, evaluation.b_scalar))
        keys.append(key)
        report.h_values[key] = evaluation.h

    if report.h_values:
        report.min_h = min(report.h_values.values())

    u1_vec = (u1.delta, u1.accel)
    result = solve_safety_qp(u1_vec, rows, qp)
    report.u2 = result.u2
    report.beta = result.beta
    if not result.feasible:
        report.events.append(FilterEvent.BOX_INFEASIBLE)
        logger.warning(f"Safety QP infeasible within the input box; beta={result.beta:.3f}")

    delta = min(max(u1.delta + result.u2[0], qp.u_min[0]), qp.u_max[0])
    accel = min(max(u1.accel + result.u2[1], qp.u_min[1]), qp.u_max[1])
    for key, ((a0, a1), b) in zip(keys, rows):
        if a0 * delta + a1 * accel + b < -FEAS_TOL * (1.0 + abs(b)):
            report.events.append(FilterEvent.RELAXATION_ENGAGED)
            logger.debug(f"Barrier row for obstacle {key} satisfied only through relaxation")
            break
    return TrackingCommand(delta, accel), report
