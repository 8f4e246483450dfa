"""
Intersection routes: geometric seeds per lane and movement, DDP-refined
reference trajectories, the route conflict matrix and the plan cache.

Only the four movements entering from the south are planned. Vehicles
drive on the right; lane 1 is the inner lane (straight or left), lane 2
the outer lane (straight or right). Every other approach is an exact
rotation of the south routes.
"""
import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, FrozenSet, List, Optional, Tuple

import numpy as np
from scipy.spatial.distance import cdist

from config import config
from models.data_models import APPROACH_ORDER, Approach, Movement, VehicleParams, VehicleState
from models.scenario_config import ScenarioConfig
from models.traffic_models import route_name
from services.ddp_planner import (
    DdpParams,
    DdpProblem,
    ObstacleDisc,
    ReferenceTrajectory,
    max_curvature_limit,
    plan,
)
from services.vehicle_dynamics import wrap_angle
from utils.logger import get_logger

logger = get_logger("route_library")

CACHE_HEADER = "# fairlane-trajectory v2"
CSV_COLUMNS = ["t", "px", "py", "theta", "v", "omega", "kappa_ref", "v_ref"]
CONTROL_COLUMNS = ["k", "a", "alpha"]

LANE_MOVEMENTS: Dict[int, Tuple[Movement, ...]] = {
    1: (Movement.STRAIGHT, Movement.LEFT),
    2: (Movement.STRAIGHT, Movement.RIGHT),
}
CANONICAL = [(lane, mv) for lane, movements in LANE_MOVEMENTS.items() for mv in movements]


@dataclass(frozen=True)
class TurnSeed:
    """Straight, quarter arc, straight; all lengths along the path [m]"""
    x_lane: float
    entry_y: float
    pre_length: float
    kappa: float  # signed, positive for a left turn
    arc_length: float
    natural_length: float


@dataclass
class Route:
    approach: Approach
    lane: int
    movement: Movement
    trajectory: ReferenceTrajectory
    s_stop: float  # [m] arc length of the stop bar
    s_box_in: float  # [m]
    s_box_out: float  # [m]

    @property
    def name(self) -> str:
        return route_name(self.approach, self.lane, self.movement)

    @property
    def free_flow(self) -> float:
        """Unimpeded transit time [s]"""
        return self.trajectory.duration

    @property
    def length(self) -> float:
        return float(self.trajectory.arc_length[-1])


@dataclass
class RouteSet:
    routes: Dict[str, Route]
    conflicts: Dict[str, FrozenSet[str]]
    cache_key: str
    warnings: List[str] = field(default_factory=list)

    def route(self, approach: Approach, lane: int, movement: Movement) -> Route:
        return self.routes[route_name(approach, lane, movement)]

    def conflicting(self, a: Route, b: Route) -> bool:
        return b.name in self.conflicts[a.name]


def turn_seed(cfg: ScenarioConfig, lane: int, movement: Movement) -> TurnSeed:
    geom = cfg.geometry
    hb = geom.half_box
    x_lane = (lane - 0.5) * geom.lane_width
    entry_y = -hb - geom.approach_length
    if movement is Movement.STRAIGHT:
        length = 2.0 * (hb + geom.approach_length)
        return TurnSeed(x_lane, entry_y, length, 0.0, 0.0, length)

    vehicle = cfg.vehicle.to_params()
    r_min = geom.turn_radius_factor * vehicle.L / math.tan(vehicle.max_steer)
    if movement is Movement.LEFT:
        radius = max(hb + x_lane, r_min)
        exit_y = x_lane
        end_x = x_lane - radius
        exit_leg = end_x + hb + geom.approach_length
        kappa = 1.0 / radius
    else:
        radius = max(hb - x_lane, r_min)
        exit_y = -x_lane
        end_x = x_lane + radius
        exit_leg = hb + geom.approach_length - end_x
        kappa = -1.0 / radius
    pre = (exit_y - radius) - entry_y
    arc = 0.5 * math.pi * radius
    return TurnSeed(x_lane, entry_y, pre, kappa, arc, pre + arc + exit_leg)


def route_length(cfg: ScenarioConfig, seed: TurnSeed) -> float:
    """Planned length: the natural length, or the longest one when routes are equalized"""
    step = cfg.planner.v_nominal * cfg.planner.h
    if cfg.geometry.equalize_route_length:
        longest = max(turn_seed(cfg, lane, mv).natural_length for lane, mv in CANONICAL)
        return math.ceil(longest / step - 1e-9) * step
    return math.ceil(seed.natural_length / step - 1e-9) * step


def seed_states(seed: TurnSeed, length: float, v: float, h: float) -> np.ndarray:
    """Constant-speed samples of the seed path, (N+1)x5"""
    N = int(round(length / (v * h)))
    theta0 = 0.5 * math.pi
    states = np.zeros((N + 1, 5))
    y0 = seed.entry_y + seed.pre_length
    if seed.kappa != 0.0:
        theta1 = theta0 + seed.kappa * seed.arc_length
        x1 = seed.x_lane + (math.sin(theta1) - math.sin(theta0)) / seed.kappa
        y1 = y0 - (math.cos(theta1) - math.cos(theta0)) / seed.kappa
    else:
        theta1, x1, y1 = theta0, seed.x_lane, y0

    for k in range(N + 1):
        s = k * v * h
        if s <= seed.pre_length:
            states[k] = (seed.x_lane, seed.entry_y + s, theta0, v, 0.0)
        elif s <= seed.pre_length + seed.arc_length:
            sigma = s - seed.pre_length
            theta = theta0 + seed.kappa * sigma
            states[k] = (seed.x_lane + (math.sin(theta) - math.sin(theta0)) / seed.kappa,
                         y0 - (math.cos(theta) - math.cos(theta0)) / seed.kappa,
                         theta, v, v * seed.kappa)
        else:
            rest = s - seed.pre_length - seed.arc_length
            states[k] = (x1 + rest * math.cos(theta1), y1 + rest * math.sin(theta1), theta1, v, 0.0)
    return states


def plan_movement(cfg: ScenarioConfig, lane: int, movement: Movement) -> ReferenceTrajectory:
    """Path-following DDP over the seed of one south-approach movement"""
    pc = cfg.planner
    seed = turn_seed(cfg, lane, movement)
    waypoints = seed_states(seed, route_length(cfg, seed), pc.v_nominal, pc.h)
    N = waypoints.shape[0] - 1
    hb = cfg.geometry.half_box
    corners = [ObstacleDisc((sx * hb, sy * hb), pc.corner_radius, pc.corner_weight)
               for sx in (-1.0, 1.0) for sy in (-1.0, 1.0)] if pc.corner_weight > 0.0 else []
    prob = DdpProblem(
        x0=VehicleState.from_array(waypoints[0]),
        N=N,
        h=pc.h,
        Q=np.diag(pc.Q_diag),
        R=np.diag(pc.R_diag),
        Qf=np.diag(pc.Qf_diag),
        goal=VehicleState.from_array(waypoints[-1]),
        obstacles=corners,
        waypoints=waypoints,
        vehicle=cfg.vehicle.to_params(),
    )
    u_init = np.zeros((N, 2))
    u_init[:, 1] = np.diff(waypoints[:, 4]) / pc.h
    params = DdpParams(tol_J=pc.tol_J, a_min=pc.a_min, iter_max=pc.iter_max, mu_init=pc.mu_init)
    traj = plan(prob, u_init, params)
    logger.info(f"Planned {route_name(Approach.SOUTH, lane, movement)}: N={N}, J={traj.cost:.4g}, "
                f"{traj.iterations} iterations, converged={traj.converged}")
    return traj


def rotate_trajectory(traj: ReferenceTrajectory, angle: float) -> ReferenceTrajectory:
    c, s = math.cos(angle), math.sin(angle)
    states = traj.states.copy()
    states[:, 0] = c * traj.states[:, 0] - s * traj.states[:, 1]
    states[:, 1] = s * traj.states[:, 0] + c * traj.states[:, 1]
    states[:, 2] = [wrap_angle(th + angle) for th in traj.states[:, 2]]
    return ReferenceTrajectory(
        states=states,
        controls=traj.controls.copy(),
        curvature=traj.curvature.copy(),
        v_ref=traj.v_ref.copy(),
        cost=traj.cost,
        h=traj.h,
        iterations=traj.iterations,
        converged=traj.converged,
    )


def _crossing(arc: np.ndarray, margin: np.ndarray, i: int) -> float:
    """Arc length where the box margin changes sign between samples i-1 and i"""
    if i == 0:
        return float(arc[0])
    m0, m1 = margin[i - 1], margin[i]
    frac = m0 / (m0 - m1) if m0 != m1 else 0.0
    return float(arc[i - 1] + frac * (arc[i] - arc[i - 1]))


def box_span(traj: ReferenceTrajectory, half_box: float) -> Tuple[float, float]:
    """Arc lengths where the path enters and leaves the box"""
    margin = np.maximum(np.abs(traj.states[:, 0]), np.abs(traj.states[:, 1])) - half_box
    inside = np.flatnonzero(margin <= 0.0)
    if inside.size == 0:
        raise ValueError("route never enters the intersection box")
    arc = traj.arc_length
    first, last = int(inside[0]), int(inside[-1])
    s_in = _crossing(arc, margin, first)
    s_out = float(arc[-1]) if last == len(arc) - 1 else _crossing(arc, margin, last + 1)
    return s_in, s_out


def conflict_matrix(routes: Dict[str, Route], half_box: float, distance: float) -> Dict[str, FrozenSet[str]]:
    """Routes whose in-box paths come within `distance`; lane followers are not conflicts"""
    in_box = {}
    for name, route in routes.items():
        xy = route.trajectory.states[:, :2]
        in_box[name] = xy[np.max(np.abs(xy), axis=1) <= half_box]
    conflicts: Dict[str, set] = {name: set() for name in routes}
    names = list(routes)
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            ra, rb = routes[a], routes[b]
            if ra.approach is rb.approach and ra.lane == rb.lane:
                continue
            if in_box[a].size == 0 or in_box[b].size == 0:
                continue
            if float(cdist(in_box[a], in_box[b]).min()) < distance:
                conflicts[a].add(b)
                conflicts[b].add(a)
    return {name: frozenset(c) for name, c in conflicts.items()}


def cache_key(cfg: ScenarioConfig) -> str:
    payload = {
        "version": CACHE_HEADER,
        "geometry": cfg.geometry.model_dump(mode="json"),
        "planner": cfg.planner.model_dump(mode="json"),
        "vehicle": cfg.vehicle.model_dump(mode="json"),
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode("utf-8")).hexdigest()


def controls_path(path: Path) -> Path:
    """Companion file holding the planned inputs of a cached trajectory"""
    return path.with_name(f"{path.stem}.controls.csv")


def write_trajectory(path: Path, name: str, traj: ReferenceTrajectory) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fp:
        fp.write(f"{CACHE_HEADER}\n")
        fp.write(f"# movement={name}\n")
        fp.write(f"# N={traj.N}\n")
        fp.write(f"# h={float(traj.h)!r}\n")
        fp.write(f"# cost={float(traj.cost)!r}\n")
        fp.write(f"# iterations={traj.iterations}\n")
        fp.write(f"# converged={traj.converged}\n")
        writer = csv.writer(fp, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for k, t in enumerate(traj.times):
            row = [*traj.states[k], traj.curvature[k], traj.v_ref[k]]
            writer.writerow([repr(float(t))] + [repr(float(x)) for x in row])
    with controls_path(path).open("w", newline="", encoding="utf-8") as fp:
        writer = csv.writer(fp, lineterminator="\n")
        writer.writerow(CONTROL_COLUMNS)
        for k in range(traj.N):
            writer.writerow([k] + [repr(float(u)) for u in traj.controls[k]])


def read_trajectory(path: Path) -> Tuple[str, ReferenceTrajectory]:
    """
    Load a cached trajectory and its companion controls file.
    :raises ValueError: on a missing or mismatched header, a malformed body or missing controls
    """
    with path.open("r", encoding="utf-8") as fp:
        lines = fp.read().splitlines()
    if not lines or lines[0] != CACHE_HEADER:
        raise ValueError(f"{path}: not a {CACHE_HEADER[2:]} file")
    meta = {}
    body_start = 1
    while body_start < len(lines) and lines[body_start].startswith("#"):
        key, _, value = lines[body_start][1:].strip().partition("=")
        meta[key] = value
        body_start += 1
    if body_start >= len(lines) or lines[body_start].split(",") != CSV_COLUMNS:
        raise ValueError(f"{path}: expected columns {','.join(CSV_COLUMNS)}")
    rows = list(csv.reader(lines[body_start + 1:]))
    N = int(meta["N"])
    if len(rows) != N + 1:
        raise ValueError(f"{path}: expected {N + 1} rows, found {len(rows)}")
    body = np.array([[float(x) for x in row[1:8]] for row in rows]).reshape(N + 1, 7)

    companion = controls_path(path)
    if not companion.exists():
        raise ValueError(f"{path}: missing controls file {companion.name}")
    with companion.open("r", newline="", encoding="utf-8") as fp:
        control_rows = list(csv.reader(fp))
    if not control_rows or control_rows[0] != CONTROL_COLUMNS or len(control_rows) != N + 1:
        raise ValueError(f"{companion}: expected {N} control rows")
    controls = np.array([[float(x) for x in row[1:3]] for row in control_rows[1:]]).reshape(N, 2)

    traj = ReferenceTrajectory(
        states=body[:, :5].copy(),
        controls=controls,
        curvature=body[:, 5].copy(),
        v_ref=body[:, 6].copy(),
        cost=float(meta["cost"]),
        h=float(meta["h"]),
        iterations=int(meta["iterations"]),
        converged=meta["converged"] == "True",
    )
    return meta["movement"], traj


def _canonical_trajectory(cfg: ScenarioConfig, lane: int, movement: Movement, folder: Path) -> ReferenceTrajectory:
    name = route_name(Approach.SOUTH, lane, movement)
    path = folder / f"{name}.csv"
    if path.exists():
        try:
            stored_name, traj = read_trajectory(path)
            if stored_name == name:
                logger.debug(f"Loaded {name} from {path}")
                return traj
            logger.warning(f"Cache file {path} holds {stored_name}, replanning {name}")
        except (ValueError, KeyError, IndexError) as e:
            logger.warning(f"Ignoring unreadable cache file {path}: {e}")
    traj = plan_movement(cfg, lane, movement)
    write_trajectory(path, name, traj)
    return traj


def build_route_set(cfg: ScenarioConfig, cache_dir: Optional[Path] = None) -> RouteSet:
    """All sixteen routes, planned or loaded from the cache"""
    key = cache_key(cfg)
    folder = Path(cache_dir or config.app.cache_dir) / key[:16]
    hb = cfg.geometry.half_box
    vehicle: VehicleParams = cfg.vehicle.to_params()
    kappa_max = max_curvature_limit(vehicle)
    warnings: List[str] = []

    routes: Dict[str, Route] = {}
    for lane, movement in CANONICAL:
        base = _canonical_trajectory(cfg, lane, movement, folder)
        peak = float(np.max(np.abs(base.curvature)))
        if peak > kappa_max:
            message = (f"{route_name(Approach.SOUTH, lane, movement)} peak curvature {peak:.3f} 1/m "
                       f"exceeds the steering limit {kappa_max:.3f} 1/m")
            logger.warning(message)
            warnings.append(message)
        for approach in APPROACH_ORDER:
            traj = base if approach is Approach.SOUTH else rotate_trajectory(base, approach.rotation)
            s_in, s_out = box_span(traj, hb)
            route = Route(approach, lane, movement, traj,
                          s_stop=s_in - cfg.geometry.stop_bar_offset, s_box_in=s_in, s_box_out=s_out)
            routes[route.name] = route

    if not cfg.geometry.equalize_route_length:
        message = "route lengths are not equalized; fairness indices assume equal nominal travel times"
        logger.warning(message)
        warnings.append(message)

    conflicts = conflict_matrix(routes, hb, cfg.geometry.conflict_distance)
    logger.info(f"Route set {key[:16]}: {len(routes)} routes, "
                f"{sum(len(c) for c in conflicts.values()) // 2} conflicting pairs")
    return RouteSet(routes=routes, conflicts=conflicts, cache_key=key, warnings=warnings)
