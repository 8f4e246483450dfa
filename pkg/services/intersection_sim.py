"""
Four-way intersection simulation.

Every control period the world spawns due arrivals, asks the right-of-way
policy for speed caps, runs each vehicle through LQR/PD tracking, the
repulsive field and the barrier safety filter, integrates the dynamic
bicycle model and records what happened. The proposed policy grants
authority through the inequity-aversion allocator and lets the authority
holder reserve its route through the box.
"""
import math
from dataclasses import dataclass, field
from pathlib import Path
from time import perf_counter
from typing import Any, Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from models.data_models import (
    Approach,
    Movement,
    ObstacleTrack,
    Policy,
    TrackingCommand,
    VehicleParams,
    VehicleState,
    state_to_dict,
)
from models.scenario_config import ScenarioConfig, SimulationSection
from models.traffic_models import CompletionRecord, RunArtifacts, StepRecord, VehicleSample, VehicleView
from services.baseline_policies import (
    AllWayStopPolicy,
    IntersectionPolicy,
    PolicyDecision,
    PretimedSignalPolicy,
)
from services.fairness_allocator import FairnessLedger, FairnessParams, allocate
from services.metrics import gini, jain_index, pairwise_min_gap, summarize
from services.repulsive_avoidance import RepulsiveParams, blend_commands, repulsive_force
from services.route_library import Route, RouteSet, build_route_set
from services.safety_filter import EnvelopeParams, QpSetup, filter_command
from services.tracking_control import (
    LongitudinalParams,
    LqrWeights,
    TrackingController,
    compute_tracking_errors,
    longitudinal_control,
)
from services.traffic_demand import DemandGenerator
from services.vehicle_dynamics import detect_collision, step_tracking_model
from utils.logger import get_logger

logger = get_logger("intersection_sim")


class SimulationAbort(Exception):
    """Raised when a vehicle leaves its path or its state stops being finite"""

    def __init__(self, message: str, state_dump: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.state_dump = state_dump or {}


@dataclass(frozen=True)
class ControlStack:
    """Service parameter objects built once from the scenario sections"""
    vehicle: VehicleParams
    weights: LqrWeights
    longitudinal: LongitudinalParams
    repulsive: RepulsiveParams
    envelope: EnvelopeParams
    qp: QpSetup
    fairness: FairnessParams

    @classmethod
    def from_config(cls, cfg: ScenarioConfig) -> "ControlStack":
        tr = cfg.tracking
        return cls(
            vehicle=cfg.vehicle.to_params(),
            weights=LqrWeights(Q=np.diag(tr.Q_diag), R=np.array([[tr.R]]), max_iter=tr.max_iter, eps=tr.eps),
            longitudinal=LongitudinalParams(kp=tr.kp, d_th=tr.d_th, v_th=tr.v_th,
                                            a_strong=tr.a_strong, a_gentle=tr.a_gentle),
            repulsive=RepulsiveParams(**cfg.repulsive.model_dump()),
            envelope=EnvelopeParams(**cfg.envelope.model_dump()),
            qp=QpSetup(P_weight=cfg.qp.P, Q_relax=cfg.qp.Q_relax, beta0=cfg.qp.beta0,
                       u_min=tuple(cfg.qp.u_min), u_max=tuple(cfg.qp.u_max)),
            fairness=FairnessParams(**cfg.fairness.model_dump()),
        )


@dataclass
class SimVehicle:
    id: int
    route: Route
    state: VehicleState
    controller: TrackingController
    spawn_time: float  # [s]
    d_goal: float  # [m] remaining arc length
    acc: Tuple[float, float] = (0.0, 0.0)  # [m/s^2] finite-difference estimate
    axes_memory: Dict[int, Tuple[float, float]] = field(default_factory=dict)

    @property
    def s(self) -> float:
        return max(self.route.length - self.d_goal, 0.0)

    def view(self, half_length: float) -> VehicleView:
        r = self.route
        return VehicleView(id=self.id, approach=r.approach, lane=r.lane, movement=r.movement, v=self.state.v,
                           s=self.s, s_stop=r.s_stop, s_box_in=r.s_box_in, s_box_out=r.s_box_out,
                           half_length=half_length)


class ProposedPolicy(IntersectionPolicy):
    """
    Fairness-aware coordination. One vehicle per step holds authority.

    With ``yield_scope="all"`` every vehicle in the approach zone other than
    the holder tracks a zero speed reference. The zone is the stretch within
    the coordination radius of the stop bar, up to the box, for vehicles that
    have not claimed the box. Authority goes to the first zone vehicle of a
    lane, or to any vehicle while the zone is empty. The holder claims the
    box once it can no longer follow the stop-bar profile, provided no
    conflicting claim is open.

    With ``yield_scope="conflicting"`` a holder near the box reserves its
    route once no conflicting reservation is open and its lane leader is
    already through or reserved. Vehicles without a reservation are held at
    their stop bar.

    In both modes a vehicle that can no longer stop before the box is
    committed without authority.
    """
    name = Policy.PROPOSED.value

    def __init__(self, routes: RouteSet, fairness: FairnessParams, rng: np.random.Generator,
                 sim: SimulationSection, v_nominal: float, v_max: float, brake_decel: float,
                 coordination_radius: float):
        super().__init__(sim.stop_decel, v_nominal)
        self.routes = routes
        self.fairness = fairness
        self.rng = rng
        self.v_max = v_max
        self.brake_decel = brake_decel
        self.coordination_radius = coordination_radius
        self.yield_scope = sim.yield_scope
        self.ledger = FairnessLedger(fairness.W)
        self.reserved: Set[int] = set()

    def _conflict_free(self, view: VehicleView, by_id: Dict[int, VehicleView]) -> bool:
        conflicts = self.routes.conflicts[view.route]
        return not any(by_id[vid].route in conflicts for vid in self.reserved)

    def _leader_reserved(self, view: VehicleView, views: Sequence[VehicleView]) -> bool:
        for other in views:
            if (other.id != view.id and other.approach is view.approach and other.lane == view.lane
                    and other.s > view.s and not other.cleared and other.id not in self.reserved):
                return False
        return True

    def _cannot_stop(self, view: VehicleView) -> bool:
        return view.v * view.v / (2.0 * self.brake_decel) > view.d_box

    def _commit(self, view: VehicleView, t: float) -> None:
        self.reserved.add(view.id)
        logger.warning(f"Vehicle {view.id} cannot stop before the box, committed without authority at t={t:.2f}s")

    def in_approach_zone(self, view: VehicleView) -> bool:
        """Unreserved, short of the box and within the coordination radius of the bar"""
        return (view.id not in self.reserved and view.d_box > 0.0
                and view.d_stop <= self.coordination_radius)

    def _allocate(self, step: int, candidates: Sequence[VehicleView]) -> PolicyDecision:
        record = allocate(step, {v.id: v.v for v in candidates}, self.ledger, self.fairness, self.rng, self.v_max)
        return PolicyDecision(holder=record.winner, authorized={record.winner},
                              eligible_size=record.eligible_size, winner_iau=record.winner_iau)

    def decide(self, step: int, t: float, views: Sequence[VehicleView]) -> PolicyDecision:
        by_id = {v.id: v for v in views}
        self.reserved = {vid for vid in self.reserved if vid in by_id and not by_id[vid].cleared}
        if self.yield_scope == "all":
            return self._decide_all(step, t, views, by_id)

        decision = self._allocate(step, views)
        holder = by_id[decision.holder]
        if (holder.id not in self.reserved and not holder.cleared
                and holder.d_stop <= self.coordination_radius
                and self._conflict_free(holder, by_id) and self._leader_reserved(holder, views)):
            self.reserved.add(holder.id)
            logger.debug(f"Vehicle {holder.id} reserved {holder.route} at t={t:.2f}s")

        for v in views:
            if v.id in self.reserved or v.cleared:
                continue
            if self._cannot_stop(v):
                self._commit(v, t)
                continue
            decision.caps[v.id] = self.hold(v)
        return decision

    def _decide_all(self, step: int, t: float, views: Sequence[VehicleView],
                    by_id: Dict[int, VehicleView]) -> PolicyDecision:
        for v in views:
            if v.id not in self.reserved and not v.cleared and v.d_stop <= self.coordination_radius \
                    and self._cannot_stop(v):
                self._commit(v, t)
        zone = [v for v in views if self.in_approach_zone(v)]
        leaders = [v for v in zone if not any(o.approach is v.approach and o.lane == v.lane and o.s > v.s
                                              for o in zone)]
        decision = self._allocate(step, leaders or views)
        for v in zone:
            if v.id != decision.holder:
                decision.caps[v.id] = 0.0

        holder = by_id[decision.holder]
        if self.in_approach_zone(holder):
            if not self._conflict_free(holder, by_id):
                decision.caps[holder.id] = self.hold(holder)
            elif holder.v > self.hold(holder):
                self.reserved.add(holder.id)
                logger.debug(f"Vehicle {holder.id} claimed the box on {holder.route} at t={t:.2f}s")
        return decision


def make_policy(cfg: ScenarioConfig, routes: RouteSet, rng: np.random.Generator,
                stack: ControlStack) -> IntersectionPolicy:
    sim = cfg.simulation
    v_nominal = cfg.planner.v_nominal
    if sim.policy is Policy.ALL_WAY_STOP:
        return AllWayStopPolicy(sim.stop_decel, v_nominal)
    if sim.policy is Policy.PRETIMED_SIGNAL:
        return PretimedSignalPolicy(cfg.signal, sim.stop_decel, v_nominal)
    return ProposedPolicy(routes, stack.fairness, rng, sim, v_nominal,
                          v_max=cfg.vehicle.max_speed, brake_decel=abs(cfg.tracking.a_strong),
                          coordination_radius=cfg.geometry.coordination_radius)


def headway_cap(ego: VehicleState, others: Sequence[VehicleState], sim: SimulationSection, length: float) -> float:
    """Constant time-gap speed bound behind the nearest vehicle ahead in the ego's path"""
    c, s = math.cos(ego.theta), math.sin(ego.theta)
    cap = math.inf
    for o in others:
        dx, dy = o.px - ego.px, o.py - ego.py
        lon = c * dx + s * dy
        lat = -s * dx + c * dy
        if 0.0 < lon <= sim.headway_lookahead and abs(lat) <= sim.headway_lateral \
                and math.cos(o.theta - ego.theta) > 0.0:
            gap = lon - length
            cap = min(cap, max(0.0, (gap - sim.headway_standstill) / sim.headway_time))
    return cap


class World:
    """Vehicles, demand, policy and the artifacts recorded so far"""

    def __init__(self, cfg: ScenarioConfig, routes: RouteSet, policy: Optional[IntersectionPolicy] = None,
                 spawn: bool = True):
        self.cfg = cfg
        self.routes = routes
        self.stack = ControlStack.from_config(cfg)
        self.rng = np.random.default_rng(cfg.simulation.seed)
        self.policy = policy or make_policy(cfg, routes, self.rng, self.stack)
        self.demand: Optional[DemandGenerator] = DemandGenerator(cfg.demand) if spawn else None
        self.vehicles: Dict[int, SimVehicle] = {}
        self.step = 0
        self.next_id = 0
        self.artifacts = RunArtifacts(warnings=list(routes.warnings))
        self.collided: Set[Tuple[int, int]] = set()

    @property
    def time(self) -> float:
        return self.step * self.cfg.simulation.Ts

    @property
    def Ts(self) -> float:
        return self.cfg.simulation.Ts

    def entry_point(self, approach: Approach, lane: int) -> np.ndarray:
        return self.routes.route(approach, lane, Movement.STRAIGHT).trajectory.states[0, :2]

    def is_clear(self, approach: Approach, lane: int) -> bool:
        entry = self.entry_point(approach, lane)
        for v in self.vehicles.values():
            if v.route.approach is approach and v.route.lane == lane and \
                    math.hypot(v.state.px - entry[0], v.state.py - entry[1]) < self.cfg.demand.spawn_clearance:
                return False
        return True

    def add_vehicle(self, route: Route, index: int = 0, speed: Optional[float] = None) -> SimVehicle:
        """Place a vehicle on a reference point of its route"""
        px, py, theta, v_ref = route.trajectory.states[index, :4]
        state = VehicleState(float(px), float(py), float(theta), 0.0, 0.0)
        if speed is None:
            others = [o.state for o in self.vehicles.values()]
            speed = min(float(v_ref), headway_cap(state, others, self.cfg.simulation, self.stack.vehicle.length))
        tr = self.cfg.tracking
        vehicle = SimVehicle(
            id=self.next_id,
            route=route,
            state=VehicleState(state.px, state.py, state.theta, speed, 0.0),
            controller=TrackingController(self.stack.vehicle, self.stack.weights, self.Ts, tr.schedule_band,
                                          tr.force_gain_update, tr.tustin_input),
            spawn_time=self.time,
            d_goal=float(route.length - route.trajectory.arc_length[index]),
        )
        vehicle.controller.k_hint = index
        self.vehicles[vehicle.id] = vehicle
        self.artifacts.counts.setdefault(vehicle.id, 0)
        self.artifacts.spawned += 1
        self.next_id += 1
        logger.debug(f"Vehicle {vehicle.id} entered on {route.name} at t={self.time:.2f}s")
        return vehicle

    def dump(self) -> Dict[str, Any]:
        return {
            "step": self.step,
            "t": self.time,
            "vehicles": {vid: {"route": v.route.name, **state_to_dict(v.state)} for vid, v in self.vehicles.items()},
        }


def _control(world: World, vehicle: SimVehicle, active: List[SimVehicle], tracks: Dict[int, ObstacleTrack],
             cap: float) -> Tuple[TrackingCommand, Any]:
    stack = world.stack
    sim = world.cfg.simulation
    traj = vehicle.route.trajectory
    delta, errors = vehicle.controller.steer(vehicle.state, traj)
    if abs(errors.error.e_cg) > sim.max_lateral_error:
        raise SimulationAbort(f"vehicle {vehicle.id} is {errors.error.e_cg:.2f} m off {vehicle.route.name} "
                              f"at t={world.time:.2f}s", world.dump())

    others = [o for o in active if o.id != vehicle.id]
    v_ref = min(float(traj.v_ref[errors.index]), cap,
                headway_cap(vehicle.state, [o.state for o in others], sim, stack.vehicle.length))
    obstacles = [tracks[o.id] for o in others]
    force = repulsive_force(vehicle.state, obstacles, stack.repulsive)
    delta, v_ref, _ = blend_commands(delta, v_ref, vehicle.state.theta, force, stack.vehicle.max_steer)
    accel = longitudinal_control(vehicle.state.v, v_ref, errors.distance_to_goal, stack.longitudinal,
                                 stack.vehicle.max_accel)
    return filter_command(TrackingCommand(delta, accel), vehicle.state, obstacles, stack.vehicle,
                          stack.envelope, stack.qp, vehicle.axes_memory)


def _record_collisions(world: World, active: List[SimVehicle]) -> int:
    params = world.stack.vehicle
    reach = 2.0 * params.circumscribed_radius
    new = 0
    for i, a in enumerate(active):
        for b in active[i + 1:]:
            if math.hypot(a.state.px - b.state.px, a.state.py - b.state.py) > reach:
                continue
            pair = (a.id, b.id)
            if pair not in world.collided and detect_collision(a.state, params, b.state, params):
                world.collided.add(pair)
                new += 1
                logger.warning(f"Collision between vehicles {a.id} and {b.id} at t={world.time:.2f}s")
    return new


def simulate_step(world: World, policy: Optional[IntersectionPolicy] = None) -> World:
    """Advance the world by one control period"""
    policy = policy or world.policy
    art = world.artifacts
    t = world.time
    Ts = world.Ts
    sim = world.cfg.simulation
    params = world.stack.vehicle

    spawned = 0
    if world.demand is not None:
        for arrival in world.demand.spawn(t, world.is_clear):
            world.add_vehicle(world.routes.route(arrival.approach, arrival.lane, arrival.movement))
            spawned += 1

    active = list(world.vehicles.values())
    decision = PolicyDecision()
    collisions = 0
    completed = 0
    min_gap = None
    if active:
        start = perf_counter()
        views = [v.view(0.5 * params.length) for v in active]
        decision = policy.decide(world.step, t, views)
        tracks = {v.id: ObstacleTrack.from_state(v.state, params, acc=v.acc, id=v.id) for v in active}
        commands = {v.id: _control(world, v, active, tracks, decision.cap(v.id)) for v in active}
        art.durations.append(perf_counter() - start)

        for v in active:
            cmd, report = commands[v.id]
            granted = int(v.id in decision.authorized)
            if granted:
                art.counts[v.id] = art.counts.get(v.id, 0) + 1
            x = v.state
            art.samples.append(VehicleSample(t=t, id=v.id, px=x.px, py=x.py, theta=x.theta, v=x.v, omega=x.omega,
                                             delta_cmd=cmd.delta, a_cmd=cmd.accel, authority_flag=granted,
                                             min_h=report.min_h, u2_norm=report.u2_norm, beta=report.beta))
            new = step_tracking_model(x, cmd, params, Ts)
            if not new.is_finite():
                raise SimulationAbort(f"vehicle {v.id} state is not finite at t={t:.2f}s", world.dump())
            v.acc = ((new.v * math.cos(new.theta) - x.v * math.cos(x.theta)) / Ts,
                     (new.v * math.sin(new.theta) - x.v * math.sin(x.theta)) / Ts)
            v.state = new
            v.d_goal = compute_tracking_errors(new, v.route.trajectory, v.controller.k_hint).distance_to_goal

        collisions = _record_collisions(world, active)
        min_gap = pairwise_min_gap(np.array([[v.state.px, v.state.py] for v in active]), params.circumscribed_radius)

        for v in active:
            if v.d_goal <= sim.completion_tolerance:
                art.completions.append(CompletionRecord(
                    id=v.id, approach=v.route.approach.value, lane=v.route.lane, movement=v.route.movement.value,
                    spawn_time=v.spawn_time, completion_time=t + Ts, free_flow=v.route.free_flow,
                ))
                del world.vehicles[v.id]
                completed += 1
                logger.debug(f"Vehicle {v.id} completed {v.route.name} at t={t + Ts:.2f}s")

    art.collisions += collisions
    art.min_gaps.append(min_gap)
    counts = list(art.counts.values())
    jfi, gini_value = jain_index(counts), gini(counts)
    art.jfi_series.append(jfi)
    art.gini_series.append(gini_value)
    art.steps.append(StepRecord(
        step=world.step, t=t, active=len(active), holder=decision.holder, eligible_size=decision.eligible_size,
        winner_iau=decision.winner_iau, min_gap=min_gap, spawned=spawned, completed=completed,
        deferred=world.demand.deferred if world.demand is not None else 0, collisions=collisions,
        jfi=jfi, gini=gini_value,
    ))
    world.step += 1
    return world


def run_scenario(cfg: ScenarioConfig, routes: Optional[RouteSet] = None,
                 cache_dir: Optional[Path] = None) -> RunArtifacts:
    """Simulate one scenario over its horizon and summarize it"""
    sim = cfg.simulation
    routes = routes or build_route_set(cfg, cache_dir)
    world = World(cfg, routes)
    logger.info(f"Run {cfg.label}: policy {sim.policy.value}, {cfg.demand.level:.0f} veh/hr "
                f"{cfg.distribution_name}, {sim.steps} steps of {sim.Ts}s")
    art = world.artifacts
    try:
        for _ in range(sim.steps):
            simulate_step(world)
    except SimulationAbort as exc:
        art.aborted = True
        art.abort_reason = str(exc)
        logger.error(f"Run {cfg.label} aborted: {exc}; state {exc.state_dump}")

    art.summary = summarize(art, label=cfg.label, policy=sim.policy.value, demand_level=cfg.demand.level,
                            distribution=cfg.distribution_name, horizon=world.time, Ts=sim.Ts,
                            critical_threshold=sim.critical_threshold, warmup=sim.warmup_steps)
    return art
