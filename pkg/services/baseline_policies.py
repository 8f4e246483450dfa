"""
Right-of-way policies that turn the traffic picture into per-vehicle speed caps.

A policy looks at VehicleView snapshots once per step and answers with a
PolicyDecision: an upper bound on the reference speed of every vehicle it
holds back plus the set of vehicles that hold right of way this step. The
tracking stack does the rest, so every policy drives the same vehicles
through the same controllers.
"""
import math
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Optional, Sequence, Set, Tuple

from models.data_models import APPROACH_ORDER, Approach, Movement, Policy
from models.scenario_config import SignalSection
from models.traffic_models import VehicleView
from utils.logger import get_logger

logger = get_logger("baseline_policies")

FREE = math.inf


def stop_profile(d_stop: float, decel: float) -> float:
    """Highest speed that still stops at the bar with constant deceleration"""
    return math.sqrt(2.0 * decel * max(d_stop, 0.0))


@dataclass
class PolicyDecision:
    """Speed caps for one step; vehicles without an entry are unconstrained"""
    caps: Dict[int, float] = field(default_factory=dict)
    authorized: Set[int] = field(default_factory=set)
    holder: Optional[int] = None
    eligible_size: int = 0
    winner_iau: Optional[float] = None

    def cap(self, vehicle_id: int) -> float:
        return self.caps.get(vehicle_id, FREE)


class IntersectionPolicy:
    """Base class: remembers the nominal speed and the stopping deceleration"""
    name = "base"

    def __init__(self, stop_decel: float, v_nominal: float):
        self.stop_decel = stop_decel
        self.v_nominal = v_nominal

    def decide(self, step: int, t: float, views: Sequence[VehicleView]) -> PolicyDecision:
        raise NotImplementedError

    def hold(self, view: VehicleView) -> float:
        return stop_profile(view.d_stop, self.stop_decel)

    def finish(self, decision: PolicyDecision, views: Sequence[VehicleView]) -> PolicyDecision:
        """Vehicles whose cap does not bind hold right of way"""
        decision.authorized = {v.id for v in views if decision.cap(v.id) >= self.v_nominal}
        decision.eligible_size = len(views)
        return decision


class AllWayStopPolicy(IntersectionPolicy):
    """
    Every vehicle stops at its bar; stopped vehicles enter one at a time in
    order of stop completion, ties by approach order and then id.
    """
    name = Policy.ALL_WAY_STOP.value

    def __init__(self, stop_decel: float, v_nominal: float, bar_tolerance: float = 1.5,
                 stop_speed: float = 0.1, stop_time: float = 0.5):
        super().__init__(stop_decel, v_nominal)
        self.bar_tolerance = bar_tolerance
        self.stop_speed = stop_speed
        self.stop_time = stop_time
        self.stopped_since: Dict[int, float] = {}
        self.queue: Dict[int, Tuple[float, int, int]] = {}
        self.released: Set[int] = set()
        self.occupant: Optional[int] = None

    def _update_stops(self, t: float, views: Sequence[VehicleView]) -> None:
        for v in views:
            if v.id in self.released or v.id in self.queue:
                continue
            if v.d_stop <= self.bar_tolerance and abs(v.v) <= self.stop_speed:
                since = self.stopped_since.setdefault(v.id, t)
                if t - since >= self.stop_time - 1e-9:
                    self.queue[v.id] = (t, APPROACH_ORDER.index(v.approach), v.id)
                    logger.debug(f"Vehicle {v.id} completed its stop at t={t:.2f}s")
            else:
                self.stopped_since.pop(v.id, None)

    def decide(self, step: int, t: float, views: Sequence[VehicleView]) -> PolicyDecision:
        present = {v.id for v in views}
        for store in (self.stopped_since, self.queue):
            for vid in [k for k in store if k not in present]:
                del store[vid]
        self.released &= present

        by_id = {v.id: v for v in views}
        if self.occupant is not None and (self.occupant not in by_id or by_id[self.occupant].cleared):
            self.occupant = None

        self._update_stops(t, views)
        if self.occupant is None and self.queue:
            winner = min(self.queue, key=self.queue.get)
            del self.queue[winner]
            self.released.add(winner)
            self.occupant = winner
            logger.debug(f"Vehicle {winner} released into the box at t={t:.2f}s")

        decision = PolicyDecision(holder=self.occupant)
        for v in views:
            if v.id not in self.released:
                decision.caps[v.id] = self.hold(v)
        return self.finish(decision, views)


# Phase order: NS through+right, NS left, EW through+right, EW left
PHASES: List[Tuple[FrozenSet[Approach], FrozenSet[Movement]]] = [
    (frozenset({Approach.NORTH, Approach.SOUTH}), frozenset({Movement.STRAIGHT, Movement.RIGHT})),
    (frozenset({Approach.NORTH, Approach.SOUTH}), frozenset({Movement.LEFT})),
    (frozenset({Approach.EAST, Approach.WEST}), frozenset({Movement.STRAIGHT, Movement.RIGHT})),
    (frozenset({Approach.EAST, Approach.WEST}), frozenset({Movement.LEFT})),
]


class PretimedSignalPolicy(IntersectionPolicy):
    """Fixed four-phase signal with protected lefts"""
    name = Policy.PRETIMED_SIGNAL.value

    def __init__(self, signal: SignalSection, stop_decel: float, v_nominal: float):
        super().__init__(stop_decel, v_nominal)
        self.signal = signal
        self.committed: Set[int] = set()

    def phase(self, t: float) -> Tuple[int, float]:
        """(phase index, seconds into the phase)"""
        s = self.signal
        tc = math.fmod(t, s.cycle)
        span = s.green + s.yellow + s.all_red
        index = min(int(tc // span), len(PHASES) - 1)
        return index, tc - index * span

    def indication(self, t: float, approach: Approach, movement: Movement) -> str:
        index, into = self.phase(t)
        approaches, movements = PHASES[index]
        if approach not in approaches or movement not in movements:
            return "red"
        if into < self.signal.green:
            return "green"
        if into < self.signal.green + self.signal.yellow:
            return "yellow"
        return "red"

    def decide(self, step: int, t: float, views: Sequence[VehicleView]) -> PolicyDecision:
        self.committed &= {v.id for v in views}
        decision = PolicyDecision()
        for v in views:
            if v.id in self.committed or v.cleared:
                continue
            light = self.indication(t, v.approach, v.movement)
            if light == "green":
                if v.d_stop < 0.0:
                    self.committed.add(v.id)
                continue
            if light == "yellow" and v.v * v.v / (2.0 * self.stop_decel) > v.d_stop:
                self.committed.add(v.id)
                logger.debug(f"Vehicle {v.id} cannot stop on yellow, committed at t={t:.2f}s")
                continue
            decision.caps[v.id] = self.hold(v)
        return self.finish(decision, views)
