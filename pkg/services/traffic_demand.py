"""
Deterministic arrivals for the four approaches.

Every approach with a positive share runs its own arrival clock with
headway 3600/(level * share) seconds. The clocks of the active approaches
are staggered by equal fractions of their headway in approach order, so a
balanced demand interleaves evenly and the first arrival, on the first
active approach, is at t = 0. Movements are split per approach by
largest-deficit round robin. Arrivals whose entry lane is occupied wait in
a FIFO queue.
"""
from collections import deque
from dataclasses import dataclass
from typing import Callable, Deque, Dict, List, Sequence, Tuple, TypeVar

from models.data_models import APPROACH_ORDER, Approach, Movement
from models.scenario_config import DemandSection
from utils.logger import get_logger

logger = get_logger("traffic_demand")

TIME_EPS = 1e-9  # [s]
K = TypeVar("K")


@dataclass(frozen=True)
class Arrival:
    approach: Approach
    lane: int
    movement: Movement
    requested: float  # [s]


def pick_largest_deficit(shares: Sequence[Tuple[K, float]], served: Dict[K, int]) -> K:
    """Key whose served count lags its share the most; ties go to the earlier key"""
    total = sum(served.values()) + 1
    best = None
    best_deficit = -float("inf")
    for key, share in shares:
        if share <= 0.0:
            continue
        deficit = share * total - served[key]
        if deficit > best_deficit + 1e-12:
            best, best_deficit = key, deficit
    if best is None:
        raise ValueError("no positive share to pick from")
    return best


def headway(demand: DemandSection, approach: Approach) -> float:
    """Headway of one approach's arrival clock [s], infinite for an unused approach"""
    share = demand.shares()[approach]
    return float("inf") if share == 0.0 else 3600.0 / (demand.level * share)


class DemandGenerator:
    """Per-approach arrival clocks plus the deferred-spawn queue"""

    def __init__(self, demand: DemandSection):
        self.demand = demand
        active = [a for a, share in demand.shares().items() if share > 0.0]
        self.headways: Dict[Approach, float] = {a: headway(demand, a) for a in active}
        self._phase: Dict[Approach, float] = {a: j / len(active) for j, a in enumerate(active)}
        self._next_index: Dict[Approach, int] = {a: 0 for a in active}
        split = demand.movement_split
        self._movement_shares = [(Movement.STRAIGHT, split.straight), (Movement.LEFT, split.left),
                                 (Movement.RIGHT, split.right)]
        self._movement_served: Dict[Approach, Dict[Movement, int]] = {
            a: {m: 0 for m in Movement} for a in APPROACH_ORDER
        }
        self._straight_lane: Dict[Approach, int] = {a: 1 for a in APPROACH_ORDER}
        self.queue: Deque[Arrival] = deque()
        self.requested = 0

    @property
    def deferred(self) -> int:
        return len(self.queue)

    def arrival_time(self, approach: Approach, n: int) -> float:
        """Request time of the n-th arrival on an approach [s]"""
        return (n + self._phase[approach]) * self.headways[approach]

    def _draw(self, approach: Approach, t: float) -> Arrival:
        served = self._movement_served[approach]
        movement = pick_largest_deficit(self._movement_shares, served)
        served[movement] += 1
        if movement is Movement.LEFT:
            lane = 1
        elif movement is Movement.RIGHT:
            lane = 2
        else:
            lane = self._straight_lane[approach]
            self._straight_lane[approach] = 3 - lane
        return Arrival(approach, lane, movement, t)

    def arrivals_until(self, t: float) -> List[Arrival]:
        """New arrivals with request time <= t, by request time then approach order"""
        due: List[Tuple[float, int, Approach]] = []
        for approach, n in self._next_index.items():
            while self.arrival_time(approach, n) <= t + TIME_EPS:
                due.append((self.arrival_time(approach, n), APPROACH_ORDER.index(approach), approach))
                n += 1
            self._next_index[approach] = n
        new = [self._draw(approach, requested) for requested, _, approach in sorted(due)]
        self.requested += len(new)
        return new

    def spawn(self, t: float, is_clear: Callable[[Approach, int], bool]) -> List[Arrival]:
        """
        Arrivals that enter at time t. Queued arrivals go first; an entry lane
        takes at most one vehicle per call.
        """
        new = self.arrivals_until(t)
        self.queue.extend(new)
        spawned: List[Arrival] = []
        blocked = set()
        waiting: Deque[Arrival] = deque()
        while self.queue:
            arrival = self.queue.popleft()
            lane_key = (arrival.approach, arrival.lane)
            if lane_key not in blocked and is_clear(arrival.approach, arrival.lane):
                spawned.append(arrival)
            else:
                waiting.append(arrival)
                if arrival in new:
                    logger.warning(f"Spawn on {arrival.approach.value}{arrival.lane} deferred at t={t:.2f}s, "
                                   f"entry lane occupied")
            blocked.add(lane_key)
        self.queue = waiting
        return spawned
