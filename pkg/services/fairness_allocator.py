"""
Per-step control authority allocation by inequity-aversion utility.
"""
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Deque, Dict, Mapping, Optional

import numpy as np

from models.traffic_models import AllocationRecord
from utils.logger import get_logger

logger = get_logger("fairness_allocator")

WAIT_SCALE = 10.0  # steps until the waiting-time term saturates
URGENCY_SCALE = 10.0  # steps until the urgency term saturates


class AllocationError(Exception):
    """Raised when authority cannot be allocated"""

    def __init__(self, message: str, t: Optional[int] = None):
        super().__init__(message)
        self.t = t


@dataclass(frozen=True)
class FairnessParams:
    alpha1: float = 0.3
    alpha2: float = 0.4
    alpha3: float = 0.3
    beta1: float = 1.5
    beta2: float = 0.5
    delta: float = 0.3
    W: int = 50  # [steps]
    r_threshold: float = 0.5

    def __post_init__(self) -> None:
        assert abs(self.alpha1 + self.alpha2 + self.alpha3 - 1.0) <= 1e-9, "payoff weights must sum to 1"
        assert min(self.alpha1, self.alpha2, self.alpha3) >= 0.0, "payoff weights must be non-negative"
        assert self.beta1 >= self.beta2 >= 0.0, "inequity weights must satisfy beta1 >= beta2 >= 0"
        assert self.W >= 1, "fairness window must be at least one step"
        assert 0.0 < self.r_threshold <= 1.0, "r_threshold must be in (0, 1]"


@dataclass
class LedgerEntry:
    history: Deque[int] = field(default_factory=deque)
    wait_steps: int = 0
    last_control: Optional[int] = None
    count: int = 0


class FairnessLedger:
    """Authority history of every vehicle seen by one allocator"""

    def __init__(self, window: int):
        self.window = window
        self.entries: Dict[int, LedgerEntry] = {}
        self.allocations = 0

    def register(self, vehicle_id: int) -> LedgerEntry:
        entry = self.entries.get(vehicle_id)
        if entry is None:
            entry = self.entries[vehicle_id] = LedgerEntry()
        return entry

    def recent_grants(self, vehicle_id: int, t: int) -> int:
        """Grants at steps t' with t - t' <= W"""
        entry = self.register(vehicle_id)
        while entry.history and t - entry.history[0] > self.window:
            entry.history.popleft()
        return len(entry.history)

    def counts(self) -> Dict[int, int]:
        return {vid: e.count for vid, e in self.entries.items()}

    def grant(self, winner: int, t: int, active) -> None:
        for vid in active:
            entry = self.register(vid)
            if vid == winner:
                entry.history.append(t)
                entry.count += 1
                entry.last_control = t
                entry.wait_steps = 0
            else:
                entry.wait_steps += 1
        self.allocations += 1


def payoff(vehicle_id: int, t: int, ledger: FairnessLedger, params: FairnessParams) -> float:
    """p = alpha1 r + alpha2 w + alpha3 u"""
    entry = ledger.register(vehicle_id)
    w = min(1.0, entry.wait_steps / WAIT_SCALE)
    r = min(1.0, ledger.recent_grants(vehicle_id, t) / params.W)
    if entry.last_control is None:
        u = 1.0
    else:
        u = min(1.0, (t - entry.last_control) / URGENCY_SCALE)
    return params.alpha1 * r + params.alpha2 * w + params.alpha3 * u


def iau(vehicle_id: int, payoffs: Mapping[int, float], v_dev: float, params: FairnessParams) -> float:
    """Inequity-aversion utility"""
    p_i = payoffs[vehicle_id]
    n = len(payoffs)
    if n <= 1:
        return p_i + params.delta * v_dev
    envy = sum(max(p_j - p_i, 0.0) for j, p_j in payoffs.items() if j != vehicle_id)
    guilt = sum(max(p_i - p_j, 0.0) for j, p_j in payoffs.items() if j != vehicle_id)
    return p_i - params.beta1 / (n - 1) * envy - params.beta2 / (n - 1) * guilt + params.delta * v_dev


def velocity_deviation(vehicle_id: int, speeds: Mapping[int, float], v_max: float) -> float:
    mean = sum(speeds.values()) / len(speeds)
    return min(1.0, max(0.0, abs(speeds[vehicle_id] - mean) / v_max))


def allocate(t: int, active: Mapping[int, float], ledger: FairnessLedger, params: FairnessParams,
             rng: np.random.Generator, v_max: float) -> AllocationRecord:
    """
    Grant authority for step t to one of the active vehicles.
    :param active: vehicle id -> current speed
    """
    if not active:
        raise AllocationError(f"no active vehicles at step {t}", t)
    ids = sorted(active)
    for vid in ids:
        ledger.register(vid)

    payoffs = {vid: payoff(vid, t, ledger, params) for vid in ids}
    eligible = [vid for vid in ids if ledger.recent_grants(vid, t) / params.W < params.r_threshold]
    if not eligible:
        eligible = ids

    utilities = {vid: iau(vid, payoffs, velocity_deviation(vid, active, v_max), params) for vid in ids}
    if ledger.allocations == 0:
        winner = ids[int(rng.integers(len(ids)))]
        logger.debug(f"Initial authority assigned at random to vehicle {winner}")
    else:
        winner = max(eligible, key=lambda vid: (utilities[vid], ledger.entries[vid].wait_steps, -vid))

    ledger.grant(winner, t, ids)
    if not math.isfinite(utilities[winner]):
        raise AllocationError(f"non-finite utility for vehicle {winner}", t)
    return AllocationRecord(t=t, winner=winner, eligible_size=len(eligible), winner_iau=utilities[winner])
