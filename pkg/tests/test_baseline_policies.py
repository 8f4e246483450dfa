import pytest

from models.data_models import Approach, Movement
from models.scenario_config import SignalSection
from models.traffic_models import VehicleView
from services.baseline_policies import AllWayStopPolicy, PretimedSignalPolicy, stop_profile

HALF = 2.21
V_NOM = 8.0


def _view(vid: int, d_stop: float, v: float = 0.0, approach: Approach = Approach.SOUTH,
          movement: Movement = Movement.STRAIGHT, lane: int = 1) -> VehicleView:
    """Vehicle whose front bumper is d_stop before a bar at s = 59 m"""
    return VehicleView(id=vid, approach=approach, lane=lane, movement=movement, v=v, s=59.0 - d_stop - HALF,
                       s_stop=59.0, s_box_in=60.0, s_box_out=74.0, half_length=HALF)


def _cleared(vid: int, approach: Approach) -> VehicleView:
    return VehicleView(id=vid, approach=approach, lane=1, movement=Movement.STRAIGHT, v=8.0, s=80.0,
                       s_stop=59.0, s_box_in=60.0, s_box_out=74.0, half_length=HALF)


def test_stop_profile():
    assert stop_profile(6.0, 3.0) == pytest.approx(6.0)
    assert stop_profile(-1.0, 3.0) == 0.0


def test_view_distances():
    view = _view(1, 10.0)
    assert view.d_stop == pytest.approx(10.0)
    assert view.d_box == pytest.approx(11.0)
    assert not view.cleared
    assert _cleared(2, Approach.NORTH).cleared


class TestAllWayStop:
    def test_far_vehicle_is_free(self):
        policy = AllWayStopPolicy(3.0, V_NOM)
        decision = policy.decide(0, 0.0, [_view(1, 40.0, v=8.0)])
        assert decision.cap(1) == pytest.approx(stop_profile(40.0, 3.0))
        assert decision.authorized == {1}

    def test_release_after_full_stop(self):
        policy = AllWayStopPolicy(3.0, V_NOM)
        first = policy.decide(0, 0.0, [_view(1, 0.3)])
        assert first.cap(1) == pytest.approx(stop_profile(0.3, 3.0))
        assert first.authorized == set()
        second = policy.decide(25, 0.5, [_view(1, 0.3)])
        assert second.holder == 1
        assert second.cap(1) == float("inf")
        assert second.authorized == {1}

    def test_rolling_vehicle_is_not_queued(self):
        policy = AllWayStopPolicy(3.0, V_NOM)
        for step in range(60):
            decision = policy.decide(step, step * 0.02, [_view(1, 1.0, v=2.0)])
        assert decision.holder is None
        assert policy.queue == {}

    def test_one_vehicle_in_the_box(self):
        policy = AllWayStopPolicy(3.0, V_NOM)
        north, south = _view(1, 0.2, approach=Approach.NORTH), _view(2, 0.2, approach=Approach.SOUTH)
        policy.decide(0, 0.0, [north, south])
        decision = policy.decide(25, 0.5, [north, south])
        assert decision.holder == 1
        assert decision.cap(2) == pytest.approx(stop_profile(0.2, 3.0))
        still = policy.decide(26, 0.52, [_view(1, -5.0, v=3.0, approach=Approach.NORTH), south])
        assert still.holder == 1
        assert 2 in still.caps
        after = policy.decide(27, 0.54, [_cleared(1, Approach.NORTH), south])
        assert after.holder == 2
        assert 2 not in after.caps

    def test_earlier_stop_goes_first(self):
        policy = AllWayStopPolicy(3.0, V_NOM)
        west = _view(1, 0.2, approach=Approach.WEST)
        policy.decide(0, 0.0, [west])
        north = _view(2, 0.2, approach=Approach.NORTH)
        policy.decide(10, 0.2, [west, north])
        decision = policy.decide(25, 0.5, [west, north])
        assert decision.holder == 1


class TestPretimedSignal:
    @pytest.fixture
    def signal(self):
        return PretimedSignalPolicy(SignalSection(), 3.0, V_NOM)

    @pytest.mark.parametrize("t,approach,movement,light", [
        (0.0, Approach.NORTH, Movement.STRAIGHT, "green"),
        (5.0, Approach.SOUTH, Movement.RIGHT, "green"),
        (5.0, Approach.SOUTH, Movement.LEFT, "red"),
        (13.0, Approach.NORTH, Movement.STRAIGHT, "yellow"),
        (14.5, Approach.NORTH, Movement.STRAIGHT, "red"),
        (15.0, Approach.NORTH, Movement.LEFT, "green"),
        (30.0, Approach.EAST, Movement.STRAIGHT, "green"),
        (30.0, Approach.NORTH, Movement.STRAIGHT, "red"),
        (45.0, Approach.WEST, Movement.LEFT, "green"),
        (59.5, Approach.WEST, Movement.LEFT, "red"),
        (61.0, Approach.SOUTH, Movement.STRAIGHT, "green"),
    ])
    def test_phase_plan(self, signal, t, approach, movement, light):
        assert signal.indication(t, approach, movement) == light

    def test_red_holds(self, signal):
        decision = signal.decide(0, 20.0, [_view(1, 5.0, v=3.0)])
        assert decision.cap(1) == pytest.approx(stop_profile(5.0, 3.0))
        assert decision.authorized == set()

    def test_green_is_free(self, signal):
        decision = signal.decide(0, 2.0, [_view(1, 5.0, v=8.0)])
        assert decision.cap(1) == float("inf")
        assert decision.authorized == {1}

    def test_yellow_commits_when_it_cannot_stop(self, signal):
        near = _view(1, 5.0, v=8.0)
        far = _view(2, 40.0, v=8.0)
        decision = signal.decide(0, 12.5, [near, far])
        assert 1 not in decision.caps
        assert decision.cap(2) == pytest.approx(stop_profile(40.0, 3.0))
        later = signal.decide(1, 14.5, [_view(1, -3.0, v=8.0), far])
        assert 1 not in later.caps

    def test_crossing_on_green_commits(self, signal):
        signal.decide(0, 11.0, [_view(1, -0.5, v=8.0)])
        decision = signal.decide(1, 14.5, [_view(1, -4.0, v=8.0)])
        assert 1 not in decision.caps

    def test_overshoot_on_red_stays_held(self, signal):
        decision = signal.decide(0, 20.0, [_view(1, -0.2, v=0.0)])
        assert decision.cap(1) == 0.0
