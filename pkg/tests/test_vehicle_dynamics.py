import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm

from models.data_models import LinearSystem, PlanningControl, TrackingCommand, VehicleParams, VehicleState
from services.vehicle_dynamics import (
    V_FLOOR,
    DiscretizationError,
    ModelInputError,
    detect_collision,
    discretize,
    linearize_error_dynamics,
    planning_jacobians,
    planning_step_array,
    step_planning_model,
    step_tracking_model,
    vehicle_corners,
    wrap_angle,
)

finite = st.floats(min_value=-50.0, max_value=50.0, allow_nan=False, allow_infinity=False)


class TestStepPlanningModel:
    def test_straight_constant_speed(self):
        x = step_planning_model(VehicleState(0, 0, 0, 10, 0), PlanningControl(0, 0), 0.1)
        assert x == VehicleState(1.0, 0.0, 0.0, 10.0, 0.0)

    def test_rest_is_fixed_point(self):
        x0 = VehicleState()
        assert step_planning_model(x0, PlanningControl(), 0.1) == x0

    def test_motion_along_y(self):
        x = step_planning_model(VehicleState(0, 0, math.pi / 2, 2, 0), PlanningControl(1, 0), 0.5)
        assert x.px == pytest.approx(0.0, abs=1e-12)
        assert x.py == pytest.approx(1.0)
        assert x.theta == pytest.approx(math.pi / 2)
        assert x.v == pytest.approx(2.5)
        assert x.omega == 0.0

    def test_speed_saturates(self, params):
        x = step_planning_model(VehicleState(v=18.0), PlanningControl(a=15.0), 0.1, params)
        assert x.v == params.max_speed
        x = step_planning_model(VehicleState(v=-18.0), PlanningControl(a=-15.0), 0.1, params)
        assert x.v == -params.max_speed

    def test_heading_is_wrapped(self):
        x = step_planning_model(VehicleState(theta=3.1, omega=1.0), PlanningControl(), 0.1)
        assert -math.pi < x.theta <= math.pi
        assert x.theta == pytest.approx(3.2 - 2 * math.pi)

    @pytest.mark.parametrize("bad", [
        VehicleState(px=math.nan),
        VehicleState(v=math.inf),
    ])
    def test_non_finite_state_rejected(self, bad):
        with pytest.raises(ModelInputError):
            step_planning_model(bad, PlanningControl(), 0.1)

    def test_non_finite_control_and_step_rejected(self):
        with pytest.raises(ModelInputError):
            step_planning_model(VehicleState(), PlanningControl(a=math.nan), 0.1)
        with pytest.raises(ModelInputError):
            step_planning_model(VehicleState(), PlanningControl(), 0.0)

    @settings(max_examples=200, deadline=None)
    @given(px=finite, py=finite, theta=st.floats(-1.0, 1.0), v=st.floats(-15.0, 15.0),
           omega=st.floats(-1.0, 1.0), a=st.floats(-5.0, 5.0), alpha=st.floats(-5.0, 5.0))
    def test_matches_hand_coded_euler_map(self, px, py, theta, v, omega, a, alpha):
        h = 0.1
        x = step_planning_model(VehicleState(px, py, theta, v, omega), PlanningControl(a, alpha), h)
        assert x.px == px + h * v * math.cos(theta)
        assert x.py == py + h * v * math.sin(theta)
        assert x.theta == theta + h * omega
        assert x.v == v + h * a
        assert x.omega == omega + h * alpha


class TestJacobians:
    def test_match_central_differences(self, rng):
        h, eps = 0.1, 1e-5
        for _ in range(100):
            x = np.array([*rng.uniform(-20, 20, 2), rng.uniform(-3, 3), rng.uniform(0.5, 15), rng.uniform(-1, 1)])
            u = rng.uniform(-3, 3, 2)
            A, B = planning_jacobians(x, u, h)
            A_fd = np.zeros((5, 5))
            B_fd = np.zeros((5, 2))
            for i in range(5):
                dx = np.zeros(5)
                dx[i] = eps
                diff = planning_step_array(x + dx, u, h, 100.0) - planning_step_array(x - dx, u, h, 100.0)
                diff[2] = wrap_angle(diff[2])
                A_fd[:, i] = diff / (2 * eps)
            for j in range(2):
                du = np.zeros(2)
                du[j] = eps
                diff = planning_step_array(x, u + du, h, 100.0) - planning_step_array(x, u - du, h, 100.0)
                B_fd[:, j] = diff / (2 * eps)
            assert np.allclose(A, A_fd, rtol=1e-5, atol=1e-7)
            assert np.allclose(B, B_fd, rtol=1e-5, atol=1e-7)


class TestTrackingModel:
    def test_straight_command_keeps_heading(self, params):
        x = step_tracking_model(VehicleState(v=8.0), TrackingCommand(0.0, 1.0), params, 0.02)
        assert x.theta == 0.0
        assert x.v == pytest.approx(8.02)
        assert x.omega == 0.0

    def test_yaw_rate_follows_kinematic_steer(self, params):
        delta = 0.1
        x = step_tracking_model(VehicleState(v=8.0), TrackingCommand(delta, 0.0), params, 0.02)
        assert x.omega == pytest.approx(8.0 * math.tan(delta) / params.L)


class TestLinearization:
    def test_symmetric_vehicle_has_no_coupling_terms(self, params):
        sys = linearize_error_dynamics(params, 10.0)
        assert sys.Ac[1, 3] == 0.0
        assert sys.Ac[3, 1] == 0.0

    def test_input_matrix_matches_table_values(self, params):
        sys = linearize_error_dynamics(params, 10.0)
        assert sys.Bc[1, 0] == pytest.approx(136.399, abs=1e-3)
        assert sys.Bc[3, 0] == pytest.approx(52.718, abs=1e-3)
        assert sys.Bc.shape == (4, 1)

    def test_state_matrix_entries(self):
        p = VehicleParams(lf=1.0, lr=1.4, cf=120000.0, cr=140000.0)
        v = 7.0
        Ac = linearize_error_dynamics(p, v).Ac
        assert Ac[1, 1] == pytest.approx(-(p.cf + p.cr) / (p.m * v))
        assert Ac[1, 2] == pytest.approx((p.cf + p.cr) / p.m)
        assert Ac[1, 3] == pytest.approx((p.lr * p.cr - p.lf * p.cf) / (p.m * v))
        assert Ac[3, 1] == pytest.approx((p.lr * p.cr - p.lf * p.cf) / (p.Iz * v))
        assert Ac[3, 2] == pytest.approx((p.lf * p.cf - p.lr * p.cr) / p.Iz)
        assert Ac[3, 3] == pytest.approx(-(p.lf ** 2 * p.cf + p.lr ** 2 * p.cr) / (p.Iz * v))
        assert list(Ac[0]) == [0.0, 1.0, 0.0, 0.0]
        assert list(Ac[2]) == [0.0, 0.0, 0.0, 1.0]

    def test_doubling_speed_halves_damping_entry(self, params):
        a10 = linearize_error_dynamics(params, 10.0).Ac[1, 1]
        a20 = linearize_error_dynamics(params, 20.0).Ac[1, 1]
        assert a20 == pytest.approx(0.5 * a10)

    @pytest.mark.parametrize("v", [0.0, -3.0, 0.1])
    def test_low_speed_is_clamped_and_flagged(self, params, v):
        sys = linearize_error_dynamics(params, v)
        assert sys.speed_clamped
        assert sys.speed == V_FLOOR
        assert np.all(np.isfinite(sys.Ac))


class TestDiscretize:
    def test_zero_dynamics(self):
        Bc = np.array([[0.0], [2.0], [0.0], [1.0]])
        d = discretize(LinearSystem(Ac=np.zeros((4, 4)), Bc=Bc), 0.02)
        assert np.array_equal(d.Ad, np.eye(4))
        assert np.allclose(d.Bd, 0.02 * Bc)

    def test_scalar_closed_form(self):
        a, Ts = -3.0, 0.1
        d = discretize(LinearSystem(Ac=np.array([[a]]), Bc=np.array([[1.0]])), Ts)
        assert d.Ad[0, 0] == pytest.approx((1 + a * Ts / 2) / (1 - a * Ts / 2))

    def test_singular_transform_raises(self):
        Ts = 0.1
        with pytest.raises(DiscretizationError) as err:
            discretize(LinearSystem(Ac=np.array([[2.0 / Ts]]), Bc=np.array([[1.0]])), Ts)
        assert err.value.condition > 1e12 or not math.isfinite(err.value.condition)

    def test_close_to_matrix_exponential(self, params):
        Ac = linearize_error_dynamics(params, 10.0).Ac
        sys = LinearSystem(Ac=Ac, Bc=np.zeros((4, 1)))
        d = discretize(sys, 0.02)
        # fast lateral pole at about -27/s makes the Ts=0.02 gap visible in the coupling entry
        assert np.max(np.abs(d.Ad - expm(Ac * 0.02))) < 0.2
        assert np.max(np.abs(d.Ad[[0, 2, 3]] - expm(Ac * 0.02)[[0, 2, 3]])) < 0.02

    def test_error_against_exponential_is_third_order(self, params):
        Ac = linearize_error_dynamics(params, 10.0).Ac
        sys = LinearSystem(Ac=Ac, Bc=np.zeros((4, 1)))
        errors = []
        for Ts in (0.002, 0.001):
            errors.append(np.max(np.abs(discretize(sys, Ts).Ad - expm(Ac * Ts))))
        assert 6.5 < errors[0] / errors[1] < 9.5

    def test_small_step_limits_are_linear(self, params):
        sys = linearize_error_dynamics(params, 10.0)
        d1, d2 = discretize(sys, 1e-4), discretize(sys, 1e-5)
        r1 = np.linalg.norm(d1.Ad - np.eye(4)) / 1e-4
        r2 = np.linalg.norm(d2.Ad - np.eye(4)) / 1e-5
        assert r1 == pytest.approx(r2, rel=1e-2)
        assert np.linalg.norm(d1.Bd) / 1e-4 == pytest.approx(np.linalg.norm(d2.Bd) / 1e-5)

    def test_tustin_input_flag(self, params):
        sys = linearize_error_dynamics(params, 10.0)
        euler = discretize(sys, 0.02)
        tustin = discretize(sys, 0.02, tustin_input=True)
        assert np.allclose(euler.Ad, tustin.Ad)
        M = np.eye(4) - 0.01 * sys.Ac
        assert np.allclose(tustin.Bd, 0.02 * np.linalg.solve(M, sys.Bc))


def _rasterized_overlap(a: VehicleState, b: VehicleState, p: VehicleParams, step: float = 0.02) -> bool:
    corners = vehicle_corners(a, p)
    xs = np.arange(corners[:, 0].min(), corners[:, 0].max() + step, step)
    ys = np.arange(corners[:, 1].min(), corners[:, 1].max() + step, step)
    gx, gy = np.meshgrid(xs, ys)
    pts = np.column_stack([gx.ravel(), gy.ravel()])

    def inside(state):
        c, s = math.cos(state.theta), math.sin(state.theta)
        rel = pts - np.array([state.px, state.py])
        lx = rel[:, 0] * c + rel[:, 1] * s
        ly = -rel[:, 0] * s + rel[:, 1] * c
        return (np.abs(lx) < p.length / 2) & (np.abs(ly) < p.width / 2)

    return bool(np.any(inside(a) & inside(b)))


class TestCollision:
    def test_identical_pose_collides(self, params):
        x = VehicleState(3.0, -2.0, 0.4, 5.0, 0.0)
        assert detect_collision(x, params, x, params)

    def test_far_apart(self, params):
        assert not detect_collision(VehicleState(), params, VehicleState(px=100.0), params)

    def test_touching_edges_do_not_collide(self, params):
        a = VehicleState()
        b = VehicleState(px=4.42)
        assert not detect_collision(a, params, b, params)
        assert detect_collision(a, params, VehicleState(px=4.41), params)

    def test_rotated_overlap(self, params):
        a = VehicleState()
        b = VehicleState(px=2.0, py=1.0, theta=math.pi / 2)
        assert detect_collision(a, params, b, params)

    @settings(max_examples=300, deadline=None)
    @given(st.floats(-8, 8), st.floats(-8, 8), st.floats(-math.pi, math.pi), st.floats(-math.pi, math.pi))
    def test_symmetric(self, dx, dy, ta, tb):
        p = VehicleParams()
        a = VehicleState(theta=ta)
        b = VehicleState(px=dx, py=dy, theta=tb)
        assert detect_collision(a, p, b, p) == detect_collision(b, p, a, p)

    def test_agrees_with_rasterized_oracle(self, params, rng):
        grown = VehicleParams(length=params.length + 0.1, width=params.width + 0.1)
        shrunk = VehicleParams(length=params.length - 0.1, width=params.width - 0.1)
        checked = 0
        while checked < 200:
            a = VehicleState(theta=rng.uniform(-math.pi, math.pi))
            b = VehicleState(px=rng.uniform(-5, 5), py=rng.uniform(-5, 5), theta=rng.uniform(-math.pi, math.pi))
            if detect_collision(a, grown, b, grown) != detect_collision(a, shrunk, b, shrunk):
                continue
            assert detect_collision(a, params, b, params) == _rasterized_overlap(a, b, params)
            checked += 1
